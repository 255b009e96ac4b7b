#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "gradcheck.hpp"
#include "xbm/ad/optim.hpp"
#include "xbm/nn/checkpoint.hpp"
#include "xbm/train/losses.hpp"
#include "xbm/train/xbm.hpp"
#include "xbm/util/error.hpp"
#include "xbm/world/vocab.hpp"

namespace xbm::train {
namespace {

nn::ModelConfig small_config() {
  nn::ModelConfig c;
  c.d_model = 8;
  c.heads = 2;
  c.depth = 1;
  c.mlp_hidden = 16;
  c.image_size = 16;
  c.patch = 8;
  return c;
}

SceneSpec small_spec() {
  SceneSpec s;
  s.image_size = 16;
  return s;
}

Corpora small_corpora(std::uint64_t n_train = 16) {
  return build_corpora(small_spec(), CorpusPlan::from_sizes(7, {16, n_train, 8, 8, 4}), 36);
}

std::vector<const Example*> pointers(const Split& s, std::size_t n) {
  std::vector<const Example*> out;
  for (std::size_t i = 0; i < n && i < s.examples.size(); ++i) out.push_back(&s.examples[i]);
  return out;
}

std::vector<ad::Tensor> values(const std::vector<ad::Parameter*>& ps) {
  std::vector<ad::Tensor> out;
  for (auto* p : ps) out.push_back(p->value);
  return out;
}

bool same(const std::vector<ad::Parameter*>& ps, const std::vector<ad::Tensor>& ref) {
  for (std::size_t i = 0; i < ps.size(); ++i)
    if (!std::ranges::equal(ps[i]->value.data(), ref[i].data())) return false;
  return true;
}

TEST(ClassificationLoss, UniformLogitsGiveLogK) {
  ad::Tape t;
  ad::Var z = t.constant(ad::Tensor(ad::Shape{3, 8}));
  const std::vector<int> y{0, 5, 7};
  EXPECT_NEAR(classification_loss(z, y).value().item(), std::log(8.0), 1e-12);
}

TEST(ClassificationLoss, LargeMarginIsNearZero) {
  ad::Tensor z(ad::Shape{1, 8});
  z[2] = 50.0;
  ad::Tape t;
  const std::vector<int> y{2};
  EXPECT_LT(classification_loss(t.constant(z), y).value().item(), 1e-20);
}

TEST(ClassificationLoss, RejectsOutOfRangeLabel) {
  ad::Tape t;
  const std::vector<int> y{8};
  EXPECT_THROW(classification_loss(t.constant(ad::Tensor(ad::Shape{1, 8})), y), Error);
}

TEST(DistillationLoss, MatchesSequenceLogProbPerToken) {
  Captioner cap(small_config(), 3);
  auto corpora = small_corpora();
  auto batch = pointers(corpora[SplitId::pretrain], 4);
  std::vector<std::vector<int>> refs;
  for (const Example* e : batch) refs.push_back(e->caption);
  ad::Tape t;
  ad::Var mem = cap.encoder(t, t.constant(image_tensor(batch)));
  const double loss = distillation_loss(cap.decoder, t, mem, refs).value().item();
  const auto lp = decode::sequence_log_prob(cap.decoder, t, mem, refs);
  double expect = 0.0;
  for (std::size_t i = 0; i < refs.size(); ++i) expect += -lp[i] / static_cast<double>(refs[i].size());
  EXPECT_NEAR(loss, expect / 4.0, 1e-9);
}

TEST(DistillationLoss, DecreasesMonotonicallyOnAFixedBatch) {
  Captioner teacher(small_config(), 11);
  Captioner student(small_config(), 12);
  auto corpora = small_corpora();
  auto batch = pointers(corpora[SplitId::train], 4);
  const auto refs = teacher.describe(batch, {1, 36, Vocabulary::kEos});
  auto params = student.params();
  ad::AdamW opt(params, {0.9, 0.999, 1e-8, 0.0});
  double prev = INFINITY;
  for (int i = 0; i < 200; ++i) {
    ad::Tape t;
    ad::Var mem = student.encoder(t, t.constant(image_tensor(batch)));
    ad::Var loss = distillation_loss(student.decoder, t, mem, refs);
    const double v = loss.value().item();
    ASSERT_LT(v, prev) << "step " << i;
    prev = v;
    t.backward(loss);
    opt.step(1e-3);
  }
}

nn::ModelConfig kl_config(int vocab, int len) {
  nn::ModelConfig c = small_config();
  c.vocab_size = vocab;
  c.max_len = len;
  return c;
}

ad::Tensor random_memory(std::uint64_t seed, int rows) {
  CounterRng rng(seed, 5);
  return testing::random_tensor(rng, {rows, 4, 8}, -1.0, 1.0);
}

TEST(KlExact, IsZeroForIdenticalModels) {
  const auto c = kl_config(4, 3);
  nn::ExplanationDecoder a("d", c, 1, true, false);
  const auto mem = random_memory(1, 2);
  EXPECT_NEAR(kl_exact(a, mem, a, mem, 3), 0.0, 1e-12);
}

TEST(KlExact, IsNonNegativeOverRandomPairs) {
  const auto c = kl_config(4, 3);
  for (std::uint64_t s = 0; s < 100; ++s) {
    nn::ExplanationDecoder p("d", c, 2 * s + 1, true, false);
    nn::ExplanationDecoder q("d", c, 2 * s + 2, true, false);
    const auto mem = random_memory(s, 1);
    EXPECT_GE(kl_exact(p, mem, q, mem, 3), -1e-12) << "pair " << s;
  }
}

TEST(KlExact, BernoulliClosedForm) {
  const auto c = kl_config(2, 1);
  nn::ExplanationDecoder p("d", c, 21, true, false);
  nn::ExplanationDecoder q("d", c, 22, true, false);
  const auto mem = random_memory(9, 1);
  auto first_dist = [&](nn::ExplanationDecoder& d) {
    ad::Tape t(false);
    auto cache = d.begin(t, t.constant(mem), 1);
    const std::vector<int> bos{Vocabulary::kBos};
    const ad::Tensor z = d.step(t, cache, d.embed_hard(t, bos, 1, 1)).value();
    const double p1 = 1.0 / (1.0 + std::exp(z[0] - z[1]));
    return p1;
  };
  const double sp = first_dist(p), sq = first_dist(q);
  const double expect = sq * std::log(sq / sp) + (1 - sq) * std::log((1 - sq) / (1 - sp));
  EXPECT_GT(expect, 0.0);
  EXPECT_NEAR(kl_exact(p, mem, q, mem, 1), expect, 1e-10);
}

TEST(KlExact, RejectsTooManySequences) {
  const auto c = kl_config(34, 4);
  nn::ExplanationDecoder a("d", c, 1, true, false);
  const auto mem = random_memory(1, 1);
  EXPECT_THROW(kl_exact(a, mem, a, mem, 4), Error);
}

TEST(KlExact, DistillationOnTeacherBeamOutputReducesKl) {
  const auto c = kl_config(4, 3);
  for (std::uint64_t init = 0; init < 3; ++init) {
    const auto mem = random_memory(init, 1);
    nn::ExplanationDecoder teacher("d", c, 100 + init, true, false);
    nn::ExplanationDecoder student("d", c, 200 + init, true, false);
    std::vector<ad::Parameter*> tp;
    teacher.collect(tp);
    // A peaked teacher, as after captioning pretraining.
    for (auto* p : tp)
      if (p->name == "d.out.weight")
        for (auto& x : p->value.data()) x *= 5.0;
    const double before = kl_exact(student, mem, teacher, mem, 3);
    std::vector<std::vector<int>> refs;
    {
      ad::Tape t(false);
      for (auto& h : decode::beam_search(teacher, t, t.constant(mem), 1, {1, 3, -1})) refs.push_back(h.tokens);
    }
    std::vector<ad::Parameter*> ps;
    student.collect(ps);
    ad::AdamW opt(ps, {0.9, 0.999, 1e-8, 0.0});
    for (int i = 0; i < 100; ++i) {
      ad::Tape t;
      t.backward(distillation_loss(student, t, t.constant(mem), refs));
      opt.step(1e-3);
    }
    EXPECT_LT(kl_exact(student, mem, teacher, mem, 3), before) << "init " << init;
  }
}

TEST(L2sp, ZeroForIdenticalTreesAndDeltaSquaredForOneShift) {
  Captioner a(small_config(), 4);
  Captioner b(a);
  auto pa = a.params();
  auto pb = b.params();
  {
    ad::Tape t;
    EXPECT_EQ(l2sp(t, pa, pb).value().item(), 0.0);
  }
  pa[3]->value[0] += 0.25;
  ad::Tape t;
  EXPECT_NEAR(l2sp(t, pa, pb).value().item(), 0.0625, 1e-15);
}

TEST(L2sp, GradientIsTwiceTheDisplacement) {
  Captioner a(small_config(), 4);
  Captioner b(small_config(), 5);
  auto pa = a.params();
  auto pb = b.params();
  for (auto* p : pa) p->zero_grad();
  ad::Tape t;
  t.backward(l2sp(t, pa, pb));
  for (std::size_t i = 0; i < pa.size(); ++i)
    for (std::int64_t j = 0; j < pa[i]->value.size(); ++j)
      ASSERT_NEAR(pa[i]->grad[j], 2.0 * (pa[i]->value[j] - pb[i]->value[j]), 1e-12) << pa[i]->name;
}

TEST(L2sp, RejectsMismatchedTrees) {
  Captioner a(small_config(), 4);
  auto pa = a.params();
  auto enc = a.encoder_params();
  ad::Tape t;
  EXPECT_THROW(l2sp(t, pa, enc), Error);
}

struct Fixture {
  Fixture() : corpora(small_corpora()), teacher(small_config(), 31) {}
  Corpora corpora;
  Captioner teacher;
};

TrainConfig quick_config() {
  TrainConfig c;
  c.batch_size = 4;
  c.epochs = 1;
  c.beam_width = 2;
  c.anneal_rate = 0.05;
  return c;
}

TEST(TrainStep, LambdaZeroMakesTotalEqualClassification) {
  Fixture f;
  XbmModel m(f.teacher, nn::ClassifierMode::multimodal, 8, 1);
  auto cfg = quick_config();
  cfg.lambda = 0.0;
  XbmTrainer tr(m, cfg, 10);
  const auto lb = tr.step(pointers(f.corpora[SplitId::train], 4), 0);
  EXPECT_GT(lb.reg, 0.0);
  EXPECT_EQ(lb.total, lb.cls);
}

TEST(TrainStep, FrozenBaselineUpdatesOnlyTheClassifier) {
  Fixture f;
  XbmModel m(f.teacher, nn::ClassifierMode::multimodal, 8, 1);
  auto cfg = quick_config();
  cfg.freeze_captioner = true;
  cfg.regularizer = Regularizer::none;
  const auto student0 = values(m.student.params());
  const auto theta0 = values(m.classifier_params());
  XbmTrainer tr(m, cfg, 10);
  for (int i = 0; i < 3; ++i) tr.step(pointers(f.corpora[SplitId::train], 4), 0);
  EXPECT_TRUE(same(m.student.params(), student0));
  EXPECT_FALSE(same(m.classifier_params(), theta0));
}

TEST(TrainStep, ZeroLearningRateLeavesEverythingUnchanged) {
  Fixture f;
  XbmModel m(f.teacher, nn::ClassifierMode::multimodal, 8, 1);
  auto cfg = quick_config();
  cfg.lr = 0.0;
  const auto student0 = values(m.student.params());
  const auto theta0 = values(m.classifier_params());
  XbmTrainer tr(m, cfg, 10);
  for (int i = 0; i < 3; ++i) {
    const auto lb = tr.step(pointers(f.corpora[SplitId::train], 4), 0);
    EXPECT_TRUE(std::isfinite(lb.cls) && std::isfinite(lb.reg) && std::isfinite(lb.total));
  }
  EXPECT_TRUE(same(m.student.params(), student0));
  EXPECT_TRUE(same(m.classifier_params(), theta0));
}

TEST(TrainStep, TeacherStaysBitIdentical) {
  Fixture f;
  XbmModel m(f.teacher, nn::ClassifierMode::multimodal, 8, 1);
  const auto teacher0 = values(m.teacher.params());
  for (Regularizer r : {Regularizer::explanation_distillation, Regularizer::l2sp}) {
    auto cfg = quick_config();
    cfg.regularizer = r;
    XbmTrainer tr(m, cfg, 10);
    for (int i = 0; i < 2; ++i) tr.step(pointers(f.corpora[SplitId::train], 4), 0);
  }
  EXPECT_TRUE(same(m.teacher.params(), teacher0));
  EXPECT_FALSE(same(m.student.params(), teacher0));
}

TEST(TrainStep, ReferencesAreCachedBySeed) {
  Fixture f;
  XbmModel m(f.teacher, nn::ClassifierMode::multimodal, 8, 1);
  XbmTrainer tr(m, quick_config(), 10);
  auto batch = pointers(f.corpora[SplitId::train], 4);
  const auto a = tr.references(batch);
  const auto b = tr.references(batch);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, f.teacher.describe(batch, {2, 36, Vocabulary::kEos}));
}

TEST(TrainStep, ClippingIsCounted) {
  Fixture f;
  XbmModel m(f.teacher, nn::ClassifierMode::multimodal, 8, 1);
  auto cfg = quick_config();
  cfg.grad_clip = 1e-9;
  XbmTrainer tr(m, cfg, 10);
  tr.step(pointers(f.corpora[SplitId::train], 4), 0);
  EXPECT_EQ(tr.clipped_steps(), 1);
}

TEST(TrainXbm, ZeroEpochsReturnsInitialState) {
  Fixture f;
  XbmModel m(f.teacher, nn::ClassifierMode::multimodal, 8, 1);
  const auto student0 = values(m.student.params());
  const auto theta0 = values(m.classifier_params());
  auto cfg = quick_config();
  cfg.epochs = 0;
  const auto r = train_xbm(m, f.corpora[SplitId::train].examples, f.corpora[SplitId::val].examples, cfg);
  EXPECT_TRUE(r.epochs.empty());
  EXPECT_EQ(r.steps, 0);
  EXPECT_TRUE(same(m.student.params(), student0));
  EXPECT_TRUE(same(m.classifier_params(), theta0));
}

TEST(TrainXbm, IsDeterministicGivenSeeds) {
  Fixture f;
  auto run = [&] {
    XbmModel m(f.teacher, nn::ClassifierMode::multimodal, 8, 1);
    auto cfg = quick_config();
    cfg.epochs = 2;
    const auto r = train_xbm(m, f.corpora[SplitId::train].examples, f.corpora[SplitId::val].examples, cfg);
    std::vector<double> out;
    for (const auto& e : r.epochs) out.insert(out.end(), {e.cls, e.reg, e.total, e.val_acc, e.tau});
    for (auto* p : m.classifier_params()) out.insert(out.end(), p->value.data().begin(), p->value.data().end());
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(TrainXbm, MaxStepsCapsTheRun) {
  Fixture f;
  XbmModel m(f.teacher, nn::ClassifierMode::text, 8, 1);
  auto cfg = quick_config();
  cfg.epochs = 5;
  cfg.max_steps = 3;
  const auto r = train_xbm(m, f.corpora[SplitId::train].examples, f.corpora[SplitId::val].examples, cfg);
  EXPECT_EQ(r.steps, 3);
  EXPECT_EQ(r.epochs.size(), 1u);
}

TEST(TrainConfig, RejectsOutOfRangeValues) {
  TrainConfig c;
  c.lambda = -1.0;
  EXPECT_THROW(c.validate(), Error);
  c = TrainConfig{};
  c.tau_min = 0.0;
  EXPECT_THROW(c.validate(), Error);
  c = TrainConfig{};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), Error);
  EXPECT_THROW(parse_regularizer("dropout"), Error);
}

TEST(Pretrain, ZeroEpochsLeavesParametersAtInit) {
  auto corpora = small_corpora();
  Captioner a(small_config(), 8);
  const auto init = values(a.params());
  PretrainConfig pc;
  pc.epochs = 0;
  EXPECT_TRUE(pretrain_captioner(a, corpora[SplitId::pretrain].examples, pc, 1).empty());
  EXPECT_TRUE(same(a.params(), init));
}

TEST(Pretrain, RequiresCaptions) {
  auto corpora = small_corpora();
  Captioner a(small_config(), 8);
  PretrainConfig pc;
  pc.epochs = 1;
  EXPECT_THROW(pretrain_captioner(a, corpora[SplitId::train].examples, pc, 1), Error);
}

TEST(Pretrain, LossDecreasesAndIsDeterministic) {
  auto corpora = small_corpora();
  auto run = [&] {
    Captioner a(small_config(), 8);
    PretrainConfig pc;
    pc.epochs = 4;
    pc.batch_size = 4;
    return pretrain_captioner(a, corpora[SplitId::pretrain].examples, pc, 1);
  };
  const auto r1 = run();
  const auto r2 = run();
  ASSERT_EQ(r1.size(), 4u);
  EXPECT_LT(r1.back().loss, r1.front().loss);
  for (std::size_t i = 0; i < r1.size(); ++i) EXPECT_EQ(r1[i].loss, r2[i].loss);
}

TEST(EpochOrder, IsAPermutationThatVariesByEpoch) {
  const auto a = epoch_order(50, 3, 0);
  const auto b = epoch_order(50, 3, 1);
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(sorted[i], i);
  EXPECT_NE(a, b);
  EXPECT_EQ(a, epoch_order(50, 3, 0));
}

}  // namespace
}  // namespace xbm::train
