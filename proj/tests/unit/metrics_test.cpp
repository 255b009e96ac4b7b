#include <gtest/gtest.h>

#include <cmath>

#include "xbm/metrics/judges.hpp"
#include "xbm/util/error.hpp"
#include "xbm/world/vocab.hpp"

namespace xbm::metrics {
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

Corpora small_corpora() {
  SceneSpec spec;
  spec.image_size = 16;
  return build_corpora(spec, CorpusPlan::from_sizes(9, {24, 8, 4, 12, 8}), 36);
}

std::vector<const Example*> pointers(const Split& s) {
  std::vector<const Example*> out;
  for (const auto& e : s.examples) out.push_back(&e);
  return out;
}

JudgeConfig quick_judges() {
  JudgeConfig c;
  c.epochs = 1;
  c.batch_size = 8;
  return c;
}

TEST(DualEncoder, EmbeddingsAreUnitNorm) {
  auto corpora = small_corpora();
  Judges j(small_config(), 1);
  auto batch = pointers(corpora[SplitId::pretrain]);
  std::vector<std::vector<int>> caps;
  for (auto* e : batch) caps.push_back(e->caption);
  ad::Tape t(false);
  const auto img = j.dual.image_embed(t, t.constant(train::image_tensor(batch))).value();
  const auto txt = j.dual.text_embed(t, nn::one_hot(t, caps, 36, j.cfg.vocab_size)).value();
  for (const auto* m : {&img, &txt})
    for (std::int64_t b = 0; b < m->dim(0); ++b) {
      double s = 0.0;
      for (std::int64_t k = 0; k < m->dim(1); ++k) s += (*m)[b * m->dim(1) + k] * (*m)[b * m->dim(1) + k];
      EXPECT_NEAR(std::sqrt(s), 1.0, 1e-9);
    }
}

TEST(ContrastiveLoss, IdenticalEmbeddingsGiveLogBatch) {
  ad::Tape t;
  ad::Tensor e(ad::Shape{4, 2});
  for (int b = 0; b < 4; ++b) e[b * 2] = 1.0;
  EXPECT_NEAR(contrastive_loss(t.constant(e), t.constant(e), 0.07).value().item(), std::log(4.0), 1e-12);
}

TEST(ContrastiveLoss, OrthogonalMatchedPairsAreNearZero) {
  ad::Tape t;
  ad::Tensor e(ad::Shape{3, 3});
  for (int b = 0; b < 3; ++b) e[b * 3 + b] = 1.0;
  const double expect = std::log(1.0 + 2.0 * std::exp(-1.0 / 0.07));
  EXPECT_NEAR(contrastive_loss(t.constant(e), t.constant(e), 0.07).value().item(), expect, 1e-12);
}

TEST(Alignment, InRangeAndEmptyIsZero) {
  auto corpora = small_corpora();
  Judges j(small_config(), 1);
  auto batch = pointers(corpora[SplitId::pretrain]);
  std::vector<std::vector<int>> texts;
  for (auto* e : batch) texts.push_back(e->caption);
  texts[0] = {Vocabulary::kEos};
  const auto a = alignment_scores(j, batch, texts);
  EXPECT_EQ(a[0], 0.0);
  for (double v : a) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Perplexity, UniformLanguageModelGivesVocabularySize) {
  Judges j(small_config(), 1);
  for (auto* p : j.lm_params())
    if (p->name == "judge.lm.out.weight" || p->name == "judge.lm.out.bias")
      for (auto& x : p->value.data()) x = 0.0;
  auto text = Vocabulary::standard().encode("a small red circle in the top left");
  text.push_back(Vocabulary::kEos);
  EXPECT_NEAR(perplexity(j.lm, text), 34.0, 1e-9);
}

TEST(Perplexity, MatchesHandComputedNll) {
  Judges j(small_config(), 3);
  const int red = Vocabulary::standard().id("red");
  const std::vector<int> text{red, Vocabulary::kEos};
  ad::Tape t(false);
  auto cache = j.lm.begin(t, ad::Var{}, 1);
  const std::vector<int> bos{Vocabulary::kBos}, r{red};
  const auto z0 = ad::log_softmax(j.lm.step(t, cache, j.lm.embed_hard(t, bos, 1, 1, 0))).value();
  const auto z1 = ad::log_softmax(j.lm.step(t, cache, j.lm.embed_hard(t, r, 1, 1, 1))).value();
  const double expect = std::exp(-(z0[red] + z1[Vocabulary::kEos]) / 2.0);
  EXPECT_NEAR(perplexity(j.lm, text), expect, 1e-9);
  EXPECT_GE(perplexity(j.lm, text), 1.0);
}

TEST(Perplexity, EmptyTextIsAnError) {
  Judges j(small_config(), 1);
  EXPECT_THROW(perplexity(j.lm, std::vector<int>{}), Error);
  EXPECT_THROW(perplexity(j.lm, std::vector<int>{Vocabulary::kEos}), Error);
}

TEST(Judges, IdenticalSeedsGiveIdenticalChecksums) {
  auto corpora = small_corpora();
  const auto& pre = corpora[SplitId::pretrain].examples;
  auto a = train_judges(pre, small_config(), quick_judges(), 4);
  auto b = train_judges(pre, small_config(), quick_judges(), 4);
  auto c = train_judges(pre, small_config(), quick_judges(), 5);
  EXPECT_EQ(a.checksum(), b.checksum());
  EXPECT_NE(a.checksum(), c.checksum());
  auto restored = Judges::from_checkpoint(a.to_checkpoint());
  EXPECT_EQ(restored.checksum(), a.checksum());
}

TEST(Judges, RequireCaptions) {
  auto corpora = small_corpora();
  EXPECT_THROW(train_judges(corpora[SplitId::train].examples, small_config(), quick_judges(), 4), Error);
}

TEST(UniqueTokenRatio, CountsDistinctWords) {
  const auto& v = Vocabulary::standard();
  std::vector<std::vector<int>> e{v.encode("red red red red"), v.encode("a red circle")};
  e[0].push_back(Vocabulary::kEos);
  EXPECT_NEAR(unique_token_ratio(e), (0.25 + 1.0) / 2.0, 1e-12);
  EXPECT_EQ(unique_token_ratio(std::vector<std::vector<int>>{{Vocabulary::kEos}}), 0.0);
}

TEST(Degeneration, FiresOnEitherCondition) {
  EXPECT_TRUE(degeneration(0.1, 2.0, 2.0).fired);
  EXPECT_TRUE(degeneration(0.5, 6.1, 2.0).fired);
  EXPECT_FALSE(degeneration(0.5, 5.9, 2.0).fired);
}

TEST(Evaluate, DeterministicAndAccuracyMatchesDirectCount) {
  auto corpora = small_corpora();
  Judges j(small_config(), 1);
  train::XbmModel m(train::Captioner(small_config(), 2), nn::ClassifierMode::multimodal, 8, 3);
  const auto& test = corpora[SplitId::test].examples;
  EvalOptions o;
  o.beam_width = 2;
  o.chunk = 5;
  const auto r1 = evaluate(m, test, j, "row", o);
  const auto r2 = evaluate(m, test, j, "row", o);
  EXPECT_EQ(report_line(r1), report_line(r2));
  int correct = 0;
  for (const auto& ex : test) {
    const Example* one[] = {&ex};
    const auto e = m.explain(one, 2);
    correct += m.classify(one, e).labels[0] == ex.label;
  }
  EXPECT_DOUBLE_EQ(r1.test_acc, static_cast<double>(correct) / static_cast<double>(test.size()));
  EXPECT_EQ(r1.examples, 12);
  EXPECT_EQ(r1.perplexity_count + r1.empty_explanations, 12);
  EXPECT_EQ(r1.judge_checksum, j.checksum());
  if (r1.perplexity_count > 0) {
    EXPECT_GE(r1.perplexity, 1.0);
  }
}

TEST(Report, HeaderNamesColumnsInOrder) {
  const auto h = report_header();
  EXPECT_EQ(h.rfind("row_label\ttest_acc\talignment\tperplexity\tpixel_acc\tmiou\tmap\tjudge_checksum", 0), 0u);
  EvalRow r;
  r.label = "xbm";
  const auto line = report_line(r);
  EXPECT_EQ(std::count(line.begin(), line.end(), '\t'), std::count(h.begin(), h.end(), '\t'));
}

}  // namespace
}  // namespace xbm::metrics
