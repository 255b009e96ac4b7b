#include "xbm/train/xbm.hpp"

#include <cmath>
#include <sstream>

#include "xbm/ad/optim.hpp"
#include "xbm/train/losses.hpp"
#include "xbm/util/error.hpp"
#include "xbm/util/rng.hpp"
#include "xbm/world/vocab.hpp"

namespace xbm::train {

const char* regularizer_name(Regularizer r) {
  switch (r) {
    case Regularizer::explanation_distillation: return "explanation_distillation";
    case Regularizer::l2sp: return "l2sp";
    case Regularizer::none: return "none";
  }
  return "?";
}

Regularizer parse_regularizer(const std::string& name) {
  if (name == "explanation_distillation") return Regularizer::explanation_distillation;
  if (name == "l2sp") return Regularizer::l2sp;
  if (name == "none") return Regularizer::none;
  fail(ErrorKind::config, "unknown regularizer: " + name);
}

void TrainConfig::validate() const {
  const auto bad = [](const std::string& m) { fail(ErrorKind::config, m); };
  if (!(lambda >= 0.0)) bad("lambda must be >= 0");
  if (batch_size < 1) bad("batch_size must be >= 1");
  if (epochs < 0) bad("epochs must be >= 0");
  if (!(lr >= 0.0)) bad("lr must be >= 0");
  if (!(tau0 > 0.0) || !(tau_min > 0.0)) bad("tau0 and tau_min must be positive");
  if (!(anneal_rate >= 0.0)) bad("anneal_rate must be >= 0");
  if (beam_width < 1) bad("beam_width must be >= 1");
  if (!(grad_clip > 0.0)) bad("grad_clip must be positive");
  if (max_steps < 0) bad("max_steps must be >= 0");
}

std::string TrainConfig::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "lambda = " << lambda << "\nlr = " << lr << "\nbatch_size = " << batch_size << "\nepochs = " << epochs
     << "\nseed = " << seed << "\ntau0 = " << tau0 << "\nanneal_rate = " << anneal_rate << "\ntau_min = " << tau_min
     << "\nanneal = " << (anneal ? "true" : "false") << "\nregularizer = " << regularizer_name(regularizer)
     << "\nclassifier_mode = " << nn::mode_name(classifier_mode) << "\nbeam_width = " << beam_width
     << "\nreference_cache = " << (reference_cache ? "true" : "false") << "\nweight_decay = " << weight_decay
     << "\ngrad_clip = " << grad_clip << "\nfreeze_captioner = " << (freeze_captioner ? "true" : "false")
     << "\nclassification_loss = " << (classification_loss ? "true" : "false") << "\nmax_steps = " << max_steps
     << "\n";
  return os.str();
}

XbmModel::XbmModel(const Captioner& teacher_, nn::ClassifierMode mode, int num_classes, std::uint64_t seed)
    : student(teacher_),
      classifier("classifier", teacher_.cfg, mode, num_classes, mix64(seed ^ hash_name("classifier"))),
      teacher(teacher_) {
  teacher.set_trainable(false);
  student.set_trainable(true);
}

std::vector<ad::Parameter*> XbmModel::classifier_params() {
  std::vector<ad::Parameter*> out;
  classifier.collect(out);
  return out;
}

std::vector<std::vector<int>> XbmModel::explain(std::span<const Example* const> batch, int beam_width) {
  return student.describe(batch, {beam_width, student.cfg.max_len, Vocabulary::kEos});
}

XbmModel::Prediction XbmModel::classify(std::span<const Example* const> batch,
                                        std::span<const std::vector<int>> explanations) {
  ad::Tape t(false);
  ad::Var mem;
  if (classifier.mode() == nn::ClassifierMode::multimodal) mem = student.encoder(t, t.constant(image_tensor(batch)));
  ad::Var oh = nn::one_hot(t, explanations, student.cfg.max_len, student.cfg.vocab_size);
  auto out = classifier(t, mem, oh, nn::presence(oh));
  Prediction p;
  p.logits = out.logits.value();
  const std::int64_t k = p.logits.dim(1);
  for (std::int64_t b = 0; b < p.logits.dim(0); ++b) {
    std::int64_t best = 0;
    for (std::int64_t j = 1; j < k; ++j)
      if (p.logits[b * k + j] > p.logits[b * k + best]) best = j;
    p.labels.push_back(static_cast<int>(best));
  }
  p.self_weights = std::move(out.self_weights);
  p.cross_weights = std::move(out.cross_weights);
  return p;
}

namespace {

std::vector<ad::Parameter*> trainable_params(XbmModel& m, const TrainConfig& c) {
  std::vector<ad::Parameter*> out = m.classifier_params();
  if (!c.freeze_captioner) {
    auto s = m.student.params();
    out.insert(out.end(), s.begin(), s.end());
  }
  return out;
}

}  // namespace

XbmTrainer::XbmTrainer(XbmModel& model, const TrainConfig& config, std::int64_t horizon)
    : m_(model),
      cfg_(config),
      horizon_(std::max<std::int64_t>(horizon, 1)),
      trainable_(trainable_params(model, config)),
      opt_(trainable_, {0.9, 0.999, 1e-8, config.weight_decay}) {
  cfg_.validate();
  m_.student.set_trainable(!cfg_.freeze_captioner);
  m_.teacher.set_trainable(false);
}

double XbmTrainer::current_tau() const {
  return decode::GumbelSchedule{cfg_.tau0, cfg_.anneal_rate, cfg_.tau_min, cfg_.anneal}.tau(step_);
}

std::vector<std::vector<int>> XbmTrainer::references(std::span<const Example* const> batch) {
  std::vector<const Example*> missing;
  for (const Example* e : batch)
    if (!cfg_.reference_cache || !ref_cache_.count(e->seed)) missing.push_back(e);
  std::vector<std::vector<int>> fresh;
  if (!missing.empty())
    fresh = m_.teacher.describe(missing, {cfg_.beam_width, m_.teacher.cfg.max_len, Vocabulary::kEos});
  if (!cfg_.reference_cache) return fresh;
  for (std::size_t i = 0; i < missing.size(); ++i) ref_cache_[missing[i]->seed] = std::move(fresh[i]);
  std::vector<std::vector<int>> out;
  for (const Example* e : batch) out.push_back(ref_cache_.at(e->seed));
  return out;
}

LossBreakdown XbmTrainer::step(std::span<const Example* const> batch, std::uint64_t noise_epoch) {
  const auto b = static_cast<std::int64_t>(batch.size());
  const int len = m_.student.cfg.max_len;
  const int vocab = m_.student.cfg.vocab_size;
  ad::Tape t;
  ad::Var mem = m_.student.encoder(t, t.constant(image_tensor(batch)));

  ad::Var cls;
  if (cfg_.classification_loss) {
    std::vector<std::uint64_t> keys;
    std::vector<int> labels;
    for (const Example* e : batch) {
      keys.push_back(mix64(cfg_.seed ^ mix64(e->seed ^ mix64(noise_epoch + 0x9E37ULL))));
      labels.push_back(e->label);
    }
    const auto noise = decode::gumbel_noise(keys, len, vocab);
    ad::Var y = decode::gumbel_sample(m_.student.decoder, t, mem, b, len, current_tau(), noise);
    auto out = m_.classifier(t, mem, y, nn::presence(y));
    cls = classification_loss(out.logits, labels);
  }

  ad::Var reg;
  switch (cfg_.regularizer) {
    case Regularizer::explanation_distillation:
      reg = distillation_loss(m_.student.decoder, t, mem, references(batch));
      break;
    case Regularizer::l2sp: {
      auto s = m_.student.params();
      auto p = m_.teacher.params();
      reg = l2sp(t, s, p);
      break;
    }
    case Regularizer::none:
      break;
  }

  ad::Var total;
  if (cls.valid()) total = cls;
  if (reg.valid()) {
    ad::Var scaled = ad::scale(reg, cfg_.lambda);
    total = total.valid() ? ad::add(total, scaled) : scaled;
  }
  if (!total.valid()) fail(ErrorKind::config, "training step has no loss terms");

  LossBreakdown lb;
  lb.cls = cls.valid() ? cls.value().item() : 0.0;
  lb.reg = reg.valid() ? reg.value().item() : 0.0;
  lb.total = total.value().item();

  t.backward(total);
  const double norm = ad::clip_grad_norm(trainable_, cfg_.grad_clip);
  if (norm > cfg_.grad_clip) ++clipped_;
  opt_.step(ad::cosine_lr(step_, horizon_, cfg_.lr));
  ++step_;
  return lb;
}

double accuracy(XbmModel& model, std::span<const Example> split, int beam_width, int chunk) {
  if (split.empty()) return 0.0;
  std::int64_t correct = 0;
  for (std::size_t start = 0; start < split.size(); start += static_cast<std::size_t>(chunk)) {
    std::vector<const Example*> batch;
    for (std::size_t i = start; i < std::min(split.size(), start + static_cast<std::size_t>(chunk)); ++i)
      batch.push_back(&split[i]);
    const auto expl = model.explain(batch, beam_width);
    const auto pred = model.classify(batch, expl);
    for (std::size_t i = 0; i < batch.size(); ++i) correct += pred.labels[i] == batch[i]->label;
  }
  return static_cast<double>(correct) / static_cast<double>(split.size());
}

TrainResult train_xbm(XbmModel& model, std::span<const Example> train_split, std::span<const Example> val_split,
                      const TrainConfig& config, const std::function<void(const EpochMetrics&)>& on_epoch) {
  config.validate();
  if (train_split.empty()) fail(ErrorKind::data, "training split is empty");
  const std::size_t n = train_split.size();
  const auto bs = static_cast<std::size_t>(config.batch_size);
  const auto per_epoch = static_cast<std::int64_t>((n + bs - 1) / bs);
  std::int64_t horizon = per_epoch * config.epochs;
  if (config.max_steps > 0) horizon = std::min(horizon, config.max_steps);
  XbmTrainer trainer(model, config, horizon);

  TrainResult result;
  std::vector<ad::Parameter*> snapshot_params = model.classifier_params();
  {
    auto s = model.student.params();
    snapshot_params.insert(snapshot_params.end(), s.begin(), s.end());
  }
  std::vector<ad::Tensor> best;

  for (int epoch = 0; epoch < config.epochs && trainer.steps_taken() < horizon; ++epoch) {
    const auto order = epoch_order(n, config.seed, static_cast<std::uint64_t>(epoch));
    EpochMetrics em;
    em.epoch = epoch;
    int batches = 0;
    for (std::size_t start = 0; start < n && trainer.steps_taken() < horizon; start += bs) {
      std::vector<const Example*> batch;
      for (std::size_t i = start; i < std::min(n, start + bs); ++i) batch.push_back(&train_split[order[i]]);
      const auto lb = trainer.step(batch, static_cast<std::uint64_t>(epoch));
      em.cls += lb.cls;
      em.reg += lb.reg;
      em.total += lb.total;
      ++batches;
    }
    em.cls /= batches;
    em.reg /= batches;
    em.total /= batches;
    em.tau = trainer.current_tau();
    em.val_acc = accuracy(model, val_split, config.beam_width);
    result.epochs.push_back(em);
    if (em.val_acc > result.best_val_acc) {
      result.best_val_acc = em.val_acc;
      result.best_epoch = epoch;
      best.clear();
      for (auto* p : snapshot_params) best.push_back(p->value);
    }
    if (on_epoch) on_epoch(em);
  }
  if (!best.empty())
    for (std::size_t i = 0; i < snapshot_params.size(); ++i) snapshot_params[i]->value = best[i];
  result.steps = trainer.steps_taken();
  result.clipped_steps = trainer.clipped_steps();
  return result;
}

}  // namespace xbm::train
