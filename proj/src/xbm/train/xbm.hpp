#pragma once

#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "xbm/ad/optim.hpp"
#include "xbm/train/captioner.hpp"

namespace xbm::train {

enum class Regularizer { explanation_distillation, l2sp, none };

const char* regularizer_name(Regularizer r);
Regularizer parse_regularizer(const std::string& name);

struct TrainConfig {
  double lambda = 0.1;
  double lr = 1e-3;
  int batch_size = 8;
  int epochs = 10;
  std::uint64_t seed = 0;
  double tau0 = 10.0;
  double anneal_rate = 1e-4;
  double tau_min = 0.1;
  bool anneal = true;
  Regularizer regularizer = Regularizer::explanation_distillation;
  nn::ClassifierMode classifier_mode = nn::ClassifierMode::multimodal;
  int beam_width = 3;
  bool reference_cache = true;
  double weight_decay = 0.01;
  double grad_clip = 5.0;
  /// Keeps psi and phi fixed (the frozen-captioner baseline).
  bool freeze_captioner = false;
  /// Drops the classification term (distillation-only runs).
  bool classification_loss = true;
  /// Caps the total number of optimizer steps; 0 means no cap.
  std::int64_t max_steps = 0;

  /// Throws a config error on out-of-range values.
  void validate() const;
  /// `key = value` lines for every field.
  std::string to_text() const;
};

struct LossBreakdown {
  double cls = 0.0;
  double reg = 0.0;
  double total = 0.0;
};

/// Student captioner (psi, phi), classifier (theta) and the frozen teacher
/// copy (psi_p, phi_p).
struct XbmModel {
  XbmModel() = default;
  /// Student starts as an exact copy of the teacher; theta is freshly
  /// initialised from `seed`.
  XbmModel(const Captioner& teacher, nn::ClassifierMode mode, int num_classes, std::uint64_t seed);

  std::vector<ad::Parameter*> classifier_params();

  /// Student beam-search explanations.
  std::vector<std::vector<int>> explain(std::span<const Example* const> batch, int beam_width);

  struct Prediction {
    std::vector<int> labels;
    ad::Tensor logits;                     // [B, K]
    std::vector<ad::Tensor> self_weights;  // per classifier layer
    std::vector<ad::Tensor> cross_weights;
  };
  /// Classifier output for given hard explanations (no gradient).
  Prediction classify(std::span<const Example* const> batch, std::span<const std::vector<int>> explanations);

  Captioner student;
  nn::Classifier classifier;
  Captioner teacher;
};

struct EpochMetrics {
  int epoch = 0;
  double cls = 0.0;
  double reg = 0.0;
  double total = 0.0;
  double val_acc = 0.0;
  double tau = 0.0;
};

struct TrainResult {
  std::vector<EpochMetrics> epochs;
  int best_epoch = -1;
  double best_val_acc = -1.0;
  std::int64_t steps = 0;
  std::int64_t clipped_steps = 0;
};

/// One joint update of captioner and classifier on one batch.
class XbmTrainer {
 public:
  XbmTrainer(XbmModel& model, const TrainConfig& config, std::int64_t horizon);

  /// Samples explanations, computes L_cls + lambda * R_int and applies a
  /// single AdamW step at the cosine learning rate for the current step.
  LossBreakdown step(std::span<const Example* const> batch, std::uint64_t noise_epoch);

  /// Teacher beam-search references (cached by example seed when enabled).
  std::vector<std::vector<int>> references(std::span<const Example* const> batch);

  std::int64_t steps_taken() const { return step_; }
  std::int64_t clipped_steps() const { return clipped_; }
  double current_tau() const;
  const std::vector<ad::Parameter*>& trainable() const { return trainable_; }

 private:
  XbmModel& m_;
  TrainConfig cfg_;
  std::int64_t horizon_;
  std::vector<ad::Parameter*> trainable_;
  ad::AdamW opt_;
  std::map<std::uint64_t, std::vector<int>> ref_cache_;
  std::int64_t step_ = 0;
  std::int64_t clipped_ = 0;
};

/// Accuracy of beam-search explanations + classifier on a split.
double accuracy(XbmModel& model, std::span<const Example> split, int beam_width, int chunk = 32);

/// Full training loop with per-epoch validation and best-validation model
/// selection (the returned model holds the best epoch's parameters).
TrainResult train_xbm(XbmModel& model, std::span<const Example> train_split, std::span<const Example> val_split,
                      const TrainConfig& config, const std::function<void(const EpochMetrics&)>& on_epoch = {});

}  // namespace xbm::train
