#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "xbm/decode/decode.hpp"
#include "xbm/nn/models.hpp"
#include "xbm/world/corpus.hpp"

namespace xbm::train {

/// Vision encoder + explanation decoder pair (psi, phi).
struct Captioner {
  Captioner() = default;
  Captioner(const nn::ModelConfig& cfg, std::uint64_t seed);

  std::vector<ad::Parameter*> params();
  std::vector<ad::Parameter*> encoder_params();
  std::vector<ad::Parameter*> decoder_params();
  void set_trainable(bool trainable);

  /// Beam-search explanations for a batch of examples (no gradient).
  std::vector<std::vector<int>> describe(std::span<const Example* const> batch, const decode::BeamOptions& options);

  nn::ModelConfig cfg;
  nn::VisionEncoder encoder;
  nn::ExplanationDecoder decoder;
};

struct PretrainConfig {
  int epochs = 20;
  int batch_size = 16;
  double lr = 3e-3;
  double weight_decay = 0.01;
  /// Caps the total number of optimizer steps; 0 means no cap.
  std::int64_t max_steps = 0;
};

struct PretrainEpoch {
  int epoch = 0;
  double loss = 0.0;
};

/// Teacher-forced maximum-likelihood captioning. Every example must carry a
/// caption. Deterministic given `seed`.
std::vector<PretrainEpoch> pretrain_captioner(Captioner& model, std::span<const Example> corpus,
                                              const PretrainConfig& config, std::uint64_t seed,
                                              const std::function<void(const PretrainEpoch&)>& on_epoch = {});

/// [B, H, W, 3] image tensor for a batch of examples.
ad::Tensor image_tensor(std::span<const Example* const> batch);

/// Deterministic permutation of [0, n) for one epoch.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch);

}  // namespace xbm::train
