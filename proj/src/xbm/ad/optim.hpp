#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "xbm/ad/tape.hpp"

namespace xbm::ad {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Decoupled decay, applied to parameters of rank >= 2 only.
  double weight_decay = 0.0;
};

/// Adam with decoupled weight decay. Holds pointers to the parameters it
/// updates; they must outlive the optimizer.
class AdamW {
 public:
  AdamW(std::vector<Parameter*> params, AdamWConfig config);

  /// Applies one update at learning rate `lr`, then zeroes all gradients.
  /// Throws a numeric error (and leaves parameters untouched) if any
  /// gradient is non-finite.
  void step(double lr);
  void zero_grad();

  std::int64_t step_count() const { return step_; }
  const std::vector<Parameter*>& params() const { return params_; }
  const Tensor& first_moment(std::size_t i) const { return m_[i]; }
  const Tensor& second_moment(std::size_t i) const { return v_[i]; }

 private:
  std::vector<Parameter*> params_;
  AdamWConfig config_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::int64_t step_ = 0;
};

/// lr0 * 0.5 * (1 + cos(pi * step / horizon)); steps past the horizon clamp
/// to the final value.
double cosine_lr(std::int64_t step, std::int64_t horizon, double lr0);

/// Global L2 norm of all gradients.
double grad_norm(std::span<Parameter* const> params);
/// Rescales gradients so their global norm is at most max_norm. Returns the
/// norm before clipping.
double clip_grad_norm(std::span<Parameter* const> params, double max_norm);

}  // namespace xbm::ad
