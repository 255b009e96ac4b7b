#include "xbm/ad/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "xbm/util/error.hpp"

namespace xbm::ad {

AdamW::AdamW(std::vector<Parameter*> params, AdamWConfig config)
    : params_(std::move(params)), config_(config) {
  for (Parameter* p : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
    if (p->grad.empty()) p->grad = Tensor(p->value.shape());
  }
}

void AdamW::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

void AdamW::step(double lr) {
  for (Parameter* p : params_)
    if (!p->grad.all_finite()) fail(ErrorKind::numeric, "optimizer: non-finite gradient in " + p->name);
  ++step_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    auto val = p.value.data();
    auto g = p.grad.data();
    auto m = m_[i].data();
    auto v = v_[i].data();
    const bool decay = config_.weight_decay != 0.0 && p.value.rank() >= 2;
    for (std::size_t j = 0; j < val.size(); ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      double update = mhat / (std::sqrt(vhat) + config_.epsilon);
      if (decay) update += config_.weight_decay * val[j];
      val[j] -= lr * update;
    }
  }
  zero_grad();
}

double cosine_lr(std::int64_t step, std::int64_t horizon, double lr0) {
  if (horizon <= 0) return lr0;
  const double frac = std::clamp(static_cast<double>(step) / static_cast<double>(horizon), 0.0, 1.0);
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

double grad_norm(std::span<Parameter* const> params) {
  double s = 0.0;
  for (const Parameter* p : params)
    for (double g : p->grad.data()) s += g * g;
  return std::sqrt(s);
}

double clip_grad_norm(std::span<Parameter* const> params, double max_norm) {
  const double norm = grad_norm(params);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (Parameter* p : params)
      for (double& g : p->grad.data()) g *= f;
  }
  return norm;
}

}  // namespace xbm::ad
