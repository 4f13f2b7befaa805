#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <vector>

#include "antic/autograd.hpp"
#include "antic/config.hpp"
#include "antic/ops.hpp"

namespace antic {

/// Cosine annealing with warm restarts. Every cycle of cycle_epochs starts
/// with warmup_epochs of linear warmup from 0 to base_lr, then anneals to
/// min_lr along a half cosine.
inline double lr_at(double epoch, const TrainConfig& c) {
  if (epoch < 0.0) throw ConfigError("lr_at: negative epoch");
  if (epoch > c.max_epochs) throw ConfigError("lr_at: epoch beyond max_epochs");
  const double u = std::fmod(epoch, static_cast<double>(c.cycle_epochs));
  if (u < c.warmup_epochs) return c.base_lr * u / c.warmup_epochs;
  const double span = static_cast<double>(c.cycle_epochs - c.warmup_epochs);
  const double progress = (u - c.warmup_epochs) / span;
  return c.min_lr + (c.base_lr - c.min_lr) * (1.0 + std::cos(std::numbers::pi * progress)) / 2.0;
}

/// Label-smoothed cross-entropy of one logit row: q[target] = 1 - eps + eps/K,
/// q[other] = eps/K, loss = -sum q log softmax(logits).
inline double smoothed_ce(const Eigen::Ref<const Eigen::RowVectorXd>& logits, int target, double eps) {
  const auto k = logits.size();
  if (target < 0 || target >= k) throw ValidationError("smoothed_ce: target out of range");
  if (eps < 0.0 || eps >= 1.0) throw ConfigError("smoothed_ce: smoothing must lie in [0, 1)");
  const Matrix logp = ops::detail::log_softmax_rows(Matrix(logits));
  const double off = eps / static_cast<double>(k);
  double loss = 0.0;
  for (Eigen::Index c = 0; c < k; ++c) loss -= (c == target ? 1.0 - eps + off : off) * logp(0, c);
  return loss;
}

/// Adam with decoupled weight decay. Parameters flagged decay=false are
/// skipped by the decay term.
class AdamW {
 public:
  explicit AdamW(const TrainConfig& c) : beta1_(c.beta1), beta2_(c.beta2), eps_(c.adam_eps), decay_(c.weight_decay) {}

  void step(std::vector<Parameter>& params, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (auto& p : params) {
      if (p.decay && decay_ > 0.0) p.value *= 1.0 - lr * decay_;
      p.m = beta1_ * p.m + (1.0 - beta1_) * p.grad;
      p.v = beta2_ * p.v + (1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
      p.value.array() -= lr * (p.m.array() / bc1) / ((p.v.array() / bc2).sqrt() + eps_);
    }
  }

  std::uint64_t steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_, decay_;
  std::uint64_t t_ = 0;
};

/// Scales all gradients so their global L2 norm is at most max_norm. Returns
/// the norm before clipping.
inline double clip_grad_norm(std::vector<Parameter>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) sq += p.grad.squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& p : params) p.grad *= s;
  }
  return norm;
}

}  // namespace antic
