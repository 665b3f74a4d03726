#pragma once

// ADAM with bias correction plus the polynomially annealed learning rate.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "deesco/tensor.hpp"

namespace deesco {

struct TrainSchedule {
  double base_lr = 2e-4;
  long total_steps = 0;  // 0: derived from epochs * batches-per-epoch
  double power = 1.0;
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
};

/// lr(t) = base_lr * (1 - t/total_steps)^power; clamps to 0 past the end.
inline double poly_lr(const TrainSchedule& s, long t) {
  if (s.total_steps <= 0)
    throw ConfigError("poly_lr: schedule total_steps must be positive");
  if (t < 0) throw UsageError("poly_lr: negative step");
  if (t >= s.total_steps) return t == s.total_steps ? 0.0 : 0.0;
  const double frac = 1.0 - static_cast<double>(t) /
                                static_cast<double>(s.total_steps);
  return s.base_lr * std::pow(frac, s.power);
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Holds per-parameter first/second moments aligned with the parameter list.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(std::vector<Parameter> params, AdamConfig cfg = {})
      : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
      m_.emplace_back(p.tensor.numel(), 0.0);
      v_.emplace_back(p.tensor.numel(), 0.0);
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.clear_grad();
  }

  /// One bias-corrected update. A missing gradient on any trainable
  /// parameter is a hard error: it means part of the graph went dead.
  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor& th = params_[i].tensor;
      if (!th.has_grad() || th.grad().size() != th.numel())
        throw UsageError("adam_step: parameter '" + params_[i].name +
                         "' has no gradient (dead graph?)");
      auto g = th.grad();
      auto vals = th.raw_values();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < vals.size(); ++j) {
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
        const double mhat = m[j] / bc1;
        const double vhat = v[j] / bc2;
        vals[j] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

  /// Global-norm gradient clip; no-op when max_norm <= 0 or norm is within.
  void clip_global_norm(double max_norm) {
    if (max_norm <= 0.0) return;
    double sq = 0.0;
    for (auto& p : params_)
      if (p.tensor.has_grad())
        for (double g : p.tensor.grad()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm <= max_norm) return;
    const double f = max_norm / norm;
    for (auto& p : params_)
      if (p.tensor.has_grad())
        for (auto& g : p.tensor.raw_grad()) g *= f;
  }

  long step_count() const { return t_; }
  void set_step_count(long t) { t_ = t; }
  const AdamConfig& config() const { return cfg_; }
  const std::vector<Parameter>& params() const { return params_; }
  std::vector<double>& moment_m(std::size_t i) { return m_[i]; }
  std::vector<double>& moment_v(std::size_t i) { return v_[i]; }

 private:
  std::vector<Parameter> params_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
  AdamConfig cfg_;
};

}  // namespace deesco
