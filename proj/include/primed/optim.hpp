#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "primed/error.hpp"
#include "primed/tensor.hpp"

namespace primed {

struct AdamConfig {
  double learning_rate = 1e-4;
  double weight_decay = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adaptive-moment optimizer with decoupled weight decay.
///
/// Moment buffers are allocated on the first step and must keep the shapes
/// of the parameters they were created for.
class AdamW {
 public:
  explicit AdamW(AdamConfig config = {}) : config_(config) {}

  void step(std::span<Tensor> params, std::span<const Tensor> grads) {
    if (params.size() != grads.size()) {
      throw DimensionError("optimizer: " + std::to_string(params.size()) + " parameters but " +
                           std::to_string(grads.size()) + " gradients");
    }
    if (first_moment_.empty()) {
      for (const Tensor& p : params) {
        first_moment_.emplace_back(p.shape());
        second_moment_.emplace_back(p.shape());
      }
    }
    if (first_moment_.size() != params.size()) {
      throw DimensionError("optimizer: parameter count changed between steps");
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
      if (params[k].shape() != grads[k].shape() || params[k].shape() != first_moment_[k].shape()) {
        throw DimensionError("optimizer: parameter " + std::to_string(k) + " has shape " +
                             shape_string(params[k].shape()) + " but gradient " + shape_string(grads[k].shape()) +
                             " and state " + shape_string(first_moment_[k].shape()));
      }
    }

    ++steps_;
    const double t = static_cast<double>(steps_);
    const double correction1 = 1.0 - std::pow(config_.beta1, t);
    const double correction2 = 1.0 - std::pow(config_.beta2, t);
    const double lr = config_.learning_rate;
    const double decay = lr * config_.weight_decay;

    for (std::size_t k = 0; k < params.size(); ++k) {
      auto p = params[k].values();
      auto g = grads[k].values();
      auto m = first_moment_[k].values();
      auto v = second_moment_[k].values();
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
        v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
        const double m_hat = m[i] / correction1;
        const double v_hat = v[i] / correction2;
        p[i] = p[i] - lr * (m_hat / (std::sqrt(v_hat) + config_.epsilon)) - decay * p[i];
      }
    }
  }

  std::size_t steps() const { return steps_; }
  const AdamConfig& config() const { return config_; }
  const std::vector<Tensor>& first_moment() const { return first_moment_; }
  const std::vector<Tensor>& second_moment() const { return second_moment_; }

 private:
  AdamConfig config_;
  std::size_t steps_ = 0;
  std::vector<Tensor> first_moment_;
  std::vector<Tensor> second_moment_;
};

}  // namespace primed
