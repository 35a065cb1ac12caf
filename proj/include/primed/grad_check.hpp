#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "primed/autodiff.hpp"

namespace primed::ad {

/// Builds a scalar loss on `graph` from parameter nodes bound in order.
using LossBuilder = std::function<NodeId(Graph& graph, std::span<const NodeId> params)>;

/// Max over all parameter entries of |analytic - central difference| / max(1, |analytic|).
inline double grad_check(const LossBuilder& build, std::vector<Tensor> params, double eps = 1e-5) {
  auto evaluate = [&](const std::vector<Tensor>& values) {
    Graph g;
    std::vector<NodeId> ids;
    for (const Tensor& v : values) ids.push_back(g.parameter(v));
    return g.value(build(g, ids)).item();
  };

  Graph g;
  std::vector<NodeId> ids;
  for (const Tensor& v : params) ids.push_back(g.parameter(v));
  const Gradients grads = g.backward(build(g, ids));

  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Tensor& analytic = grads.of(ids[k]);
    for (std::size_t i = 0; i < params[k].size(); ++i) {
      const double original = params[k][i];
      params[k][i] = original + eps;
      const double up = evaluate(params);
      params[k][i] = original - eps;
      const double down = evaluate(params);
      params[k][i] = original;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace primed::ad
