#pragma once

// Stage 1: conditional VAE over (x, s) trained on the propensity-weighted
// ELBO. Its posterior means serve as substitute confounders for stage 2.
//
// Encoder q(z | x, s):  [x; s] -> tanh(H) -> (mu, logvar), logvar clamped to [-10, 10]
// Decoder p(x | z, s):  [z; s] -> tanh(H) -> x_hat, unit-variance Gaussian likelihood
// Prior p(z):           standard normal of dimension K

#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "primed/autodiff.hpp"
#include "primed/data.hpp"
#include "primed/nn.hpp"
#include "primed/optim.hpp"
#include "primed/random.hpp"

namespace primed {

struct CvaeShape {
  std::size_t features = 0;   ///< M
  std::size_t sensitive = 0;  ///< encoded width of s
  std::size_t latent = 8;     ///< K
  std::size_t hidden = 64;    ///< H

  friend bool operator==(const CvaeShape&, const CvaeShape&) = default;
};

struct CvaeTrainConfig {
  std::size_t samples = 1;  ///< L, Monte Carlo draws per record
  std::size_t epochs = 50;
  std::size_t batch_size = 128;
  double learning_rate = 1e-4;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;
};

inline constexpr double kLogvarMin = -10.0;
inline constexpr double kLogvarMax = 10.0;

class CvaeModel {
 public:
  CvaeModel() = default;

  static CvaeModel initialize(const CvaeShape& shape, std::uint64_t seed) {
    if (shape.features == 0 || shape.latent == 0 || shape.hidden == 0) {
      throw DimensionError("cvae: features, latent and hidden sizes must be positive");
    }
    CvaeModel m;
    m.shape_ = shape;
    Rng rng = derived_rng(seed, 0xc7ae);
    Mlp::create(m.params_, "encoder", shape.features + shape.sensitive, shape.hidden, 2 * shape.latent, rng);
    Mlp::create(m.params_, "decoder", shape.latent + shape.sensitive, shape.hidden, shape.features, rng);
    return m;
  }

  /// Rebuilds a model from stored parameters, checking every shape.
  static CvaeModel from_params(const CvaeShape& shape, ParamSet params) {
    CvaeModel reference = initialize(shape, 0);
    if (reference.params_.names() != params.names()) throw DimensionError("cvae: parameter names do not match shape");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i].shape() != reference.params_[i].shape()) {
        throw DimensionError("cvae: parameter '" + params.name(i) + "' has shape " +
                             shape_string(params[i].shape()) + ", expected " +
                             shape_string(reference.params_[i].shape()));
      }
    }
    reference.params_ = std::move(params);
    return reference;
  }

  const CvaeShape& shape() const { return shape_; }
  const ParamSet& params() const { return params_; }
  ParamSet& params() { return params_; }
  Mlp encoder() const { return Mlp::lookup(params_, "encoder"); }
  Mlp decoder() const { return Mlp::lookup(params_, "decoder"); }

  friend bool operator==(const CvaeModel&, const CvaeModel&) = default;

 private:
  CvaeShape shape_;
  ParamSet params_;
};

struct EncoderNodes {
  ad::NodeId mean;
  ad::NodeId logvar;
};

namespace cvae_graph {

inline void check_inputs(const CvaeShape& shape, const Tensor& x, const Tensor& s) {
  if (!x.is_matrix() || x.cols() != shape.features) {
    throw DimensionError("cvae: x has shape " + shape_string(x.shape()) + ", expected N x " +
                         std::to_string(shape.features));
  }
  if (!s.is_matrix() || s.cols() != shape.sensitive || s.rows() != x.rows()) {
    throw DimensionError("cvae: s has shape " + shape_string(s.shape()) + ", expected " + std::to_string(x.rows()) +
                         " x " + std::to_string(shape.sensitive));
  }
}

inline EncoderNodes encode(ad::Graph& g, const CvaeModel& model, const BoundParams& p, ad::NodeId x, ad::NodeId s) {
  const std::size_t k = model.shape().latent;
  ad::NodeId h = model.encoder().forward(g, p, g.concat_cols({x, s}));
  return {g.slice_cols(h, 0, k), g.clamp(g.slice_cols(h, k, k), kLogvarMin, kLogvarMax)};
}

/// z = mu + exp(logvar / 2) * eps
inline ad::NodeId reparameterize(ad::Graph& g, ad::NodeId mean, ad::NodeId logvar, ad::NodeId noise) {
  return g.add(mean, g.mul(g.exp(g.scale(logvar, 0.5)), noise));
}

/// Per-row KL(N(mu, exp(logvar)) || N(0, I)) = 1/2 sum_k (exp(lv) + mu^2 - 1 - lv).
inline ad::NodeId kl_rows(ad::Graph& g, ad::NodeId mean, ad::NodeId logvar) {
  ad::NodeId inner = g.sub(g.add(g.exp(logvar), g.mul(mean, mean)), g.shift(logvar, 1.0));
  return g.scale(g.row_sum(inner), 0.5);
}

inline ad::NodeId decode(ad::Graph& g, const CvaeModel& model, const BoundParams& p, ad::NodeId z, ad::NodeId s) {
  return model.decoder().forward(g, p, g.concat_cols({z, s}));
}

/// Per-row -1/2 ||x - x_hat||^2 (unit-variance Gaussian, constant dropped).
inline ad::NodeId reconstruction_rows(ad::Graph& g, ad::NodeId x, ad::NodeId x_hat) {
  ad::NodeId diff = g.sub(x, x_hat);
  return g.scale(g.row_sum(g.mul(diff, diff)), -0.5);
}

/// Per-row ELBO with one noise matrix (N x K) per Monte Carlo sample.
inline ad::NodeId elbo_rows(ad::Graph& g, const CvaeModel& model, const BoundParams& p, ad::NodeId x, ad::NodeId s,
                            std::span<const Tensor> noise) {
  if (noise.empty()) throw DimensionError("cvae: at least one Monte Carlo sample is required");
  EncoderNodes enc = encode(g, model, p, x, s);
  std::optional<ad::NodeId> recon;
  for (const Tensor& eps : noise) {
    ad::NodeId z = reparameterize(g, enc.mean, enc.logvar, g.constant(eps));
    ad::NodeId term = reconstruction_rows(g, x, decode(g, model, p, z, s));
    recon = recon ? g.add(*recon, term) : term;
  }
  ad::NodeId mean_recon = g.scale(*recon, 1.0 / static_cast<double>(noise.size()));
  return g.sub(mean_recon, kl_rows(g, enc.mean, enc.logvar));
}

/// Batch loss -(1/B) sum_i w_i ELBO_i. Without weights every record counts once.
inline ad::NodeId weighted_loss(ad::Graph& g, ad::NodeId elbo, std::optional<std::span<const double>> weights) {
  const Tensor& e = g.value(elbo);
  ad::NodeId total = weights ? g.reduce_sum(g.mul(elbo, g.constant(Tensor::vector({weights->begin(), weights->end()}))))
                             : g.reduce_sum(elbo);
  return g.scale(total, -1.0 / static_cast<double>(e.size()));
}

}  // namespace cvae_graph

struct Posterior {
  Tensor mean;    ///< N x K
  Tensor logvar;  ///< N x K
};

/// Deterministic encoder pass over a batch (one record per row).
inline Posterior encode(const CvaeModel& model, const Tensor& x, const Tensor& s) {
  cvae_graph::check_inputs(model.shape(), x, s);
  ad::Graph g;
  BoundParams p = bind_constant(g, model.params());
  EncoderNodes enc = cvae_graph::encode(g, model, p, g.constant(x), g.constant(s));
  return {g.value(enc.mean), g.value(enc.logvar)};
}

inline Tensor reparameterize(const Tensor& mean, const Tensor& logvar, const Tensor& noise) {
  if (mean.shape() != logvar.shape() || mean.shape() != noise.shape()) {
    throw DimensionError("reparameterize: mean, logvar and noise must share a shape");
  }
  Tensor z(mean.shape());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = mean[i] + std::exp(0.5 * logvar[i]) * noise[i];
  return z;
}

inline double kl_to_standard_normal(std::span<const double> mean, std::span<const double> logvar) {
  if (mean.size() != logvar.size()) throw DimensionError("kl_to_standard_normal: mean and logvar lengths differ");
  double total = 0.0;
  for (std::size_t k = 0; k < mean.size(); ++k) total += std::exp(logvar[k]) + mean[k] * mean[k] - 1.0 - logvar[k];
  return 0.5 * total;
}

struct Reconstruction {
  Tensor x_hat;                       ///< N x M
  std::vector<double> log_likelihood; ///< per row, -1/2 ||x - x_hat||^2
};

inline Reconstruction decode(const CvaeModel& model, const Tensor& z, const Tensor& s, const Tensor& x) {
  const auto& shape = model.shape();
  if (!z.is_matrix() || z.cols() != shape.latent) {
    throw DimensionError("cvae: z has shape " + shape_string(z.shape()) + ", expected N x " +
                         std::to_string(shape.latent));
  }
  cvae_graph::check_inputs(shape, x, s);
  if (z.rows() != x.rows()) throw DimensionError("cvae: z and x differ in row count");
  ad::Graph g;
  BoundParams p = bind_constant(g, model.params());
  ad::NodeId xn = g.constant(x);
  ad::NodeId x_hat = cvae_graph::decode(g, model, p, g.constant(z), g.constant(s));
  ad::NodeId ll = cvae_graph::reconstruction_rows(g, xn, x_hat);
  const Tensor& llv = g.value(ll);
  return {g.value(x_hat), {llv.values().begin(), llv.values().end()}};
}

inline std::vector<Tensor> draw_noise(std::size_t rows, std::size_t latent, std::size_t samples, Rng& rng) {
  std::vector<Tensor> noise;
  noise.reserve(samples);
  for (std::size_t l = 0; l < samples; ++l) noise.push_back(standard_normal(Shape{rows, latent}, rng));
  return noise;
}

/// Per-record ELBO estimated with `samples` reparameterized draws from `rng`.
inline std::vector<double> elbo(const CvaeModel& model, const Tensor& x, const Tensor& s, std::size_t samples,
                                Rng& rng) {
  if (samples == 0) throw DimensionError("elbo: L must be at least 1");
  cvae_graph::check_inputs(model.shape(), x, s);
  const auto noise = draw_noise(x.rows(), model.shape().latent, samples, rng);
  ad::Graph g;
  BoundParams p = bind_constant(g, model.params());
  ad::NodeId e = cvae_graph::elbo_rows(g, model, p, g.constant(x), g.constant(s), noise);
  const Tensor& ev = g.value(e);
  return {ev.values().begin(), ev.values().end()};
}

struct CvaeBatchEvaluation {
  double objective = 0.0;  ///< (1/B) sum_i w_i ELBO_i
  std::vector<Tensor> gradients;  ///< of the loss (negated objective), per parameter
};

/// Objective and gradient for one batch with frozen noise.
inline CvaeBatchEvaluation evaluate_batch(const CvaeModel& model, const Tensor& x, const Tensor& s,
                                          std::optional<std::span<const double>> weights,
                                          std::span<const Tensor> noise) {
  cvae_graph::check_inputs(model.shape(), x, s);
  if (weights && weights->size() != x.rows()) throw DimensionError("cvae: weights do not match batch size");
  ad::Graph g;
  BoundParams p = bind(g, model.params());
  ad::NodeId e = cvae_graph::elbo_rows(g, model, p, g.constant(x), g.constant(s), noise);
  ad::NodeId loss = cvae_graph::weighted_loss(g, e, weights);
  CvaeBatchEvaluation out;
  out.objective = -g.value(loss).item();
  out.gradients = gradients_for(g.backward(loss), p);
  return out;
}

struct CvaeTrainResult {
  CvaeModel model;
  std::vector<double> trace;  ///< per-epoch mean of the weighted batch objectives
};

/// Minibatch ascent on sum_i w_i ELBO_i. `weights` (one per row of x) may be
/// omitted for plain unweighted training.
inline CvaeTrainResult train_cvae(CvaeModel model, const Tensor& x, const Tensor& s,
                                  std::optional<std::span<const double>> weights, const CvaeTrainConfig& config) {
  cvae_graph::check_inputs(model.shape(), x, s);
  if (config.samples == 0 || config.epochs == 0 || config.batch_size == 0) {
    throw DimensionError("cvae: samples, epochs and batch size must be positive");
  }
  if (weights && weights->size() != x.rows()) {
    throw DimensionError("cvae: " + std::to_string(weights->size()) + " weights for " + std::to_string(x.rows()) +
                         " records");
  }
  const std::size_t n = x.rows();
  Rng order_rng = derived_rng(config.seed, 0x0de5);
  Rng noise_rng = derived_rng(config.seed, 0x4015e);
  AdamW optimizer(AdamConfig{config.learning_rate, config.weight_decay});
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  CvaeTrainResult result;
  std::vector<double> batch_weights;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    double epoch_total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t end = std::min(n, start + config.batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      const Tensor xb = take_rows(x, idx);
      const Tensor sb = take_rows(s, idx);
      std::optional<std::span<const double>> wb;
      if (weights) {
        batch_weights.clear();
        for (auto i : idx) batch_weights.push_back((*weights)[i]);
        wb = std::span<const double>(batch_weights);
      }
      const auto noise = draw_noise(idx.size(), model.shape().latent, config.samples, noise_rng);
      CvaeBatchEvaluation eval = evaluate_batch(model, xb, sb, wb, noise);
      if (!std::isfinite(eval.objective)) {
        throw TrainingError("cvae: non-finite objective at epoch " + std::to_string(epoch + 1) + ", batch " +
                            std::to_string(batches + 1));
      }
      optimizer.step(model.params().values(), eval.gradients);
      epoch_total += eval.objective;
      ++batches;
    }
    result.trace.push_back(epoch_total / static_cast<double>(batches));
  }
  result.model = std::move(model);
  return result;
}

/// Posterior means, one row per record (N x K).
inline Tensor infer_substitute_confounders(const CvaeModel& model, const Tensor& x, const Tensor& s) {
  return encode(model, x, s).mean;
}

inline Tensor infer_substitute_confounders(const CvaeModel& model, const Dataset& dataset) {
  return infer_substitute_confounders(model, feature_matrix(dataset), sensitive_matrix(dataset));
}

}  // namespace primed
