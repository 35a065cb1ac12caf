#pragma once

// Stage 2 and the comparison models. Every model maps a batch of
// (x, s, z) rows to one logit per row and is trained on (weighted) binary
// cross-entropy with validation-AUROC early stopping.
//
//   primed            attention over x and s driven by z, then a 2-layer MLP on
//                     [x * softmax(W_x z); s * softmax(W_s z); z]
//   stage2_only       same architecture, z replaced by a learned projection of [x; s]
//   dnn               2-layer MLP on [x; s]
//   latent_logistic   logistic regression on z alone

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "primed/autodiff.hpp"
#include "primed/data.hpp"
#include "primed/metrics.hpp"
#include "primed/nn.hpp"
#include "primed/optim.hpp"

namespace primed {

enum class ModelKind { primed, stage2_only, dnn, latent_logistic };

inline std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::primed: return "primed";
    case ModelKind::stage2_only: return "stage2_only";
    case ModelKind::dnn: return "dnn";
    case ModelKind::latent_logistic: return "latent_logistic";
  }
  return "unknown";
}

inline std::optional<ModelKind> model_kind_from_string(const std::string& s) {
  for (auto k : {ModelKind::primed, ModelKind::stage2_only, ModelKind::dnn, ModelKind::latent_logistic}) {
    if (to_string(k) == s) return k;
  }
  return std::nullopt;
}

struct ClassifierShape {
  std::size_t features = 0;   ///< M
  std::size_t sensitive = 0;  ///< encoded width of s
  std::size_t latent = 8;     ///< K
  std::size_t hidden = 64;

  friend bool operator==(const ClassifierShape&, const ClassifierShape&) = default;
};

/// Row-aligned model inputs. `z` is empty for models that do not read it.
struct ModelInputs {
  Tensor x;
  Tensor s;
  Tensor z;

  std::size_t rows() const { return x.rows(); }

  ModelInputs take(std::span<const std::size_t> idx) const {
    ModelInputs out{take_rows(x, idx), take_rows(s, idx), Tensor()};
    if (z.size() != 0) out.z = take_rows(z, idx);
    return out;
  }
};

inline ModelInputs inputs_from(const Dataset& d, Tensor z = Tensor()) {
  return ModelInputs{feature_matrix(d), sensitive_matrix(d), std::move(z)};
}

inline bool needs_latent(ModelKind kind) { return kind == ModelKind::primed || kind == ModelKind::latent_logistic; }

class Classifier {
 public:
  Classifier() = default;

  static Classifier initialize(ModelKind kind, const ClassifierShape& shape, std::uint64_t seed) {
    Classifier c;
    c.kind_ = kind;
    c.shape_ = shape;
    Rng rng = derived_rng(seed, 0x9d1c + static_cast<std::uint64_t>(kind));
    const std::size_t m = shape.features, j = shape.sensitive, k = shape.latent, h = shape.hidden;
    switch (kind) {
      case ModelKind::primed:
        c.params_.add("attention.x", glorot(m, k, rng));
        c.params_.add("attention.s", glorot(j, k, rng));
        Mlp::create(c.params_, "mlp", m + j + k, h, 1, rng);
        break;
      case ModelKind::stage2_only:
        c.params_.add("attention.x", glorot(m, k, rng));
        c.params_.add("attention.s", glorot(j, k, rng));
        Dense::create(c.params_, "projection", m + j, k, rng);
        Mlp::create(c.params_, "mlp", m + j + k, h, 1, rng);
        break;
      case ModelKind::dnn:
        Mlp::create(c.params_, "mlp", m + j, h, 1, rng);
        break;
      case ModelKind::latent_logistic:
        Dense::create(c.params_, "logistic", k, 1, rng);
        break;
    }
    return c;
  }

  static Classifier from_params(ModelKind kind, const ClassifierShape& shape, ParamSet params) {
    Classifier c = initialize(kind, shape, 0);
    if (c.params_.names() != params.names()) throw DimensionError("classifier: parameter names do not match model kind");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i].shape() != c.params_[i].shape()) {
        throw DimensionError("classifier: parameter '" + params.name(i) + "' has shape " +
                             shape_string(params[i].shape()) + ", expected " + shape_string(c.params_[i].shape()));
      }
    }
    c.params_ = std::move(params);
    return c;
  }

  ModelKind kind() const { return kind_; }
  const ClassifierShape& shape() const { return shape_; }
  const ParamSet& params() const { return params_; }
  ParamSet& params() { return params_; }

  void check(const ModelInputs& in) const {
    const std::size_t n = in.x.rows();
    if (!in.x.is_matrix() || in.x.cols() != shape_.features) {
      throw DimensionError("classifier: x has shape " + shape_string(in.x.shape()) + ", expected N x " +
                           std::to_string(shape_.features));
    }
    if (!in.s.is_matrix() || in.s.cols() != shape_.sensitive || in.s.rows() != n) {
      throw DimensionError("classifier: s has shape " + shape_string(in.s.shape()) + ", expected " +
                           std::to_string(n) + " x " + std::to_string(shape_.sensitive));
    }
    if (needs_latent(kind_) && (!in.z.is_matrix() || in.z.cols() != shape_.latent || in.z.rows() != n)) {
      throw DimensionError("classifier: z has shape " + shape_string(in.z.shape()) + ", expected " +
                           std::to_string(n) + " x " + std::to_string(shape_.latent));
    }
  }

  /// One logit per row (N x 1).
  ad::NodeId logits(ad::Graph& g, const BoundParams& p, const ModelInputs& in) const {
    check(in);
    ad::NodeId x = g.constant(in.x);
    ad::NodeId s = g.constant(in.s);
    switch (kind_) {
      case ModelKind::primed:
        return attention_head(g, p, x, s, g.constant(in.z));
      case ModelKind::stage2_only: {
        ad::NodeId z = Dense::lookup(params_, "projection").forward(g, p, g.concat_cols({x, s}));
        return attention_head(g, p, x, s, z);
      }
      case ModelKind::dnn:
        return Mlp::lookup(params_, "mlp").forward(g, p, g.concat_cols({x, s}));
      case ModelKind::latent_logistic:
        return Dense::lookup(params_, "logistic").forward(g, p, g.constant(in.z));
    }
    throw DimensionError("classifier: unknown model kind");
  }

  friend bool operator==(const Classifier&, const Classifier&) = default;

 private:
  ad::NodeId attention_head(ad::Graph& g, const BoundParams& p, ad::NodeId x, ad::NodeId s, ad::NodeId z) const {
    // Row-wise softmax(W z^T): for a batch Z (N x K) the logits are Z W^T.
    ad::NodeId wx = g.softmax(g.matmul(z, g.transpose(p[params_.index_of("attention.x")])));
    ad::NodeId ws = g.softmax(g.matmul(z, g.transpose(p[params_.index_of("attention.s")])));
    ad::NodeId joined = g.concat_cols({g.mul(x, wx), g.mul(s, ws), z});
    return Mlp::lookup(params_, "mlp").forward(g, p, joined);
  }

  ModelKind kind_ = ModelKind::dnn;
  ClassifierShape shape_;
  ParamSet params_;
};

/// softmax(W z) for a D x K matrix W and a length-K z.
inline std::vector<double> attention_weights(const Tensor& w, std::span<const double> z) {
  if (!w.is_matrix() || w.cols() != z.size()) {
    throw DimensionError("attention_weights: W of shape " + shape_string(w.shape()) + " does not match z of length " +
                         std::to_string(z.size()));
  }
  ad::Graph g;
  ad::NodeId zn = g.constant(Tensor::matrix(z.size(), 1, {z.begin(), z.end()}));
  ad::NodeId logits = g.transpose(g.matmul(g.constant(w), zn));
  const Tensor& out = g.value(g.softmax(logits));
  return {out.values().begin(), out.values().end()};
}

/// Probabilities sigmoid(logit), one per row.
inline std::vector<double> predict(const Classifier& model, const ModelInputs& in) {
  ad::Graph g;
  BoundParams p = bind_constant(g, model.params());
  const Tensor& logits = g.value(model.logits(g, p, in));
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad::detail::sigmoid(logits[i]);
  return out;
}

enum class ClassWeightMode { none, kamiran };

struct PredictorTrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 128;
  double learning_rate = 1e-4;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;
  std::size_t patience = 10;
  ClassWeightMode class_weights = ClassWeightMode::none;
  std::size_t reweight_attribute = 0;  ///< sensitive attribute grouping the kamiran cells
};

/// (1/B) sum_i w_i BCE(sigmoid(l_i), y_i), with BCE written as softplus(l) - y l.
inline ad::NodeId bce_loss(ad::Graph& g, ad::NodeId logits, std::span<const int> labels,
                           std::optional<std::span<const double>> weights) {
  const Tensor& lv = g.value(logits);
  if (lv.size() != labels.size()) throw DimensionError("bce_loss: logits and labels differ in length");
  ad::NodeId l = g.row_sum(logits);
  std::vector<double> y(labels.begin(), labels.end());
  ad::NodeId per_row = g.sub(g.softplus(l), g.mul(g.constant(Tensor::vector(y)), l));
  if (weights) per_row = g.mul(per_row, g.constant(Tensor::vector({weights->begin(), weights->end()})));
  return g.scale(g.reduce_sum(per_row), 1.0 / static_cast<double>(labels.size()));
}

struct ClassifierTrainResult {
  Classifier model;
  std::vector<double> loss_trace;      ///< mean batch loss per epoch
  std::vector<double> validation_trace;  ///< validation AUROC per epoch (NaN if undefined)
  std::size_t best_epoch = 0;          ///< 1-based epoch whose parameters were kept
};

/// Minibatch AdamW on the BCE loss. Keeps the parameters with the best
/// validation AUROC and stops after `patience` epochs without improvement.
/// When validation AUROC is undefined the final parameters are kept.
inline ClassifierTrainResult train_classifier(Classifier model, const ModelInputs& train, std::span<const int> labels,
                                              std::optional<std::span<const double>> weights,
                                              const ModelInputs& validation, std::span<const int> validation_labels,
                                              const PredictorTrainConfig& config) {
  model.check(train);
  const std::size_t n = train.rows();
  if (labels.size() != n) throw DimensionError("train: labels do not match inputs");
  if (weights && weights->size() != n) throw DimensionError("train: weights do not match inputs");
  if (config.epochs == 0 || config.batch_size == 0) throw DimensionError("train: epochs and batch size must be positive");

  const bool validate = validation.rows() > 0 &&
                        std::count(validation_labels.begin(), validation_labels.end(), 1) > 0 &&
                        std::count(validation_labels.begin(), validation_labels.end(), 0) > 0;

  Rng order_rng = derived_rng(config.seed, 0xba7c);
  AdamW optimizer(AdamConfig{config.learning_rate, config.weight_decay});
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  ClassifierTrainResult result;
  ParamSet best = model.params();
  double best_auroc = -1.0;
  std::size_t since_best = 0;
  std::vector<int> batch_labels;
  std::vector<double> batch_weights;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t end = std::min(n, start + config.batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      const ModelInputs batch = train.take(idx);
      batch_labels.clear();
      batch_weights.clear();
      for (auto i : idx) {
        batch_labels.push_back(labels[i]);
        if (weights) batch_weights.push_back((*weights)[i]);
      }
      ad::Graph g;
      BoundParams p = bind(g, model.params());
      ad::NodeId loss = bce_loss(g, model.logits(g, p, batch), batch_labels,
                                 weights ? std::optional<std::span<const double>>(batch_weights) : std::nullopt);
      const double lv = g.value(loss).item();
      if (!std::isfinite(lv)) {
        throw TrainingError(to_string(model.kind()) + ": non-finite loss at epoch " + std::to_string(epoch + 1) +
                            ", batch " + std::to_string(batches + 1));
      }
      optimizer.step(model.params().values(), gradients_for(g.backward(loss), p));
      total += lv;
      ++batches;
    }
    result.loss_trace.push_back(total / static_cast<double>(batches));

    if (validate) {
      const double a = auroc(predict(model, validation), validation_labels);
      result.validation_trace.push_back(a);
      if (a > best_auroc) {
        best_auroc = a;
        best = model.params();
        result.best_epoch = epoch + 1;
        since_best = 0;
      } else if (++since_best >= config.patience) {
        break;
      }
    } else {
      result.validation_trace.push_back(std::nan(""));
      result.best_epoch = epoch + 1;
    }
  }
  if (validate) model.params() = std::move(best);
  result.model = std::move(model);
  return result;
}

/// Weight P(g) P(y) / P(g, y) per record, with g the category of the chosen
/// attribute and probabilities taken over `train`.
inline std::vector<double> kamiran_weights(const Dataset& train, std::size_t attribute = 0) {
  if (train.records.empty()) throw DataError("kamiran_weights: empty training set");
  if (attribute >= train.schema.size()) throw DataError("kamiran_weights: attribute index out of range");
  const std::size_t groups = train.schema[attribute].categories.size();
  std::vector<std::size_t> group_count(groups, 0);
  std::vector<std::array<std::size_t, 2>> cell(groups, {0, 0});
  std::array<std::size_t, 2> label_count{0, 0};
  for (const auto& r : train.records) {
    ++group_count[r.s[attribute]];
    ++cell[r.s[attribute]][static_cast<std::size_t>(r.y)];
    ++label_count[static_cast<std::size_t>(r.y)];
  }
  for (std::size_t g = 0; g < groups; ++g) {
    if (group_count[g] == 0) continue;
    for (int y = 0; y < 2; ++y) {
      if (label_count[static_cast<std::size_t>(y)] > 0 && cell[g][static_cast<std::size_t>(y)] == 0) {
        throw DataError("kamiran_weights: empty cell (" + train.schema[attribute].name + "=" +
                        train.schema[attribute].categories[g] + ", y=" + std::to_string(y) + ")");
      }
    }
  }
  const double n = static_cast<double>(train.size());
  std::vector<double> w;
  w.reserve(train.size());
  for (const auto& r : train.records) {
    const double pg = static_cast<double>(group_count[r.s[attribute]]) / n;
    const double py = static_cast<double>(label_count[static_cast<std::size_t>(r.y)]) / n;
    const double pgy = static_cast<double>(cell[r.s[attribute]][static_cast<std::size_t>(r.y)]) / n;
    w.push_back(pg * py / pgy);
  }
  return w;
}

// ---------------------------------------------------------------------------
// Named entry points for each method.

struct TrainingData {
  ModelInputs train;
  std::vector<int> train_labels;
  ModelInputs validation;
  std::vector<int> validation_labels;
};

inline ClassifierShape classifier_shape(const ModelInputs& in, std::size_t latent, std::size_t hidden) {
  return ClassifierShape{in.x.cols(), in.s.cols(), latent, hidden};
}

inline ClassifierTrainResult train_primed(const TrainingData& data, std::size_t hidden,
                                          const PredictorTrainConfig& config) {
  auto shape = classifier_shape(data.train, data.train.z.cols(), hidden);
  return train_classifier(Classifier::initialize(ModelKind::primed, shape, config.seed), data.train,
                          data.train_labels, std::nullopt, data.validation, data.validation_labels, config);
}

/// Plain DNN baseline, or the re-weighting baseline when
/// `config.class_weights == kamiran` (weights computed from `train_set`).
inline ClassifierTrainResult train_dnn(const TrainingData& data, const Dataset& train_set, std::size_t hidden,
                                       const PredictorTrainConfig& config) {
  auto shape = classifier_shape(data.train, 0, hidden);
  std::vector<double> w;
  if (config.class_weights == ClassWeightMode::kamiran) w = kamiran_weights(train_set, config.reweight_attribute);
  return train_classifier(Classifier::initialize(ModelKind::dnn, shape, config.seed), data.train, data.train_labels,
                          w.empty() ? std::nullopt : std::optional<std::span<const double>>(w), data.validation,
                          data.validation_labels, config);
}

/// Logistic classifier on the substitute confounders alone.
inline ClassifierTrainResult ablation_stage1_only(const TrainingData& data, const PredictorTrainConfig& config) {
  auto shape = classifier_shape(data.train, data.train.z.cols(), 0);
  return train_classifier(Classifier::initialize(ModelKind::latent_logistic, shape, config.seed), data.train,
                          data.train_labels, std::nullopt, data.validation, data.validation_labels, config);
}

/// Stage-2 architecture with z replaced by a learned K-dim projection of [x; s].
inline ClassifierTrainResult ablation_stage2_only(const TrainingData& data, std::size_t latent, std::size_t hidden,
                                                  const PredictorTrainConfig& config) {
  auto shape = classifier_shape(data.train, latent, hidden);
  return train_classifier(Classifier::initialize(ModelKind::stage2_only, shape, config.seed), data.train,
                          data.train_labels, std::nullopt, data.validation, data.validation_labels, config);
}

}  // namespace primed
