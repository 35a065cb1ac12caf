#pragma once

// Shared experiment plumbing: materialize a split, standardize on the
// training part, fit stage 1 when a method needs it, and train and score
// one method on the test part.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "primed/cvae.hpp"
#include "primed/data.hpp"
#include "primed/metrics.hpp"
#include "primed/predictor.hpp"

namespace primed {

enum class Method { primed, dnn, reweighting, stage1, stage2 };

inline const std::vector<Method>& all_methods() {
  static const std::vector<Method> methods{Method::primed, Method::dnn, Method::reweighting, Method::stage1,
                                           Method::stage2};
  return methods;
}

inline std::string to_string(Method m) {
  switch (m) {
    case Method::primed: return "primed";
    case Method::dnn: return "dnn";
    case Method::reweighting: return "reweighting";
    case Method::stage1: return "stage1";
    case Method::stage2: return "stage2";
  }
  return "unknown";
}

inline std::optional<Method> method_from_string(const std::string& s) {
  for (Method m : all_methods()) {
    if (to_string(m) == s) return m;
  }
  return std::nullopt;
}

inline bool uses_stage1(Method m) { return m == Method::primed || m == Method::stage1; }

struct ExperimentSettings {
  std::size_t latent = 8;
  std::size_t hidden = 64;
  CvaeTrainConfig cvae;
  bool normalize_weights = true;
  PredictorTrainConfig predictor;
  double threshold = 0.5;
};

struct PreparedData {
  Dataset train;
  Dataset validation;
  Dataset test;
  SplitIndices indices;
  FeatureScaler scaler;
};

/// Splits, then standardizes every part with statistics of the training part.
inline PreparedData prepare(const Dataset& dataset, const SplitRatios& ratios, std::uint64_t seed) {
  dataset.validate();
  DatasetSplit parts = split(dataset, ratios, seed);
  FeatureScaler scaler = FeatureScaler::fit(parts.train);
  return PreparedData{scaler.apply(std::move(parts.train)), scaler.apply(std::move(parts.validation)),
                      scaler.apply(std::move(parts.test)), std::move(parts.indices), std::move(scaler)};
}

struct Stage1Outcome {
  CvaeModel model;
  std::vector<double> trace;
  PropensityWeights weights;
  Tensor z_train;
  Tensor z_validation;
  Tensor z_test;
};

/// Propensity-weighted CVAE on the training part, then posterior means for all parts.
inline Stage1Outcome run_stage1(const PreparedData& data, const ExperimentSettings& settings) {
  Stage1Outcome out;
  out.weights = propensity_weights(attribute_frequencies(data.train), data.train, settings.normalize_weights);
  CvaeShape shape{data.train.num_features(), data.train.schema.encoded_width(), settings.latent, settings.hidden};
  CvaeTrainResult trained =
      train_cvae(CvaeModel::initialize(shape, settings.cvae.seed), feature_matrix(data.train),
                 sensitive_matrix(data.train), std::span<const double>(out.weights.values), settings.cvae);
  out.model = std::move(trained.model);
  out.trace = std::move(trained.trace);
  out.z_train = infer_substitute_confounders(out.model, data.train);
  out.z_validation = infer_substitute_confounders(out.model, data.validation);
  out.z_test = infer_substitute_confounders(out.model, data.test);
  return out;
}

struct MethodOutcome {
  Method method = Method::dnn;
  Classifier model;
  std::vector<double> loss_trace;
  std::size_t best_epoch = 0;
  std::vector<double> test_scores;
  MetricsReport report;
};

inline MethodOutcome run_method(Method method, const PreparedData& data, const Stage1Outcome* stage1,
                                const ExperimentSettings& settings) {
  if (uses_stage1(method) && stage1 == nullptr) {
    throw TrainingError(to_string(method) + " needs a trained stage-1 model");
  }
  TrainingData td;
  const bool latent = uses_stage1(method);
  td.train = inputs_from(data.train, latent ? stage1->z_train : Tensor());
  td.train_labels = labels_of(data.train);
  td.validation = inputs_from(data.validation, latent ? stage1->z_validation : Tensor());
  td.validation_labels = labels_of(data.validation);
  const ModelInputs test = inputs_from(data.test, latent ? stage1->z_test : Tensor());

  PredictorTrainConfig cfg = settings.predictor;
  ClassifierTrainResult trained;
  switch (method) {
    case Method::primed:
      trained = train_primed(td, settings.hidden, cfg);
      break;
    case Method::dnn:
      cfg.class_weights = ClassWeightMode::none;
      trained = train_dnn(td, data.train, settings.hidden, cfg);
      break;
    case Method::reweighting:
      cfg.class_weights = ClassWeightMode::kamiran;
      trained = train_dnn(td, data.train, settings.hidden, cfg);
      break;
    case Method::stage1:
      trained = ablation_stage1_only(td, cfg);
      break;
    case Method::stage2:
      trained = ablation_stage2_only(td, settings.latent, settings.hidden, cfg);
      break;
  }
  MethodOutcome out;
  out.method = method;
  out.test_scores = predict(trained.model, test);
  out.report = report(out.test_scores, data.test, settings.threshold);
  out.model = std::move(trained.model);
  out.loss_trace = std::move(trained.loss_trace);
  out.best_epoch = trained.best_epoch;
  return out;
}

}  // namespace primed
