#pragma once

// Synthetic records from a structural causal model with sensitive
// attributes S, an unobserved confounder Z, features X and outcome Y:
//
//   s_j ~ Bernoulli(minority)                    (binary, one-hot encoded)
//   z   ~ N(0, I_K)
//   x   = L(s) z + eta * B s + noise,  noise ~ N(0, sigma^2 I)
//   y   ~ Bernoulli(sigmoid(c_x . x + eta * c_s . s + gamma * c_z . z + b0))
//
// L(s) = A for the majority. For members of attribute j's minority the part
// of the loading orthogonal to c_x is rotated towards an independent matrix
// D_j by angle loading_shift * pi/2, so the confounder shows up in different
// feature directions for that group while c_x . x keeps the same law. With
// loading_shift = 0 the feature mechanism is the plain linear one.
//
// The intercept b0 is bisected so that half of the records are positive.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "primed/data.hpp"
#include "primed/error.hpp"
#include "primed/experiment.hpp"
#include "primed/random.hpp"

namespace primed {

struct SynthConfig {
  std::size_t records = 5000;      ///< N
  std::size_t features = 20;       ///< M
  std::size_t latent = 4;          ///< K_true
  std::size_t attributes = 1;      ///< J binary sensitive attributes
  double minority = 0.2;           ///< P(s_j = 1), in (0, 0.5]
  double gamma = 0.0;              ///< confounding strength Z -> Y
  double eta = 1.0;                ///< sensitive-effect strength S -> X, S -> Y
  double noise = 1.0;              ///< feature noise sigma
  double loading_shift = 1.0;      ///< minority loading rotation, in [0, 1]
  std::uint64_t seed = 0;

  /// Every violated constraint, as human-readable messages.
  std::vector<std::string> problems() const {
    std::vector<std::string> p;
    if (records < 1) p.emplace_back("records must be >= 1");
    if (features < 1) p.emplace_back("features must be >= 1");
    if (latent < 1) p.emplace_back("latent must be >= 1");
    if (attributes < 1) p.emplace_back("attributes must be >= 1");
    if (!(minority > 0.0 && minority <= 0.5)) p.emplace_back("minority must lie in (0, 0.5]");
    if (!(gamma >= 0.0)) p.emplace_back("gamma must be >= 0");
    if (!(eta >= 0.0)) p.emplace_back("eta must be >= 0");
    if (!(noise > 0.0)) p.emplace_back("noise must be > 0");
    if (!(loading_shift >= 0.0 && loading_shift <= 1.0)) p.emplace_back("loading_shift must lie in [0, 1]");
    return p;
  }

  void validate() const {
    auto p = problems();
    if (!p.empty()) throw ConfigError("invalid synth config: " + p.front());
  }
};

struct GroundTruth {
  Tensor z;                          ///< N x K_true
  Tensor loading;                    ///< A, M x K_true
  std::vector<Tensor> loading_shift; ///< per attribute, L_j - A (M x K_true)
  Tensor sensitive_effect;           ///< B, M x J_enc
  std::vector<double> outcome_x;     ///< c_x
  std::vector<double> outcome_s;     ///< c_s (J_enc)
  std::vector<double> outcome_z;     ///< c_z, before scaling by gamma
  double gamma = 0.0;
  double intercept = 0.0;
};

struct SynthResult {
  Dataset dataset;
  GroundTruth truth;
};

namespace synth_detail {

inline std::vector<double> scaled_normal(std::size_t n, double scale, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng) * scale;
  return v;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double logistic(double v) { return ad::detail::sigmoid(v); }

}  // namespace synth_detail

inline SynthResult generate(const SynthConfig& config) {
  using namespace synth_detail;
  config.validate();
  const std::size_t n = config.records, m = config.features, k = config.latent, j = config.attributes;
  const std::size_t j_enc = 2 * j;

  Rng coef_rng = derived_rng(config.seed, 1);
  GroundTruth truth;
  truth.gamma = config.gamma;
  truth.loading = Tensor::matrix(m, k, scaled_normal(m * k, 1.0 / std::sqrt(double(k)), coef_rng));
  truth.sensitive_effect = Tensor::matrix(m, j_enc, scaled_normal(m * j_enc, 1.0 / std::sqrt(double(j_enc)), coef_rng));
  std::vector<Tensor> alternative;
  for (std::size_t a = 0; a < j; ++a) {
    alternative.push_back(Tensor::matrix(m, k, scaled_normal(m * k, 1.0 / std::sqrt(double(k)), coef_rng)));
  }
  truth.outcome_x = scaled_normal(m, 1.0 / std::sqrt(double(m)), coef_rng);
  truth.outcome_s = scaled_normal(j_enc, 1.0 / std::sqrt(double(j_enc)), coef_rng);
  truth.outcome_z = scaled_normal(k, 1.0 / std::sqrt(double(k)), coef_rng);

  // Orthogonal complement of c_x applied to a loading matrix: Q M = M - c (c^T M) / |c|^2.
  const double cc = dot(truth.outcome_x, truth.outcome_x);
  auto project_out = [&](const Tensor& mat) {
    Tensor out = mat;
    for (std::size_t col = 0; col < k; ++col) {
      double proj = 0.0;
      for (std::size_t r = 0; r < m; ++r) proj += truth.outcome_x[r] * mat.at(r, col);
      for (std::size_t r = 0; r < m; ++r) out.at(r, col) -= truth.outcome_x[r] * proj / cc;
    }
    return out;
  };
  const double theta = config.loading_shift * std::numbers::pi / 2.0;
  const Tensor qa = project_out(truth.loading);
  for (std::size_t a = 0; a < j; ++a) {
    const Tensor qd = project_out(alternative[a]);
    Tensor shift(Shape{m, k});
    for (std::size_t i = 0; i < shift.size(); ++i) shift[i] = (std::cos(theta) - 1.0) * qa[i] + std::sin(theta) * qd[i];
    truth.loading_shift.push_back(std::move(shift));
  }

  Rng rec_rng = derived_rng(config.seed, 2);
  std::bernoulli_distribution minority(config.minority);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  Dataset ds;
  for (std::size_t f = 0; f < m; ++f) ds.feature_names.push_back("x" + std::to_string(f + 1));
  ds.label_name = "y";
  std::vector<SensitiveAttribute> attrs;
  for (std::size_t a = 0; a < j; ++a) attrs.push_back({"s" + std::to_string(a + 1), {"0", "1"}});
  ds.schema = SensitiveSchema(std::move(attrs));

  truth.z = Tensor(Shape{n, k});
  std::vector<double> base(n), u(n);
  ds.records.resize(n);
  std::vector<double> s_enc(j_enc);
  for (std::size_t i = 0; i < n; ++i) {
    Record& r = ds.records[i];
    r.s.resize(j);
    for (std::size_t a = 0; a < j; ++a) r.s[a] = minority(rec_rng) ? 1 : 0;
    auto zi = truth.z.row(i);
    for (auto& v : zi) v = normal(rec_rng);
    std::fill(s_enc.begin(), s_enc.end(), 0.0);
    for (std::size_t a = 0; a < j; ++a) s_enc[2 * a + r.s[a]] = 1.0;

    r.x.assign(m, 0.0);
    for (std::size_t f = 0; f < m; ++f) {
      double v = 0.0;
      for (std::size_t c = 0; c < k; ++c) v += truth.loading.at(f, c) * zi[c];
      for (std::size_t a = 0; a < j; ++a) {
        if (r.s[a] == 1) {
          for (std::size_t c = 0; c < k; ++c) v += truth.loading_shift[a].at(f, c) * zi[c];
        }
      }
      for (std::size_t c = 0; c < j_enc; ++c) v += config.eta * truth.sensitive_effect.at(f, c) * s_enc[c];
      r.x[f] = v + config.noise * normal(rec_rng);
    }
    base[i] = dot(truth.outcome_x, r.x) + config.eta * dot(truth.outcome_s, s_enc) +
              config.gamma * dot(truth.outcome_z, std::span<const double>(zi.data(), zi.size()));
    u[i] = unit(rec_rng);
  }

  auto positive_rate = [&](double b) {
    std::size_t pos = 0;
    for (std::size_t i = 0; i < n; ++i) pos += u[i] < logistic(base[i] + b) ? 1 : 0;
    return static_cast<double>(pos) / static_cast<double>(n);
  };
  double lo = -50.0, hi = 50.0;
  for (int it = 0; it < 200 && hi - lo > 1e-12; ++it) {
    const double mid = 0.5 * (lo + hi);
    (positive_rate(mid) < 0.5 ? lo : hi) = mid;
  }
  truth.intercept = hi;
  for (std::size_t i = 0; i < n; ++i) ds.records[i].y = u[i] < logistic(base[i] + hi) ? 1 : 0;

  return SynthResult{std::move(ds), std::move(truth)};
}

// ---------------------------------------------------------------------------
// Pilot sweep: disparity of the plain DNN as confounding strength grows.

struct PilotRun {
  double gamma = 0.0;
  std::uint64_t seed = 0;
  double auroc = 0.0;
  double disparity = 0.0;  ///< mean over attributes of the subgroup AUROC gap; NaN if undefined
};

struct PilotMedian {
  double gamma = 0.0;
  double median_disparity = 0.0;
  double median_auroc = 0.0;
};

struct PilotResult {
  std::vector<PilotRun> runs;
  std::vector<PilotMedian> medians;  ///< one per entry of the gamma list, in list order
};

inline double median(std::vector<double> values) {
  values.erase(std::remove_if(values.begin(), values.end(), [](double v) { return std::isnan(v); }), values.end());
  if (values.empty()) return std::nan("");
  std::sort(values.begin(), values.end());
  const std::size_t h = values.size() / 2;
  return values.size() % 2 == 1 ? values[h] : 0.5 * (values[h - 1] + values[h]);
}

/// One DNN baseline run on a fresh synthetic draw; the seed drives the
/// generator, the split, and training.
inline PilotRun pilot_run(SynthConfig config, double gamma, std::uint64_t seed, const SplitRatios& ratios,
                          ExperimentSettings settings) {
  config.gamma = gamma;
  config.seed = seed;
  settings.predictor.seed = seed;
  const PreparedData data = prepare(generate(config).dataset, ratios, seed);
  const MethodOutcome outcome = run_method(Method::dnn, data, nullptr, settings);
  return PilotRun{gamma, seed, outcome.report.auroc.value_or(std::nan("")),
                  outcome.report.mean_disparity().value_or(std::nan(""))};
}

inline PilotResult pilot_sweep(const SynthConfig& base, std::span<const double> gammas,
                               std::span<const std::uint64_t> seeds, const ExperimentSettings& settings,
                               const SplitRatios& ratios = {}) {
  if (gammas.empty()) throw ConfigError("pilot sweep needs at least one gamma level");
  if (seeds.empty()) throw ConfigError("pilot sweep needs at least one seed");
  PilotResult result;
  for (double gamma : gammas) {
    std::vector<double> disparities, aurocs;
    for (std::uint64_t seed : seeds) {
      PilotRun run = pilot_run(base, gamma, seed, ratios, settings);
      disparities.push_back(run.disparity);
      aurocs.push_back(run.auroc);
      result.runs.push_back(run);
    }
    result.medians.push_back(PilotMedian{gamma, median(disparities), median(aurocs)});
  }
  return result;
}

}  // namespace primed
