#pragma once

// End-to-end runs behind the command-line tool. Each run owns one output
// directory:
//
//   config.ini               canonical snapshot of the parsed configuration
//   run.log                  progress with timestamps (the only timestamped file)
//   checkpoints/*.ckpt       stage-1 CVAE and one classifier per method
//   traces/*.csv             per-epoch training objectives
//   scores/<method>.csv      record_id, score, label, sensitive columns
//   metrics.csv / .json      one row per method, with the split hash
//   table.txt                fixed-width results table
//
// Everything except run.log is a pure function of the configuration.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "primed/checkpoint.hpp"
#include "primed/config.hpp"
#include "primed/experiment.hpp"
#include "primed/metrics.hpp"
#include "primed/synth.hpp"

namespace primed {

namespace fs = std::filesystem;

inline Dataset load_dataset(const ExperimentConfig& config) {
  if (config.source == DataSource::synth) return generate(config.synth).dataset;
  return load_csv(config.csv_path, config.columns);
}

inline std::string hex_hash(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline void write_text(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out << content;
  if (!out) throw DataError("failed writing '" + path.string() + "'");
}

/// Append-only progress log; each line starts with a UTC timestamp.
class RunLog {
 public:
  explicit RunLog(fs::path path) : path_(std::move(path)) {
    if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
  }

  void line(const std::string& message) const {
    std::ofstream out(path_, std::ios::app);
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ") << " " << message << "\n";
  }

 private:
  fs::path path_;
};

// ---------------------------------------------------------------------------
// Result rows and their serializations

struct MethodRow {
  Method method = Method::dnn;
  bool ok = false;
  std::string error;
  std::uint64_t split_hash = 0;
  std::optional<MetricsReport> report;
};

struct CompareResult {
  std::uint64_t split_hash = 0;
  std::vector<MethodRow> rows;  ///< ordered as in all_methods()

  bool ok() const {
    for (const auto& r : rows) {
      if (!r.ok) return false;
    }
    return true;
  }
  const MethodRow* find(Method m) const {
    for (const auto& r : rows) {
      if (r.method == m) return &r;
    }
    return nullptr;
  }
};

inline std::string metrics_csv(const CompareResult& result) {
  // Metric columns come from the first successful row; every row shares the test set.
  std::vector<std::string> keys;
  for (const auto& r : result.rows) {
    if (r.report) {
      for (const auto& [k, v] : flatten(*r.report)) keys.push_back(k);
      break;
    }
  }
  std::string out = "method,status,split_hash";
  for (const auto& k : keys) out += "," + csv::quote(k);
  out += ",error\n";
  for (const auto& r : result.rows) {
    out += to_string(r.method) + "," + (r.ok ? "ok" : "failed") + "," + hex_hash(r.split_hash);
    if (r.report) {
      for (const auto& [k, v] : flatten(*r.report)) out += "," + csv::quote(v);
    } else {
      for (std::size_t i = 0; i < keys.size(); ++i) out += ",";
    }
    out += "," + csv::quote(r.error) + "\n";
  }
  return out;
}

inline nlohmann::json metrics_json(const CompareResult& result) {
  nlohmann::json j;
  j["split_hash"] = hex_hash(result.split_hash);
  j["methods"] = nlohmann::json::array();
  for (const auto& r : result.rows) {
    nlohmann::json row;
    row["method"] = to_string(r.method);
    row["status"] = r.ok ? "ok" : "failed";
    row["split_hash"] = hex_hash(r.split_hash);
    row["metrics"] = r.report ? to_json(*r.report) : nlohmann::json(nullptr);
    if (!r.ok) row["error"] = r.error;
    j["methods"].push_back(std::move(row));
  }
  return j;
}

/// Fixed-width table: AUROC, then disparity and equalized-odds gaps per attribute.
inline std::string results_table(const CompareResult& result) {
  std::vector<std::string> attributes;
  for (const auto& r : result.rows) {
    if (r.report) {
      for (const auto& a : r.report->attributes) attributes.push_back(a.attribute);
      break;
    }
  }
  auto cell = [](const std::optional<double>& v) {
    if (!v) return std::string("-");
    std::ostringstream s;
    s << std::fixed << std::setprecision(4) << *v;
    return s.str();
  };
  std::ostringstream o;
  o << std::left << std::setw(13) << "Method" << std::setw(9) << "AUROC";
  for (const auto& a : attributes) {
    o << std::setw(16) << (a + " disparity") << std::setw(16) << (a + " EO TPR") << std::setw(16) << (a + " EO FPR");
  }
  o << "\n";
  for (const auto& r : result.rows) {
    o << std::left << std::setw(13) << to_string(r.method);
    if (!r.report) {
      o << "failed: " << r.error << "\n";
      continue;
    }
    o << std::setw(9) << cell(r.report->auroc);
    for (const auto& a : r.report->attributes) {
      o << std::setw(16) << cell(a.disparity) << std::setw(16) << cell(a.equalized_odds.tpr_gap) << std::setw(16)
        << cell(a.equalized_odds.fpr_gap);
    }
    o << "\n";
  }
  return o.str();
}

/// record_id is the row's position in the full dataset.
inline std::string scores_csv(std::span<const double> scores, const Dataset& part, std::span<const std::size_t> ids) {
  std::string out = "record_id,score," + csv::quote(part.label_name);
  for (const auto& a : part.schema.attributes()) out += "," + csv::quote(a.name);
  out += "\n";
  for (std::size_t i = 0; i < part.size(); ++i) {
    out += std::to_string(ids[i]) + "," + csv::format_double(scores[i]) + "," + std::to_string(part.records[i].y);
    for (std::size_t j = 0; j < part.schema.size(); ++j) out += "," + csv::quote(part.category(i, j));
    out += "\n";
  }
  return out;
}

inline std::string trace_csv(const std::string& column, std::span<const double> values,
                             std::span<const double> validation = {}) {
  std::string out = "epoch," + column + (validation.empty() ? "" : ",validation_auroc") + "\n";
  for (std::size_t e = 0; e < values.size(); ++e) {
    out += std::to_string(e + 1) + "," + csv::format_double(values[e]);
    if (!validation.empty()) out += "," + (e < validation.size() ? csv::format_double(validation[e]) : "");
    out += "\n";
  }
  return out;
}

inline ModelKind model_kind_for(Method m) {
  switch (m) {
    case Method::primed: return ModelKind::primed;
    case Method::stage1: return ModelKind::latent_logistic;
    case Method::stage2: return ModelKind::stage2_only;
    case Method::dnn:
    case Method::reweighting: return ModelKind::dnn;
  }
  return ModelKind::dnn;
}

inline std::vector<Method> ordered_methods(const std::vector<Method>& requested) {
  std::vector<Method> out;
  for (Method m : all_methods()) {
    if (std::find(requested.begin(), requested.end(), m) != requested.end()) out.push_back(m);
  }
  return out;
}

inline void write_metrics(const fs::path& dir, const CompareResult& result) {
  write_text(dir / "metrics.csv", metrics_csv(result));
  write_text(dir / "metrics.json", metrics_json(result).dump(2) + "\n");
  write_text(dir / "table.txt", results_table(result));
}

// ---------------------------------------------------------------------------
// train / compare / evaluate

namespace pipeline_detail {

inline PredictorTrainConfig method_config(Method m, const ExperimentSettings& s) {
  PredictorTrainConfig cfg = s.predictor;
  cfg.class_weights = m == Method::reweighting ? ClassWeightMode::kamiran : ClassWeightMode::none;
  return cfg;
}

/// Trains stage 1 (when needed) and every requested method. With `evaluate`
/// set, test scores, metrics and the table are written as well.
inline CompareResult execute(const ExperimentConfig& config, bool evaluate) {
  const fs::path dir = config.output_dir;
  fs::create_directories(dir);
  RunLog log(dir / "run.log");
  log.line(std::string(evaluate ? "compare" : "train") + " started in " + fs::absolute(dir).string());
  write_text(dir / "config.ini", render_config(config));

  const PreparedData data = prepare(load_dataset(config), config.ratios, config.split_seed);
  CompareResult result;
  result.split_hash = data.indices.hash();
  log.line("split " + hex_hash(result.split_hash) + ": train " + std::to_string(data.train.size()) +
           ", validation " + std::to_string(data.validation.size()) + ", test " + std::to_string(data.test.size()));

  const std::vector<Method> methods = ordered_methods(config.methods);
  std::optional<Stage1Outcome> stage1;
  std::string stage1_error;
  if (std::any_of(methods.begin(), methods.end(), uses_stage1)) {
    try {
      log.line("stage 1: training cvae");
      stage1 = run_stage1(data, config.settings);
      save_checkpoint(to_checkpoint(CvaeCheckpoint{stage1->model, config.settings.cvae, data.scaler,
                                                   config.settings.normalize_weights}),
                      (dir / "checkpoints" / "cvae.ckpt").string());
      write_text(dir / "traces" / "cvae.csv", trace_csv("weighted_elbo", stage1->trace));
      log.line("stage 1: weighted elbo " + csv::format_double(stage1->trace.front()) + " -> " +
               csv::format_double(stage1->trace.back()));
    } catch (const std::exception& e) {
      stage1_error = std::string("stage 1 cvae: ") + e.what();
      log.line(stage1_error);
    }
  }

  for (Method m : methods) {
    MethodRow row;
    row.method = m;
    row.split_hash = result.split_hash;
    try {
      if (uses_stage1(m) && !stage1) throw TrainingError(stage1_error);
      log.line(to_string(m) + ": training");
      ExperimentSettings settings = config.settings;
      settings.predictor = method_config(m, config.settings);
      MethodOutcome outcome = run_method(m, data, stage1 ? &*stage1 : nullptr, settings);
      save_checkpoint(to_checkpoint(ClassifierCheckpoint{outcome.model, settings.predictor, data.scaler}),
                      (dir / "checkpoints" / (to_string(m) + ".ckpt")).string());
      write_text(dir / "traces" / (to_string(m) + ".csv"), trace_csv("loss", outcome.loss_trace));
      if (evaluate) {
        write_text(dir / "scores" / (to_string(m) + ".csv"), scores_csv(outcome.test_scores, data.test, data.indices.test));
        row.report = std::move(outcome.report);
      }
      row.ok = true;
      log.line(to_string(m) + ": done, best epoch " + std::to_string(outcome.best_epoch));
    } catch (const std::exception& e) {
      row.error = e.what();
      log.line(to_string(m) + ": failed: " + row.error);
    }
    result.rows.push_back(std::move(row));
  }
  if (evaluate) write_metrics(dir, result);
  log.line(result.ok() ? "finished" : "finished with failures");
  return result;
}

}  // namespace pipeline_detail

/// Trains every method and saves checkpoints and traces, without scoring.
inline CompareResult run_train(const ExperimentConfig& config) { return pipeline_detail::execute(config, false); }

/// Trains every method on one split and writes scores, metrics and the table.
/// A failing method is recorded as a failed row; the others still run.
inline CompareResult run_compare(const ExperimentConfig& config) { return pipeline_detail::execute(config, true); }

/// Scores the test part with checkpoints from an earlier `train` or `compare`.
inline CompareResult run_evaluate(const ExperimentConfig& config, const fs::path& checkpoint_dir) {
  const fs::path dir = config.output_dir;
  fs::create_directories(dir);
  RunLog log(dir / "run.log");
  log.line("evaluate started with checkpoints from " + fs::absolute(checkpoint_dir).string());

  const Dataset full = load_dataset(config);
  const SplitIndices idx = split_indices(full.size(), config.ratios, config.split_seed);
  CompareResult result;
  result.split_hash = idx.hash();
  const std::vector<Method> methods = ordered_methods(config.methods);

  std::optional<CvaeCheckpoint> cvae;
  std::string cvae_error;
  if (std::any_of(methods.begin(), methods.end(), uses_stage1)) {
    try {
      cvae = cvae_from_checkpoint(load_checkpoint((checkpoint_dir / "cvae.ckpt").string()));
    } catch (const std::exception& e) {
      cvae_error = e.what();
    }
  }

  for (Method m : methods) {
    MethodRow row;
    row.method = m;
    row.split_hash = result.split_hash;
    try {
      if (uses_stage1(m) && !cvae) throw DataError(cvae_error);
      ClassifierCheckpoint ck = classifier_from_checkpoint(load_checkpoint((checkpoint_dir / (to_string(m) + ".ckpt")).string()));
      if (ck.model.kind() != model_kind_for(m)) {
        throw DataError("checkpoint for " + to_string(m) + " holds a " + to_string(ck.model.kind()) + " model");
      }
      const Dataset test = ck.scaler.apply(full.subset(idx.test));
      Tensor z;
      if (uses_stage1(m)) {
        if (!(cvae->scaler.mean == ck.scaler.mean && cvae->scaler.std == ck.scaler.std)) {
          throw DataError("cvae and " + to_string(m) + " checkpoints were fitted on different data");
        }
        z = infer_substitute_confounders(cvae->model, test);
      }
      const std::vector<double> scores = predict(ck.model, inputs_from(test, z));
      write_text(dir / "scores" / (to_string(m) + ".csv"), scores_csv(scores, test, idx.test));
      row.report = report(scores, test, config.settings.threshold);
      row.ok = true;
      log.line(to_string(m) + ": evaluated");
    } catch (const std::exception& e) {
      row.error = e.what();
      log.line(to_string(m) + ": failed: " + row.error);
    }
    result.rows.push_back(std::move(row));
  }
  write_metrics(dir, result);
  log.line(result.ok() ? "finished" : "finished with failures");
  return result;
}

// ---------------------------------------------------------------------------
// pilot sweep and latent export

inline std::string pilot_csv(const PilotResult& r) {
  std::string out = "kind,gamma,seed,auroc,disparity\n";
  auto num = [](double v) { return std::isnan(v) ? std::string("undefined") : csv::format_double(v); };
  for (const auto& run : r.runs) {
    out += "run," + num(run.gamma) + "," + std::to_string(run.seed) + "," + num(run.auroc) + "," + num(run.disparity) + "\n";
  }
  for (const auto& m : r.medians) {
    out += "median," + num(m.gamma) + ",," + num(m.median_auroc) + "," + num(m.median_disparity) + "\n";
  }
  return out;
}

inline PilotResult run_pilot(const ExperimentConfig& config) {
  if (config.source != DataSource::synth) throw ConfigError("pilot needs data.source = synth");
  if (config.pilot_seeds.empty()) throw ConfigError("pilot.seeds is empty");
  if (config.pilot_gammas.empty()) throw ConfigError("pilot.gammas is empty");
  const fs::path dir = config.output_dir;
  fs::create_directories(dir);
  RunLog log(dir / "run.log");
  log.line("pilot started: " + std::to_string(config.pilot_gammas.size()) + " gammas x " +
           std::to_string(config.pilot_seeds.size()) + " seeds");
  write_text(dir / "config.ini", render_config(config));
  PilotResult result = pilot_sweep(config.synth, config.pilot_gammas, config.pilot_seeds, config.settings, config.ratios);
  write_text(dir / "pilot.csv", pilot_csv(result));
  log.line("finished");
  return result;
}

/// Posterior means for every record of the configured dataset.
inline std::string latent_csv(const CvaeCheckpoint& ck, const Dataset& dataset) {
  const CvaeShape& shape = ck.model.shape();
  if (dataset.num_features() != shape.features || dataset.schema.encoded_width() != shape.sensitive) {
    throw DimensionError("checkpoint expects " + std::to_string(shape.features) + " features and " +
                         std::to_string(shape.sensitive) + " encoded sensitive columns; dataset has " +
                         std::to_string(dataset.num_features()) + " and " +
                         std::to_string(dataset.schema.encoded_width()));
  }
  const Dataset scaled = ck.scaler.apply(dataset);
  const Tensor z = infer_substitute_confounders(ck.model, scaled);
  std::string out = "record_id";
  for (std::size_t k = 0; k < shape.latent; ++k) out += ",z" + std::to_string(k + 1);
  for (const auto& a : dataset.schema.attributes()) out += "," + csv::quote(a.name);
  out += "\n";
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    out += std::to_string(i);
    for (double v : z.row(i)) out += "," + csv::format_double(v);
    for (std::size_t j = 0; j < dataset.schema.size(); ++j) out += "," + csv::quote(dataset.category(i, j));
    out += "\n";
  }
  return out;
}

inline void export_latent(const ExperimentConfig& config, const fs::path& checkpoint, const fs::path& out) {
  const CvaeCheckpoint ck = cvae_from_checkpoint(load_checkpoint(checkpoint.string()));
  write_text(out, latent_csv(ck, load_dataset(config)));
}

}  // namespace primed
