#pragma once

// Experiment configuration: an INI-style file of [sections] holding
// `key = value` lines. `#` and `;` start comments. Every field has a
// default, so a few lines describe a full experiment:
//
//   [data]
//   source = synth
//   [run]
//   methods = primed, dnn
//   output = runs/demo

#include <algorithm>
#include <charconv>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "primed/data.hpp"
#include "primed/error.hpp"
#include "primed/experiment.hpp"
#include "primed/synth.hpp"

namespace primed {

enum class DataSource { synth, csv };

struct ExperimentConfig {
  DataSource source = DataSource::synth;
  SynthConfig synth;
  std::string csv_path;
  CsvColumns columns;

  SplitRatios ratios;
  std::uint64_t split_seed = 0;

  ExperimentSettings settings;
  std::vector<Method> methods{Method::primed, Method::dnn};
  std::string output_dir = "primed_run";

  std::vector<double> pilot_gammas{0.0, 1.0, 2.0};
  std::vector<std::uint64_t> pilot_seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
};

struct Diagnostic {
  std::size_t line = 0;  ///< 0 when the problem is not tied to a line
  std::string field;     ///< "section.key", or empty
  std::string message;
};

inline std::string to_string(const Diagnostic& d) {
  std::string out;
  if (d.line > 0) out += "line " + std::to_string(d.line) + ": ";
  if (!d.field.empty()) out += d.field + ": ";
  return out + d.message;
}

struct ConfigResult {
  std::optional<ExperimentConfig> config;
  std::vector<Diagnostic> diagnostics;
  bool ok() const { return config.has_value(); }
};

namespace config_detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct Entry {
  std::string value;
  std::size_t line = 0;
  bool used = false;
};

struct Document {
  std::map<std::string, std::map<std::string, Entry>> sections;
  std::map<std::string, std::size_t> section_lines;
};

inline Document parse(std::istream& in, std::vector<Diagnostic>& diags) {
  Document doc;
  std::string raw, section;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto cut = raw.find_first_of("#;");
    const std::string line = trim(cut == std::string::npos ? raw : raw.substr(0, cut));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) {
        diags.push_back({line_no, "", "malformed section header '" + line + "'"});
        continue;
      }
      section = trim(line.substr(1, line.size() - 2));
      if (doc.section_lines.count(section)) {
        diags.push_back({line_no, section, "section repeated (first at line " +
                                               std::to_string(doc.section_lines[section]) + ")"});
      } else {
        doc.section_lines[section] = line_no;
      }
      doc.sections[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      diags.push_back({line_no, "", "expected 'key = value', got '" + line + "'"});
      continue;
    }
    if (section.empty()) {
      diags.push_back({line_no, "", "key outside of any [section]"});
      continue;
    }
    const std::string key = trim(line.substr(0, eq));
    auto& entries = doc.sections[section];
    if (entries.count(key)) {
      diags.push_back({line_no, section + "." + key,
                       "key repeated (first at line " + std::to_string(entries[key].line) + ")"});
      continue;
    }
    entries[key] = Entry{trim(line.substr(eq + 1)), line_no, false};
  }
  return doc;
}

/// Typed reads from a parsed document; every problem becomes a diagnostic.
class Reader {
 public:
  Reader(Document& doc, std::vector<Diagnostic>& diags) : doc_(doc), diags_(diags) {}

  Entry* find(const std::string& section, const std::string& key) {
    auto s = doc_.sections.find(section);
    if (s == doc_.sections.end()) return nullptr;
    auto e = s->second.find(key);
    if (e == s->second.end()) return nullptr;
    e->second.used = true;
    return &e->second;
  }

  void error(const Entry* e, const std::string& section, const std::string& key, const std::string& message) {
    diags_.push_back({e ? e->line : 0, section + "." + key, message});
  }

  void read(const std::string& section, const std::string& key, double& out) {
    if (Entry* e = find(section, key)) {
      auto v = csv::parse_double(e->value);
      if (v && std::isfinite(*v)) {
        out = *v;
      } else {
        error(e, section, key, "expected a number, got '" + e->value + "'");
      }
    }
  }

  template <std::unsigned_integral T>
  void read(const std::string& section, const std::string& key, T& out) {
    if (Entry* e = find(section, key)) {
      auto v = parse_count(e->value);
      if (v) {
        out = static_cast<T>(*v);
      } else {
        error(e, section, key, "expected a non-negative integer, got '" + e->value + "'");
      }
    }
  }

  void read(const std::string& section, const std::string& key, bool& out) {
    if (Entry* e = find(section, key)) {
      if (e->value == "true") {
        out = true;
      } else if (e->value == "false") {
        out = false;
      } else {
        error(e, section, key, "expected true or false, got '" + e->value + "'");
      }
    }
  }

  void read(const std::string& section, const std::string& key, std::string& out) {
    if (Entry* e = find(section, key)) out = e->value;
  }

  static std::optional<std::uint64_t> parse_count(const std::string& s) {
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
    return v;
  }

  /// Reports keys and sections that nothing consumed.
  void report_unused(const std::map<std::string, std::vector<std::string>>& known) {
    for (auto& [section, entries] : doc_.sections) {
      if (!known.count(section)) {
        diags_.push_back({doc_.section_lines[section], section, "unknown section"});
        continue;
      }
      for (auto& [key, e] : entries) {
        if (!e.used) diags_.push_back({e.line, section + "." + key, "unknown key"});
      }
    }
  }

  bool has_section(const std::string& s) const { return doc_.sections.count(s) > 0; }
  std::size_t section_line(const std::string& s) const {
    auto it = doc_.section_lines.find(s);
    return it == doc_.section_lines.end() ? 0 : it->second;
  }

 private:
  Document& doc_;
  std::vector<Diagnostic>& diags_;
};

inline std::string method_list() {
  std::string out;
  for (Method m : all_methods()) out += (out.empty() ? "" : ", ") + to_string(m);
  return out;
}

}  // namespace config_detail

/// Parses and checks a configuration, reporting every violation found.
inline ConfigResult parse_config(std::istream& in) {
  using namespace config_detail;
  ConfigResult result;
  auto& diags = result.diagnostics;
  Document doc = parse(in, diags);
  Reader r(doc, diags);
  ExperimentConfig c;

  std::string source = "synth";
  r.read("data", "source", source);
  r.read("data", "path", c.csv_path);
  std::string features, sensitive, missing = "strict";
  r.read("data", "features", features);
  r.read("data", "sensitive", sensitive);
  r.read("data", "label", c.columns.label);
  r.read("data", "missing", missing);
  c.columns.features = split_list(features);
  c.columns.sensitive = split_list(sensitive);
  if (missing == "strict") {
    c.columns.missing = MissingPolicy::strict;
  } else if (missing == "impute_mean") {
    c.columns.missing = MissingPolicy::impute_mean;
  } else {
    diags.push_back({r.find("data", "missing")->line, "data.missing", "expected strict or impute_mean"});
  }

  SynthConfig& s = c.synth;
  r.read("synth", "records", s.records);
  r.read("synth", "features", s.features);
  r.read("synth", "latent", s.latent);
  r.read("synth", "attributes", s.attributes);
  r.read("synth", "minority", s.minority);
  r.read("synth", "gamma", s.gamma);
  r.read("synth", "eta", s.eta);
  r.read("synth", "noise", s.noise);
  r.read("synth", "loading_shift", s.loading_shift);
  r.read("synth", "seed", s.seed);

  if (source == "synth") {
    c.source = DataSource::synth;
    if (!c.csv_path.empty()) {
      diags.push_back({r.find("data", "path")->line, "data.path", "set while data.source is synth; choose one source"});
    }
    for (const auto& p : s.problems()) diags.push_back({r.section_line("synth"), "synth", p});
  } else if (source == "csv") {
    c.source = DataSource::csv;
    if (r.has_section("synth")) {
      diags.push_back({r.section_line("synth"), "synth", "present while data.source is csv; choose one source"});
    }
    if (c.csv_path.empty()) diags.push_back({0, "data.path", "required when data.source is csv"});
    if (c.columns.features.empty()) diags.push_back({0, "data.features", "required when data.source is csv"});
    if (c.columns.sensitive.empty()) diags.push_back({0, "data.sensitive", "required when data.source is csv"});
    if (c.columns.label.empty()) diags.push_back({0, "data.label", "required when data.source is csv"});
  } else {
    diags.push_back({r.find("data", "source")->line, "data.source", "expected synth or csv, got '" + source + "'"});
  }

  r.read("split", "train", c.ratios.train);
  r.read("split", "validation", c.ratios.validation);
  r.read("split", "test", c.ratios.test);
  r.read("split", "seed", c.split_seed);
  for (auto [name, v] : {std::pair{"train", c.ratios.train}, std::pair{"validation", c.ratios.validation},
                         std::pair{"test", c.ratios.test}}) {
    if (!(v > 0.0)) diags.push_back({0, std::string("split.") + name, "must be positive"});
  }
  const double total = c.ratios.train + c.ratios.validation + c.ratios.test;
  if (std::abs(total - 1.0) > 1e-9) {
    diags.push_back({r.section_line("split"), "split",
                     "train + validation + test must sum to 1, got " + csv::format_double(total)});
  }

  ExperimentSettings& st = c.settings;
  r.read("model", "latent", st.latent);
  r.read("model", "hidden", st.hidden);
  if (st.latent == 0) diags.push_back({0, "model.latent", "must be >= 1"});
  if (st.hidden == 0) diags.push_back({0, "model.hidden", "must be >= 1"});

  r.read("cvae", "samples", st.cvae.samples);
  r.read("cvae", "epochs", st.cvae.epochs);
  r.read("cvae", "batch_size", st.cvae.batch_size);
  r.read("cvae", "learning_rate", st.cvae.learning_rate);
  r.read("cvae", "weight_decay", st.cvae.weight_decay);
  r.read("cvae", "seed", st.cvae.seed);
  r.read("cvae", "normalize_weights", st.normalize_weights);
  if (st.cvae.samples == 0) diags.push_back({0, "cvae.samples", "must be >= 1"});
  if (st.cvae.epochs == 0) diags.push_back({0, "cvae.epochs", "must be >= 1"});
  if (st.cvae.batch_size == 0) diags.push_back({0, "cvae.batch_size", "must be >= 1"});
  if (!(st.cvae.learning_rate > 0)) diags.push_back({0, "cvae.learning_rate", "must be > 0"});
  if (!(st.cvae.weight_decay >= 0)) diags.push_back({0, "cvae.weight_decay", "must be >= 0"});

  PredictorTrainConfig& p = st.predictor;
  r.read("predictor", "epochs", p.epochs);
  r.read("predictor", "batch_size", p.batch_size);
  r.read("predictor", "learning_rate", p.learning_rate);
  r.read("predictor", "weight_decay", p.weight_decay);
  r.read("predictor", "seed", p.seed);
  r.read("predictor", "patience", p.patience);
  r.read("predictor", "reweight_attribute", p.reweight_attribute);
  if (p.epochs == 0) diags.push_back({0, "predictor.epochs", "must be >= 1"});
  if (p.batch_size == 0) diags.push_back({0, "predictor.batch_size", "must be >= 1"});
  if (!(p.learning_rate > 0)) diags.push_back({0, "predictor.learning_rate", "must be > 0"});
  if (!(p.weight_decay >= 0)) diags.push_back({0, "predictor.weight_decay", "must be >= 0"});
  const std::size_t attributes = c.source == DataSource::synth ? s.attributes : c.columns.sensitive.size();
  if (attributes > 0 && p.reweight_attribute >= attributes) {
    diags.push_back({0, "predictor.reweight_attribute",
                     "must name one of the " + std::to_string(attributes) + " sensitive attributes (0-based)"});
  }

  r.read("metrics", "threshold", st.threshold);
  if (!(st.threshold >= 0.0 && st.threshold <= 1.0)) diags.push_back({0, "metrics.threshold", "must lie in [0, 1]"});

  if (Entry* e = r.find("run", "methods")) {
    c.methods.clear();
    for (const auto& name : split_list(e->value)) {
      auto m = method_from_string(name);
      if (!m) {
        diags.push_back({e->line, "run.methods", "unknown method '" + name + "'; valid methods: " + method_list()});
      } else if (std::find(c.methods.begin(), c.methods.end(), *m) != c.methods.end()) {
        diags.push_back({e->line, "run.methods", "method '" + name + "' listed twice"});
      } else {
        c.methods.push_back(*m);
      }
    }
    if (split_list(e->value).empty()) diags.push_back({e->line, "run.methods", "method list is empty"});
  }
  r.read("run", "output", c.output_dir);
  if (c.output_dir.empty()) diags.push_back({0, "run.output", "must not be empty"});

  if (Entry* e = r.find("pilot", "gammas")) {
    c.pilot_gammas.clear();
    for (const auto& item : split_list(e->value)) {
      auto v = csv::parse_double(item);
      if (!v || !(*v >= 0.0)) {
        diags.push_back({e->line, "pilot.gammas", "expected non-negative numbers, got '" + item + "'"});
      } else {
        c.pilot_gammas.push_back(*v);
      }
    }
    if (c.pilot_gammas.empty()) diags.push_back({e->line, "pilot.gammas", "gamma list is empty"});
  }
  if (Entry* e = r.find("pilot", "seeds")) {
    c.pilot_seeds.clear();
    for (const auto& item : split_list(e->value)) {
      auto v = Reader::parse_count(item);
      if (!v) {
        diags.push_back({e->line, "pilot.seeds", "expected non-negative integers, got '" + item + "'"});
      } else {
        c.pilot_seeds.push_back(*v);
      }
    }
    if (c.pilot_seeds.empty()) diags.push_back({e->line, "pilot.seeds", "seed list is empty"});
  }

  r.report_unused({{"data", {}}, {"synth", {}}, {"split", {}}, {"model", {}}, {"cvae", {}},
                   {"predictor", {}}, {"metrics", {}}, {"run", {}}, {"pilot", {}}});
  std::stable_sort(diags.begin(), diags.end(), [](const Diagnostic& a, const Diagnostic& b) {
    return (a.line == 0 ? SIZE_MAX : a.line) < (b.line == 0 ? SIZE_MAX : b.line);
  });
  if (diags.empty()) result.config = std::move(c);
  return result;
}

inline ConfigResult parse_config_text(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

inline ConfigResult validate_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    ConfigResult r;
    r.diagnostics.push_back({0, "", "cannot open config file '" + path + "'"});
    return r;
  }
  return parse_config(in);
}

/// Parses or throws ConfigError carrying every diagnostic.
inline ExperimentConfig load_config(const std::string& path) {
  ConfigResult r = validate_config(path);
  if (!r.ok()) {
    std::string msg = "invalid config '" + path + "':";
    for (const auto& d : r.diagnostics) msg += "\n  " + to_string(d);
    throw ConfigError(msg);
  }
  return std::move(*r.config);
}

/// Canonical text of a configuration with every field spelled out;
/// parsing it back gives the same configuration.
inline std::string render_config(const ExperimentConfig& c) {
  auto num = [](double v) { return csv::format_double(v); };
  auto join = [](const std::vector<std::string>& items) {
    std::string out;
    for (const auto& s : items) out += (out.empty() ? "" : ", ") + s;
    return out;
  };
  std::ostringstream o;
  o << "[data]\n";
  if (c.source == DataSource::synth) {
    o << "source = synth\n";
  } else {
    o << "source = csv\npath = " << c.csv_path << "\nfeatures = " << join(c.columns.features)
      << "\nsensitive = " << join(c.columns.sensitive) << "\nlabel = " << c.columns.label << "\nmissing = "
      << (c.columns.missing == MissingPolicy::strict ? "strict" : "impute_mean") << "\n";
  }
  if (c.source == DataSource::synth) {
    const SynthConfig& s = c.synth;
    o << "\n[synth]\nrecords = " << s.records << "\nfeatures = " << s.features << "\nlatent = " << s.latent
      << "\nattributes = " << s.attributes << "\nminority = " << num(s.minority) << "\ngamma = " << num(s.gamma)
      << "\neta = " << num(s.eta) << "\nnoise = " << num(s.noise) << "\nloading_shift = " << num(s.loading_shift)
      << "\nseed = " << s.seed << "\n";
  }
  o << "\n[split]\ntrain = " << num(c.ratios.train) << "\nvalidation = " << num(c.ratios.validation)
    << "\ntest = " << num(c.ratios.test) << "\nseed = " << c.split_seed << "\n";
  const ExperimentSettings& st = c.settings;
  o << "\n[model]\nlatent = " << st.latent << "\nhidden = " << st.hidden << "\n";
  o << "\n[cvae]\nsamples = " << st.cvae.samples << "\nepochs = " << st.cvae.epochs
    << "\nbatch_size = " << st.cvae.batch_size << "\nlearning_rate = " << num(st.cvae.learning_rate)
    << "\nweight_decay = " << num(st.cvae.weight_decay) << "\nseed = " << st.cvae.seed
    << "\nnormalize_weights = " << (st.normalize_weights ? "true" : "false") << "\n";
  const PredictorTrainConfig& p = st.predictor;
  o << "\n[predictor]\nepochs = " << p.epochs << "\nbatch_size = " << p.batch_size
    << "\nlearning_rate = " << num(p.learning_rate) << "\nweight_decay = " << num(p.weight_decay)
    << "\nseed = " << p.seed << "\npatience = " << p.patience << "\nreweight_attribute = " << p.reweight_attribute
    << "\n";
  o << "\n[metrics]\nthreshold = " << num(st.threshold) << "\n";
  std::vector<std::string> methods;
  for (Method m : c.methods) methods.push_back(to_string(m));
  o << "\n[run]\nmethods = " << join(methods) << "\noutput = " << c.output_dir << "\n";
  std::vector<std::string> gammas, seeds;
  for (double g : c.pilot_gammas) gammas.push_back(num(g));
  for (auto s : c.pilot_seeds) seeds.push_back(std::to_string(s));
  o << "\n[pilot]\ngammas = " << join(gammas) << "\nseeds = " << join(seeds) << "\n";
  return o.str();
}

}  // namespace primed
