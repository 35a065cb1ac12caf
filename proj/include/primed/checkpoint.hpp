#pragma once

// Text checkpoints. A file holds a kind tag, ordered metadata and named
// tensors; doubles are written in shortest round-trip form so a
// save/load cycle reproduces every bit.
//
//   primed-checkpoint 1
//   kind cvae
//   meta latent 8
//   tensor encoder.hidden.w 2 22 64
//   <values separated by spaces>
//   end

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "primed/cvae.hpp"
#include "primed/data.hpp"
#include "primed/error.hpp"
#include "primed/nn.hpp"
#include "primed/predictor.hpp"

namespace primed {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  std::string kind;
  std::vector<std::pair<std::string, std::string>> meta;
  ParamSet tensors;

  const std::string& get(const std::string& key) const {
    for (const auto& [k, v] : meta) {
      if (k == key) return v;
    }
    throw DataError("checkpoint has no '" + key + "' entry");
  }
  void set(std::string key, std::string value) { meta.emplace_back(std::move(key), std::move(value)); }

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

inline std::string serialize(const Checkpoint& c) {
  std::string out = "primed-checkpoint " + std::to_string(kCheckpointVersion) + "\n";
  out += "kind " + c.kind + "\n";
  for (const auto& [k, v] : c.meta) {
    if (k.find_first_of(" \n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw DataError("checkpoint metadata '" + k + "' contains whitespace that cannot be stored");
    }
    out += "meta " + k + " " + v + "\n";
  }
  for (std::size_t i = 0; i < c.tensors.size(); ++i) {
    const Tensor& t = c.tensors[i];
    out += "tensor " + c.tensors.name(i) + " " + std::to_string(t.shape().size());
    for (auto d : t.shape()) out += " " + std::to_string(d);
    out += "\n";
    for (std::size_t k = 0; k < t.size(); ++k) {
      if (k > 0) out += ' ';
      out += csv::format_double(t[k]);
    }
    out += "\n";
  }
  out += "end\n";
  return out;
}

inline Checkpoint deserialize(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) -> DataError {
    return DataError("checkpoint line " + std::to_string(line_no) + ": " + what);
  };
  auto next = [&]() {
    if (!std::getline(in, line)) throw fail("unexpected end of file");
    ++line_no;
    return line;
  };

  std::istringstream head(next());
  std::string magic;
  int version = 0;
  if (!(head >> magic >> version) || magic != "primed-checkpoint") throw fail("not a checkpoint file");
  if (version != kCheckpointVersion) throw fail("unsupported version " + std::to_string(version));

  Checkpoint c;
  {
    std::istringstream kl(next());
    std::string tag;
    if (!(kl >> tag >> c.kind) || tag != "kind") throw fail("expected 'kind <name>'");
  }
  while (true) {
    const std::string current = next();
    if (current == "end") break;
    std::istringstream ls(current);
    std::string tag;
    ls >> tag;
    if (tag == "meta") {
      std::string key;
      ls >> key;
      std::string value;
      std::getline(ls, value);
      if (!value.empty() && value.front() == ' ') value.erase(0, 1);
      c.set(key, value);
    } else if (tag == "tensor") {
      std::string name;
      std::size_t rank = 0;
      if (!(ls >> name >> rank)) throw fail("malformed tensor header");
      Shape shape(rank);
      for (auto& d : shape) {
        if (!(ls >> d)) throw fail("tensor '" + name + "' header lists fewer dimensions than its rank");
      }
      Tensor t(shape);
      std::istringstream vs(next());
      std::string token;
      std::size_t k = 0;
      while (vs >> token) {
        if (k >= t.size()) throw fail("tensor '" + name + "' has more values than its shape allows");
        auto v = csv::parse_double(token);
        if (!v) throw fail("tensor '" + name + "' has non-numeric value '" + token + "'");
        t[k++] = *v;
      }
      if (k != t.size()) {
        throw fail("tensor '" + name + "' has " + std::to_string(k) + " values, expected " + std::to_string(t.size()));
      }
      c.tensors.add(name, std::move(t));
    } else {
      throw fail("unknown entry '" + tag + "'");
    }
  }
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
  const std::filesystem::path parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << serialize(c);
  if (!out) throw DataError("failed writing '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return deserialize(ss.str());
  } catch (const DataError& e) {
    throw DataError("'" + path + "': " + e.what());
  }
}

namespace checkpoint_detail {

inline std::size_t get_size(const Checkpoint& c, const std::string& key) {
  const std::string& v = c.get(key);
  try {
    std::size_t used = 0;
    const unsigned long long n = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
    throw DataError("checkpoint entry '" + key + "' is not a count: '" + v + "'");
  }
}

inline double get_double(const Checkpoint& c, const std::string& key) {
  auto v = csv::parse_double(c.get(key));
  if (!v) throw DataError("checkpoint entry '" + key + "' is not a number");
  return *v;
}

inline void put_scaler(Checkpoint& c, const FeatureScaler& scaler) {
  c.tensors.add("scaler.mean", Tensor::vector(scaler.mean));
  c.tensors.add("scaler.std", Tensor::vector(scaler.std));
}

inline FeatureScaler take_scaler(const Checkpoint& c) {
  auto values = [&](const std::string& name) {
    auto v = c.tensors.at(name).values();
    return std::vector<double>(v.begin(), v.end());
  };
  return FeatureScaler{values("scaler.mean"), values("scaler.std")};
}

/// Model parameters are every tensor outside the scaler.
inline ParamSet model_params(const Checkpoint& c) {
  ParamSet p;
  for (std::size_t i = 0; i < c.tensors.size(); ++i) {
    if (c.tensors.name(i).rfind("scaler.", 0) != 0) p.add(c.tensors.name(i), c.tensors[i]);
  }
  return p;
}

}  // namespace checkpoint_detail

struct CvaeCheckpoint {
  CvaeModel model;
  CvaeTrainConfig config;
  FeatureScaler scaler;
  bool normalize_weights = true;
};

inline Checkpoint to_checkpoint(const CvaeCheckpoint& c) {
  Checkpoint out;
  out.kind = "cvae";
  const CvaeShape& s = c.model.shape();
  out.set("features", std::to_string(s.features));
  out.set("sensitive", std::to_string(s.sensitive));
  out.set("latent", std::to_string(s.latent));
  out.set("hidden", std::to_string(s.hidden));
  out.set("train.samples", std::to_string(c.config.samples));
  out.set("train.epochs", std::to_string(c.config.epochs));
  out.set("train.batch_size", std::to_string(c.config.batch_size));
  out.set("train.learning_rate", csv::format_double(c.config.learning_rate));
  out.set("train.weight_decay", csv::format_double(c.config.weight_decay));
  out.set("train.seed", std::to_string(c.config.seed));
  out.set("train.normalize_weights", c.normalize_weights ? "true" : "false");
  for (std::size_t i = 0; i < c.model.params().size(); ++i) out.tensors.add(c.model.params().name(i), c.model.params()[i]);
  checkpoint_detail::put_scaler(out, c.scaler);
  return out;
}

inline CvaeCheckpoint cvae_from_checkpoint(const Checkpoint& c) {
  using namespace checkpoint_detail;
  if (c.kind != "cvae") throw DataError("expected a cvae checkpoint, found '" + c.kind + "'");
  CvaeShape shape{get_size(c, "features"), get_size(c, "sensitive"), get_size(c, "latent"), get_size(c, "hidden")};
  CvaeCheckpoint out;
  out.model = CvaeModel::from_params(shape, model_params(c));
  out.config.samples = get_size(c, "train.samples");
  out.config.epochs = get_size(c, "train.epochs");
  out.config.batch_size = get_size(c, "train.batch_size");
  out.config.learning_rate = get_double(c, "train.learning_rate");
  out.config.weight_decay = get_double(c, "train.weight_decay");
  out.config.seed = get_size(c, "train.seed");
  out.normalize_weights = c.get("train.normalize_weights") == "true";
  out.scaler = take_scaler(c);
  return out;
}

struct ClassifierCheckpoint {
  Classifier model;
  PredictorTrainConfig config;
  FeatureScaler scaler;
};

inline Checkpoint to_checkpoint(const ClassifierCheckpoint& c) {
  Checkpoint out;
  out.kind = "classifier";
  const ClassifierShape& s = c.model.shape();
  out.set("model", to_string(c.model.kind()));
  out.set("features", std::to_string(s.features));
  out.set("sensitive", std::to_string(s.sensitive));
  out.set("latent", std::to_string(s.latent));
  out.set("hidden", std::to_string(s.hidden));
  out.set("train.epochs", std::to_string(c.config.epochs));
  out.set("train.batch_size", std::to_string(c.config.batch_size));
  out.set("train.learning_rate", csv::format_double(c.config.learning_rate));
  out.set("train.weight_decay", csv::format_double(c.config.weight_decay));
  out.set("train.seed", std::to_string(c.config.seed));
  out.set("train.patience", std::to_string(c.config.patience));
  out.set("train.class_weights", c.config.class_weights == ClassWeightMode::kamiran ? "kamiran" : "none");
  out.set("train.reweight_attribute", std::to_string(c.config.reweight_attribute));
  for (std::size_t i = 0; i < c.model.params().size(); ++i) out.tensors.add(c.model.params().name(i), c.model.params()[i]);
  checkpoint_detail::put_scaler(out, c.scaler);
  return out;
}

inline ClassifierCheckpoint classifier_from_checkpoint(const Checkpoint& c) {
  using namespace checkpoint_detail;
  if (c.kind != "classifier") throw DataError("expected a classifier checkpoint, found '" + c.kind + "'");
  auto kind = model_kind_from_string(c.get("model"));
  if (!kind) throw DataError("unknown classifier model '" + c.get("model") + "'");
  ClassifierShape shape{get_size(c, "features"), get_size(c, "sensitive"), get_size(c, "latent"), get_size(c, "hidden")};
  ClassifierCheckpoint out;
  out.model = Classifier::from_params(*kind, shape, model_params(c));
  out.config.epochs = get_size(c, "train.epochs");
  out.config.batch_size = get_size(c, "train.batch_size");
  out.config.learning_rate = get_double(c, "train.learning_rate");
  out.config.weight_decay = get_double(c, "train.weight_decay");
  out.config.seed = get_size(c, "train.seed");
  out.config.patience = get_size(c, "train.patience");
  out.config.class_weights = c.get("train.class_weights") == "kamiran" ? ClassWeightMode::kamiran : ClassWeightMode::none;
  out.config.reweight_attribute = get_size(c, "train.reweight_attribute");
  out.scaler = take_scaler(c);
  return out;
}

}  // namespace primed
