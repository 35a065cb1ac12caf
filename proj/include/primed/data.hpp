#pragma once

// Tabular datasets of (features x, sensitive attributes s, binary outcome y):
// CSV ingestion, splitting, standardization, one-hot encoding of s, and the
// inverse-frequency propensity weights used to rebalance training.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "primed/error.hpp"
#include "primed/random.hpp"
#include "primed/tensor.hpp"

namespace primed {

struct SensitiveAttribute {
  std::string name;
  std::vector<std::string> categories;

  friend bool operator==(const SensitiveAttribute&, const SensitiveAttribute&) = default;
};

/// Ordered sensitive attributes with their ordered category lists.
class SensitiveSchema {
 public:
  SensitiveSchema() = default;
  explicit SensitiveSchema(std::vector<SensitiveAttribute> attributes) : attributes_(std::move(attributes)) {
    for (std::size_t i = 0; i < attributes_.size(); ++i) {
      if (attributes_[i].categories.empty()) {
        throw DataError("sensitive attribute '" + attributes_[i].name + "' has no categories");
      }
      for (std::size_t j = 0; j < i; ++j) {
        if (attributes_[i].name == attributes_[j].name) {
          throw DataError("duplicate sensitive attribute '" + attributes_[i].name + "'");
        }
      }
    }
  }

  std::size_t size() const { return attributes_.size(); }
  const SensitiveAttribute& operator[](std::size_t j) const { return attributes_.at(j); }
  const std::vector<SensitiveAttribute>& attributes() const { return attributes_; }

  /// Length of the concatenated one-hot encoding.
  std::size_t encoded_width() const {
    std::size_t n = 0;
    for (const auto& a : attributes_) n += a.categories.size();
    return n;
  }

  friend bool operator==(const SensitiveSchema&, const SensitiveSchema&) = default;

 private:
  std::vector<SensitiveAttribute> attributes_;
};

struct Record {
  std::vector<double> x;
  std::vector<std::size_t> s;
  int y = 0;

  friend bool operator==(const Record&, const Record&) = default;
};

struct Dataset {
  std::vector<std::string> feature_names;
  std::string label_name = "y";
  SensitiveSchema schema;
  std::vector<Record> records;

  std::size_t size() const { return records.size(); }
  std::size_t num_features() const { return feature_names.size(); }

  const std::string& category(std::size_t record, std::size_t attribute) const {
    return schema[attribute].categories.at(records.at(record).s.at(attribute));
  }

  /// Throws DataError if any record disagrees with the feature count or schema.
  void validate() const {
    if (records.empty()) throw DataError("dataset has no records");
    for (std::size_t i = 0; i < records.size(); ++i) {
      const Record& r = records[i];
      if (r.x.size() != feature_names.size()) {
        throw DataError("record " + std::to_string(i) + " has " + std::to_string(r.x.size()) + " features, expected " +
                        std::to_string(feature_names.size()));
      }
      if (r.s.size() != schema.size()) {
        throw DataError("record " + std::to_string(i) + " has " + std::to_string(r.s.size()) +
                        " sensitive values, expected " + std::to_string(schema.size()));
      }
      for (std::size_t j = 0; j < r.s.size(); ++j) {
        if (r.s[j] >= schema[j].categories.size()) {
          throw DataError("record " + std::to_string(i) + ": category index " + std::to_string(r.s[j]) +
                          " out of range for attribute '" + schema[j].name + "'");
        }
      }
      if (r.y != 0 && r.y != 1) throw DataError("record " + std::to_string(i) + ": label must be 0 or 1");
    }
  }

  Dataset subset(std::span<const std::size_t> indices) const {
    Dataset out{feature_names, label_name, schema, {}};
    out.records.reserve(indices.size());
    for (auto i : indices) out.records.push_back(records.at(i));
    return out;
  }
};

/// Two datasets are equal when names, schema, and every record's features,
/// category labels, and label agree. Category labels are compared by name
/// so that schemas listing the same categories in a different order still
/// describe the same data.
inline bool same_content(const Dataset& a, const Dataset& b) {
  if (a.feature_names != b.feature_names || a.label_name != b.label_name || a.size() != b.size()) return false;
  if (a.schema.size() != b.schema.size()) return false;
  for (std::size_t j = 0; j < a.schema.size(); ++j) {
    if (a.schema[j].name != b.schema[j].name) return false;
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.records[i].x != b.records[i].x || a.records[i].y != b.records[i].y) return false;
    for (std::size_t j = 0; j < a.schema.size(); ++j) {
      if (a.category(i, j) != b.category(i, j)) return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// CSV

namespace csv {

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c != '\r') {
      field += c;
    }
  }
  fields.push_back(std::move(field));
  return fields;
}

inline std::string quote(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

/// Shortest decimal text that parses back to exactly `v`.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::optional<double> parse_double(const std::string& text) {
  std::size_t begin = 0, end = text.size();
  while (begin < end && std::isspace(static_cast<unsigned char>(text[begin]))) ++begin;
  while (end > begin && std::isspace(static_cast<unsigned char>(text[end - 1]))) --end;
  if (begin == end) return std::nullopt;
  const char* first = text.data() + begin;
  if (*first == '+') ++first;
  double v = 0.0;
  auto res = std::from_chars(first, text.data() + end, v);
  if (res.ec != std::errc() || res.ptr != text.data() + end || !std::isfinite(v)) return std::nullopt;
  return v;
}

}  // namespace csv

enum class MissingPolicy { strict, impute_mean };

struct CsvColumns {
  std::vector<std::string> features;
  std::vector<std::string> sensitive;
  std::string label;
  MissingPolicy missing = MissingPolicy::strict;
};

/// Parses a headered CSV with caller-assigned column roles. Sensitive
/// categories are numbered in order of first appearance.
inline Dataset load_csv(const std::string& path, const CsvColumns& columns) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw DataError("'" + path + "' is empty; a header row is required");
  const auto header = csv::split_line(line);

  auto column_index = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw DataError("'" + path + "': unknown column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  std::vector<std::size_t> feature_cols, sensitive_cols;
  for (const auto& f : columns.features) feature_cols.push_back(column_index(f));
  for (const auto& s : columns.sensitive) sensitive_cols.push_back(column_index(s));
  const std::size_t label_col = column_index(columns.label);

  std::vector<SensitiveAttribute> attributes;
  for (const auto& s : columns.sensitive) attributes.push_back({s, {}});

  Dataset ds;
  ds.feature_names = columns.features;
  ds.label_name = columns.label;
  std::vector<std::vector<bool>> missing_mask;

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = csv::split_line(line);
    if (fields.size() != header.size()) {
      throw DataError("'" + path + "' line " + std::to_string(line_no) + ": expected " +
                      std::to_string(header.size()) + " fields, got " + std::to_string(fields.size()));
    }
    Record r;
    std::vector<bool> missing(feature_cols.size(), false);
    for (std::size_t k = 0; k < feature_cols.size(); ++k) {
      const std::string& cell = fields[feature_cols[k]];
      auto v = csv::parse_double(cell);
      if (!v) {
        const bool blank = cell.find_first_not_of(" \t") == std::string::npos || cell == "NA" || cell == "nan";
        if (columns.missing == MissingPolicy::impute_mean && blank) {
          missing[k] = true;
          r.x.push_back(0.0);
          continue;
        }
        throw DataError("'" + path + "' line " + std::to_string(line_no) + ", column '" + columns.features[k] +
                        "': non-numeric feature value '" + cell + "'");
      }
      r.x.push_back(*v);
    }
    for (std::size_t k = 0; k < sensitive_cols.size(); ++k) {
      const std::string& cell = fields[sensitive_cols[k]];
      auto& cats = attributes[k].categories;
      auto it = std::find(cats.begin(), cats.end(), cell);
      if (it == cats.end()) {
        cats.push_back(cell);
        r.s.push_back(cats.size() - 1);
      } else {
        r.s.push_back(static_cast<std::size_t>(it - cats.begin()));
      }
    }
    const std::string& label_cell = fields[label_col];
    auto label = csv::parse_double(label_cell);
    if (!label || (*label != 0.0 && *label != 1.0)) {
      throw DataError("'" + path + "' line " + std::to_string(line_no) + ", column '" + columns.label +
                      "': label must be 0 or 1, got '" + label_cell + "'");
    }
    r.y = static_cast<int>(*label);
    ds.records.push_back(std::move(r));
    missing_mask.push_back(std::move(missing));
  }
  if (ds.records.empty()) throw DataError("'" + path + "' has a header but no data rows");

  if (columns.missing == MissingPolicy::impute_mean) {
    for (std::size_t k = 0; k < feature_cols.size(); ++k) {
      double sum = 0.0;
      std::size_t count = 0;
      for (std::size_t i = 0; i < ds.records.size(); ++i) {
        if (!missing_mask[i][k]) {
          sum += ds.records[i].x[k];
          ++count;
        }
      }
      if (count == 0) throw DataError("'" + path + "': feature '" + columns.features[k] + "' has no observed values");
      const double mean = sum / static_cast<double>(count);
      for (std::size_t i = 0; i < ds.records.size(); ++i) {
        if (missing_mask[i][k]) ds.records[i].x[k] = mean;
      }
    }
  }
  ds.schema = SensitiveSchema(std::move(attributes));
  return ds;
}

/// Writes features, then sensitive columns, then the label, with a header row.
inline void save_csv(const Dataset& dataset, const std::string& path) {
  if (dataset.records.empty()) throw DataError("refusing to write an empty dataset to '" + path + "'");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  std::string line;
  auto flush_line = [&] {
    line += '\n';
    out << line;
    line.clear();
  };
  for (const auto& f : dataset.feature_names) line += csv::quote(f) + ",";
  for (const auto& a : dataset.schema.attributes()) line += csv::quote(a.name) + ",";
  line += csv::quote(dataset.label_name);
  flush_line();
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const Record& r = dataset.records[i];
    for (double v : r.x) line += csv::format_double(v) + ",";
    for (std::size_t j = 0; j < r.s.size(); ++j) line += csv::quote(dataset.category(i, j)) + ",";
    line += r.y == 1 ? "1" : "0";
    flush_line();
  }
  if (!out) throw DataError("I/O failure while writing '" + path + "'");
}

inline CsvColumns columns_of(const Dataset& dataset) {
  CsvColumns c;
  c.features = dataset.feature_names;
  for (const auto& a : dataset.schema.attributes()) c.sensitive.push_back(a.name);
  c.label = dataset.label_name;
  return c;
}

// ---------------------------------------------------------------------------
// Splitting

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;

  /// FNV-1a over the three index lists; identifies a split materialization.
  std::uint64_t hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](std::uint64_t v) {
      for (int b = 0; b < 8; ++b) {
        h ^= (v >> (8 * b)) & 0xffU;
        h *= 1099511628211ULL;
      }
    };
    for (const auto* part : {&train, &validation, &test}) {
      mix(part->size());
      for (auto i : *part) mix(i);
    }
    return h;
  }
};

struct SplitRatios {
  double train = 0.7;
  double validation = 0.2;
  double test = 0.1;
};

/// Seeded uniform permutation cut at round(N * cumulative ratio).
inline SplitIndices split_indices(std::size_t n, const SplitRatios& ratios, std::uint64_t seed) {
  if (!(ratios.train > 0 && ratios.validation > 0 && ratios.test > 0)) {
    throw DataError("split ratios must be positive");
  }
  if (std::abs(ratios.train + ratios.validation + ratios.test - 1.0) > 1e-9) {
    throw DataError("split ratios must sum to 1");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = derived_rng(seed, 0x5b11);
  std::shuffle(order.begin(), order.end(), rng);
  const double nd = static_cast<double>(n);
  const auto cut1 = static_cast<std::size_t>(std::llround(nd * ratios.train));
  const auto cut2 = std::max(cut1, static_cast<std::size_t>(std::llround(nd * (ratios.train + ratios.validation))));
  SplitIndices out;
  out.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(std::min(cut1, n)));
  out.validation.assign(order.begin() + static_cast<std::ptrdiff_t>(std::min(cut1, n)),
                        order.begin() + static_cast<std::ptrdiff_t>(std::min(cut2, n)));
  out.test.assign(order.begin() + static_cast<std::ptrdiff_t>(std::min(cut2, n)), order.end());
  if (out.train.empty() || out.validation.empty() || out.test.empty()) {
    throw DataError("split of " + std::to_string(n) + " records leaves a part empty (sizes " +
                    std::to_string(out.train.size()) + ", " + std::to_string(out.validation.size()) + ", " +
                    std::to_string(out.test.size()) + ")");
  }
  return out;
}

struct DatasetSplit {
  Dataset train;
  Dataset validation;
  Dataset test;
  SplitIndices indices;
};

inline DatasetSplit split(const Dataset& dataset, const SplitRatios& ratios, std::uint64_t seed) {
  SplitIndices idx = split_indices(dataset.size(), ratios, seed);
  return DatasetSplit{dataset.subset(idx.train), dataset.subset(idx.validation), dataset.subset(idx.test),
                      std::move(idx)};
}

// ---------------------------------------------------------------------------
// Standardization

struct FeatureScaler {
  std::vector<double> mean;
  std::vector<double> std;

  static constexpr double min_std = 1e-8;

  static FeatureScaler fit(const Dataset& train) {
    if (train.records.empty()) throw DataError("cannot fit a scaler on an empty dataset");
    const std::size_t m = train.num_features();
    FeatureScaler s{std::vector<double>(m, 0.0), std::vector<double>(m, 0.0)};
    const double n = static_cast<double>(train.size());
    for (const auto& r : train.records)
      for (std::size_t k = 0; k < m; ++k) s.mean[k] += r.x[k];
    for (auto& v : s.mean) v /= n;
    for (const auto& r : train.records)
      for (std::size_t k = 0; k < m; ++k) s.std[k] += (r.x[k] - s.mean[k]) * (r.x[k] - s.mean[k]);
    for (auto& v : s.std) v = std::sqrt(v / n);
    return s;
  }

  Dataset apply(Dataset d) const {
    if (d.num_features() != mean.size()) {
      throw DimensionError("scaler fitted on " + std::to_string(mean.size()) + " features applied to " +
                           std::to_string(d.num_features()));
    }
    for (auto& r : d.records)
      for (std::size_t k = 0; k < mean.size(); ++k) r.x[k] = (r.x[k] - mean[k]) / std::max(std[k], min_std);
    return d;
  }
};

// ---------------------------------------------------------------------------
// Sensitive-attribute frequencies and propensity weights

/// Per attribute, the training frequency of each category that occurs.
struct FrequencyTable {
  std::vector<std::map<std::size_t, double>> per_attribute;

  std::optional<double> frequency(std::size_t attribute, std::size_t category) const {
    const auto& m = per_attribute.at(attribute);
    auto it = m.find(category);
    if (it == m.end()) return std::nullopt;
    return it->second;
  }
};

inline FrequencyTable attribute_frequencies(const Dataset& train) {
  if (train.records.empty()) throw DataError("frequencies need a nonempty training set");
  FrequencyTable table;
  table.per_attribute.resize(train.schema.size());
  std::vector<std::map<std::size_t, std::size_t>> counts(train.schema.size());
  for (const auto& r : train.records)
    for (std::size_t j = 0; j < r.s.size(); ++j) ++counts[j][r.s[j]];
  const double n = static_cast<double>(train.size());
  for (std::size_t j = 0; j < counts.size(); ++j)
    for (const auto& [cat, c] : counts[j]) table.per_attribute[j][cat] = static_cast<double>(c) / n;
  return table;
}

struct PropensityWeights {
  std::vector<double> values;
  bool normalized = false;
};

/// omega = 1 / prod_j freq(s_j); optionally rescaled to mean 1.
inline PropensityWeights propensity_weights(const FrequencyTable& freq, const Dataset& records, bool normalize) {
  PropensityWeights w;
  w.normalized = normalize;
  w.values.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    double product = 1.0;
    for (std::size_t j = 0; j < records.schema.size(); ++j) {
      auto f = freq.frequency(j, records.records[i].s[j]);
      if (!f) {
        throw DataError("propensity weights: category '" + records.category(i, j) + "' of attribute '" +
                        records.schema[j].name + "' does not occur in the frequency table");
      }
      product *= *f;
    }
    w.values.push_back(1.0 / product);
  }
  if (normalize && !w.values.empty()) {
    const double mean = std::accumulate(w.values.begin(), w.values.end(), 0.0) / static_cast<double>(w.values.size());
    for (auto& v : w.values) v /= mean;
  }
  return w;
}

// ---------------------------------------------------------------------------
// Encoding

/// Concatenated one-hot blocks, one per attribute.
inline std::vector<double> encode_sensitive(const Record& record, const SensitiveSchema& schema) {
  std::vector<double> out(schema.encoded_width(), 0.0);
  std::size_t offset = 0;
  for (std::size_t j = 0; j < schema.size(); ++j) {
    out[offset + record.s[j]] = 1.0;
    offset += schema[j].categories.size();
  }
  return out;
}

/// Feature matrix (N x M).
inline Tensor feature_matrix(const Dataset& d) {
  std::vector<double> v;
  v.reserve(d.size() * d.num_features());
  for (const auto& r : d.records) v.insert(v.end(), r.x.begin(), r.x.end());
  return Tensor::matrix(d.size(), d.num_features(), std::move(v));
}

/// One-hot sensitive matrix (N x J_enc).
inline Tensor sensitive_matrix(const Dataset& d) {
  const std::size_t width = d.schema.encoded_width();
  std::vector<double> v;
  v.reserve(d.size() * width);
  for (const auto& r : d.records) {
    auto e = encode_sensitive(r, d.schema);
    v.insert(v.end(), e.begin(), e.end());
  }
  return Tensor::matrix(d.size(), width, std::move(v));
}

inline std::vector<int> labels_of(const Dataset& d) {
  std::vector<int> y;
  y.reserve(d.size());
  for (const auto& r : d.records) y.push_back(r.y);
  return y;
}

/// Category index of attribute `j` for every record.
inline std::vector<std::size_t> groups_of(const Dataset& d, std::size_t j) {
  std::vector<std::size_t> g;
  g.reserve(d.size());
  for (const auto& r : d.records) g.push_back(r.s.at(j));
  return g;
}

}  // namespace primed
