#pragma once

// Ranking and fairness metrics: AUROC (Mann-Whitney, ties count one half),
// per-subgroup AUROC, the max pairwise subgroup AUROC gap, and equalized-odds
// gaps at a score threshold.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "primed/data.hpp"
#include "primed/error.hpp"

namespace primed {

/// Probability that a random positive outranks a random negative, ties
/// counted one half. Computed from mid-ranks in O(n log n); the numerator
/// is kept as an exact integer (twice the U statistic).
inline double auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw DimensionError("auroc: " + std::to_string(scores.size()) + " scores but " + std::to_string(labels.size()) +
                         " labels");
  }
  const std::size_t n = scores.size();
  std::int64_t positives = 0;
  for (int y : labels) positives += y == 1 ? 1 : 0;
  const std::int64_t negatives = static_cast<std::int64_t>(n) - positives;
  if (positives == 0 || negatives == 0) {
    throw UndefinedMetricError("auroc is undefined without both positive and negative labels");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Twice the rank sum of positives; a tie block occupying ranks (start+1 .. end)
  // contributes mid-rank (start + end + 1) / 2 per member.
  std::int64_t twice_rank_sum = 0;
  std::size_t start = 0;
  while (start < n) {
    std::size_t end = start + 1;
    while (end < n && scores[order[end]] == scores[order[start]]) ++end;
    std::int64_t block_positives = 0;
    for (std::size_t k = start; k < end; ++k) block_positives += labels[order[k]] == 1 ? 1 : 0;
    twice_rank_sum += block_positives * static_cast<std::int64_t>(start + end + 1);
    start = end;
  }
  const std::int64_t twice_u = twice_rank_sum - positives * (positives + 1);
  return static_cast<double>(twice_u) / static_cast<double>(2 * positives * negatives);
}

struct GroupAuroc {
  std::string group;
  std::size_t count = 0;
  std::size_t positives = 0;
  std::optional<double> auroc;  ///< empty when the group lacks one of the classes
};

/// AUROC restricted to each group. Groups are indexed 0..names.size()-1.
inline std::vector<GroupAuroc> subgroup_auroc(std::span<const double> scores, std::span<const int> labels,
                                              std::span<const std::size_t> groups,
                                              const std::vector<std::string>& names) {
  if (scores.size() != labels.size() || scores.size() != groups.size()) {
    throw DimensionError("subgroup_auroc: scores, labels and groups differ in length");
  }
  std::vector<std::vector<double>> s(names.size());
  std::vector<std::vector<int>> y(names.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (groups[i] >= names.size()) throw DimensionError("subgroup_auroc: group index out of range");
    s[groups[i]].push_back(scores[i]);
    y[groups[i]].push_back(labels[i]);
  }
  std::vector<GroupAuroc> out;
  for (std::size_t g = 0; g < names.size(); ++g) {
    GroupAuroc r;
    r.group = names[g];
    r.count = s[g].size();
    r.positives = static_cast<std::size_t>(std::count(y[g].begin(), y[g].end(), 1));
    if (r.positives > 0 && r.positives < r.count) r.auroc = auroc(s[g], y[g]);
    out.push_back(std::move(r));
  }
  return out;
}

/// Max pairwise absolute AUROC difference among defined groups.
inline double disparity(std::span<const GroupAuroc> groups) {
  std::vector<double> defined;
  for (const auto& g : groups) {
    if (g.auroc) defined.push_back(*g.auroc);
  }
  if (defined.size() < 2) {
    throw UndefinedMetricError("disparity needs at least two groups with a defined AUROC, got " +
                               std::to_string(defined.size()));
  }
  double gap = 0.0;
  for (std::size_t a = 0; a < defined.size(); ++a)
    for (std::size_t b = a + 1; b < defined.size(); ++b) gap = std::max(gap, std::abs(defined[a] - defined[b]));
  return gap;
}

struct GroupRates {
  std::string group;
  std::optional<double> tpr;
  std::optional<double> fpr;
};

struct EqualizedOddsGap {
  std::optional<double> tpr_gap;
  std::optional<double> fpr_gap;
  std::vector<GroupRates> groups;
  bool any_degenerate = false;  ///< some group lacks positives or negatives
};

/// TPR/FPR per group at `score >= threshold`; gaps are max pairwise
/// differences over groups where the rate is defined.
inline EqualizedOddsGap equalized_odds_gap(std::span<const double> scores, std::span<const int> labels,
                                           std::span<const std::size_t> groups,
                                           const std::vector<std::string>& names, double threshold = 0.5) {
  if (scores.size() != labels.size() || scores.size() != groups.size()) {
    throw DimensionError("equalized_odds_gap: scores, labels and groups differ in length");
  }
  std::vector<std::size_t> tp(names.size()), fn(names.size()), fp(names.size()), tn(names.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const std::size_t g = groups[i];
    if (g >= names.size()) throw DimensionError("equalized_odds_gap: group index out of range");
    const bool predicted = scores[i] >= threshold;
    if (labels[i] == 1) {
      (predicted ? tp : fn)[g]++;
    } else {
      (predicted ? fp : tn)[g]++;
    }
  }
  EqualizedOddsGap out;
  std::vector<double> tprs, fprs;
  for (std::size_t g = 0; g < names.size(); ++g) {
    GroupRates r{names[g], std::nullopt, std::nullopt};
    if (tp[g] + fn[g] > 0) {
      r.tpr = static_cast<double>(tp[g]) / static_cast<double>(tp[g] + fn[g]);
      tprs.push_back(*r.tpr);
    }
    if (fp[g] + tn[g] > 0) {
      r.fpr = static_cast<double>(fp[g]) / static_cast<double>(fp[g] + tn[g]);
      fprs.push_back(*r.fpr);
    }
    if (!r.tpr || !r.fpr) {
      if (tp[g] + fn[g] + fp[g] + tn[g] > 0) out.any_degenerate = true;
    }
    out.groups.push_back(std::move(r));
  }
  auto max_gap = [](const std::vector<double>& v) -> std::optional<double> {
    if (v.size() < 2) return std::nullopt;
    auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    return *hi - *lo;
  };
  out.tpr_gap = max_gap(tprs);
  out.fpr_gap = max_gap(fprs);
  return out;
}

struct AttributeReport {
  std::string attribute;
  std::vector<GroupAuroc> groups;
  std::optional<double> disparity;
  EqualizedOddsGap equalized_odds;
};

struct MetricsReport {
  std::size_t count = 0;
  std::size_t positives = 0;
  std::optional<double> auroc;
  double threshold = 0.5;
  std::vector<AttributeReport> attributes;

  /// Mean disparity over attributes where it is defined.
  std::optional<double> mean_disparity() const {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& a : attributes) {
      if (a.disparity) {
        sum += *a.disparity;
        ++n;
      }
    }
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
  }
};

/// Assembles overall and per-attribute metrics for scores on `dataset`.
inline MetricsReport report(std::span<const double> scores, const Dataset& dataset, double threshold = 0.5) {
  if (scores.size() != dataset.size()) {
    throw DimensionError("report: " + std::to_string(scores.size()) + " scores for " +
                         std::to_string(dataset.size()) + " records");
  }
  const auto labels = labels_of(dataset);
  MetricsReport r;
  r.count = labels.size();
  r.positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  r.threshold = threshold;
  if (r.positives > 0 && r.positives < r.count) r.auroc = auroc(scores, labels);
  for (std::size_t j = 0; j < dataset.schema.size(); ++j) {
    AttributeReport a;
    a.attribute = dataset.schema[j].name;
    const auto groups = groups_of(dataset, j);
    a.groups = subgroup_auroc(scores, labels, groups, dataset.schema[j].categories);
    const auto defined = std::count_if(a.groups.begin(), a.groups.end(), [](const GroupAuroc& g) { return g.auroc.has_value(); });
    if (defined >= 2) a.disparity = disparity(a.groups);
    a.equalized_odds = equalized_odds_gap(scores, labels, groups, dataset.schema[j].categories, threshold);
    r.attributes.push_back(std::move(a));
  }
  return r;
}

namespace detail {
inline nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}
inline std::string optional_text(const std::optional<double>& v) {
  return v ? csv::format_double(*v) : std::string("undefined");
}
}  // namespace detail

/// Flat (key, value) pairs; the CSV and JSON serializations carry exactly these.
inline std::vector<std::pair<std::string, std::string>> flatten(const MetricsReport& r) {
  using detail::optional_text;
  std::vector<std::pair<std::string, std::string>> kv;
  kv.emplace_back("count", std::to_string(r.count));
  kv.emplace_back("positives", std::to_string(r.positives));
  kv.emplace_back("auroc", optional_text(r.auroc));
  kv.emplace_back("threshold", csv::format_double(r.threshold));
  for (const auto& a : r.attributes) {
    const std::string p = a.attribute + ".";
    kv.emplace_back(p + "disparity", optional_text(a.disparity));
    kv.emplace_back(p + "eo_tpr_gap", optional_text(a.equalized_odds.tpr_gap));
    kv.emplace_back(p + "eo_fpr_gap", optional_text(a.equalized_odds.fpr_gap));
    for (std::size_t g = 0; g < a.groups.size(); ++g) {
      const std::string q = p + "group." + a.groups[g].group + ".";
      kv.emplace_back(q + "count", std::to_string(a.groups[g].count));
      kv.emplace_back(q + "auroc", optional_text(a.groups[g].auroc));
      kv.emplace_back(q + "tpr", optional_text(a.equalized_odds.groups[g].tpr));
      kv.emplace_back(q + "fpr", optional_text(a.equalized_odds.groups[g].fpr));
    }
  }
  return kv;
}

inline std::string to_csv(const MetricsReport& r) {
  std::string out = "key,value\n";
  for (const auto& [k, v] : flatten(r)) out += csv::quote(k) + "," + csv::quote(v) + "\n";
  return out;
}

inline nlohmann::json to_json(const MetricsReport& r) {
  using detail::optional_json;
  nlohmann::json j;
  j["count"] = r.count;
  j["positives"] = r.positives;
  j["auroc"] = optional_json(r.auroc);
  j["threshold"] = r.threshold;
  j["attributes"] = nlohmann::json::array();
  for (const auto& a : r.attributes) {
    nlohmann::json ja;
    ja["attribute"] = a.attribute;
    ja["disparity"] = optional_json(a.disparity);
    ja["eo_tpr_gap"] = optional_json(a.equalized_odds.tpr_gap);
    ja["eo_fpr_gap"] = optional_json(a.equalized_odds.fpr_gap);
    ja["groups"] = nlohmann::json::array();
    for (std::size_t g = 0; g < a.groups.size(); ++g) {
      ja["groups"].push_back({{"group", a.groups[g].group},
                              {"count", a.groups[g].count},
                              {"auroc", optional_json(a.groups[g].auroc)},
                              {"tpr", optional_json(a.equalized_odds.groups[g].tpr)},
                              {"fpr", optional_json(a.equalized_odds.groups[g].fpr)}});
    }
    j["attributes"].push_back(std::move(ja));
  }
  return j;
}

}  // namespace primed
