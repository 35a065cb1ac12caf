#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <set>

#include "fixtures.hpp"
#include "primed/data.hpp"
#include "primed/synth.hpp"

using namespace primed;
using fixtures::TempDir;

namespace {

CsvColumns two_feature_columns() { return CsvColumns{{"a", "b"}, {"grp"}, "y"}; }

}  // namespace

TEST(LoadCsv, ParsesSmallFile) {
  TempDir dir("csv");
  fixtures::write_file(dir.file("d.csv"), "a,b,grp,y\n1.5,2,m,0\n-3,4e-1,f,1\n0,0,m,1\n");
  Dataset d = load_csv(dir.file("d.csv"), two_feature_columns());
  EXPECT_EQ(d.size(), 3u);
  EXPECT_EQ(d.num_features(), 2u);
  EXPECT_EQ(d.schema.size(), 1u);
  EXPECT_EQ(d.records[1].x, (std::vector<double>{-3.0, 0.4}));
  EXPECT_EQ(d.category(0, 0), "m");
  EXPECT_EQ(d.category(1, 0), "f");
  EXPECT_EQ(labels_of(d), (std::vector<int>{0, 1, 1}));
}

TEST(LoadCsv, ColumnRolesComeFromCaller) {
  TempDir dir("csv");
  fixtures::write_file(dir.file("d.csv"), "y,grp,b,unused,a\n1,x,2,zzz,1\n0,y,3,zzz,4\n");
  Dataset d = load_csv(dir.file("d.csv"), two_feature_columns());
  EXPECT_EQ(d.records[0].x, (std::vector<double>{1.0, 2.0}));
  EXPECT_EQ(d.records[1].y, 0);
}

TEST(LoadCsv, BadLabelNamesRowAndColumn) {
  TempDir dir("csv");
  fixtures::write_file(dir.file("d.csv"), "a,b,grp,y\n1,2,m,0\n1,2,m,2\n");
  try {
    load_csv(dir.file("d.csv"), two_feature_columns());
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("'y'"), std::string::npos) << msg;
  }
}

TEST(LoadCsv, MissingValuesStrictOrImputed) {
  TempDir dir("csv");
  fixtures::write_file(dir.file("d.csv"), "a,b,grp,y\n1,,m,0\n3,5,m,1\n");
  EXPECT_THROW(load_csv(dir.file("d.csv"), two_feature_columns()), DataError);
  CsvColumns cols = two_feature_columns();
  cols.missing = MissingPolicy::impute_mean;
  Dataset d = load_csv(dir.file("d.csv"), cols);
  EXPECT_EQ(d.records[0].x[1], 5.0);
}

TEST(LoadCsv, UnknownColumnAndRaggedRow) {
  TempDir dir("csv");
  fixtures::write_file(dir.file("d.csv"), "a,b,grp,y\n1,2,m,0\n");
  CsvColumns cols = two_feature_columns();
  cols.label = "outcome";
  EXPECT_THROW(load_csv(dir.file("d.csv"), cols), DataError);
  fixtures::write_file(dir.file("r.csv"), "a,b,grp,y\n1,2,m\n");
  EXPECT_THROW(load_csv(dir.file("r.csv"), two_feature_columns()), DataError);
}

TEST(LoadCsv, QuotedFieldsWithCommas) {
  TempDir dir("csv");
  fixtures::write_file(dir.file("d.csv"), "a,b,grp,y\n1,2,\"private, employer\",1\n1,2,\"say \"\"hi\"\"\",0\n");
  Dataset d = load_csv(dir.file("d.csv"), two_feature_columns());
  EXPECT_EQ(d.category(0, 0), "private, employer");
  EXPECT_EQ(d.category(1, 0), "say \"hi\"");
}

TEST(SaveCsv, SynthRoundTripAndHeader) {
  TempDir dir("csv");
  SynthConfig cfg;
  cfg.records = 300;
  cfg.attributes = 2;
  cfg.seed = 4;
  Dataset d = generate(cfg).dataset;
  save_csv(d, dir.file("s.csv"));
  const std::string header = fixtures::read_file(dir.file("s.csv")).substr(0, 40);
  EXPECT_EQ(header.rfind("x1,x2,x3", 0), 0u);
  Dataset back = load_csv(dir.file("s.csv"), columns_of(d));
  EXPECT_TRUE(same_content(d, back));
  // Doubles survive exactly.
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_EQ(d.records[i].x, back.records[i].x);
}

TEST(SaveCsv, RejectsEmptyDataset) {
  TempDir dir("csv");
  Dataset d;
  d.feature_names = {"a"};
  EXPECT_THROW(save_csv(d, dir.file("e.csv")), DataError);
}

TEST(Split, TenRecordsSevenTwoOne) {
  auto s = split_indices(10, {}, 0);
  EXPECT_EQ(s.train.size(), 7u);
  EXPECT_EQ(s.validation.size(), 2u);
  EXPECT_EQ(s.test.size(), 1u);
}

TEST(Split, DeterministicPerSeedAndSizesStable) {
  auto a = split_indices(100, {}, 1), b = split_indices(100, {}, 1), c = split_indices(100, {}, 2);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_NE(a.train, c.train);
  EXPECT_NE(a.hash(), c.hash());
  for (const auto* s : {&a, &c}) {
    EXPECT_EQ(s->train.size(), 70u);
    EXPECT_EQ(s->validation.size(), 20u);
    EXPECT_EQ(s->test.size(), 10u);
  }
}

TEST(Split, IsAPartitionForRandomSizes) {
  Rng rng(17);
  std::uniform_int_distribution<std::size_t> size(10, 3000);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = size(rng);
    auto s = split_indices(n, {}, rng());
    std::vector<std::size_t> all;
    for (const auto* part : {&s.train, &s.validation, &s.test}) all.insert(all.end(), part->begin(), part->end());
    std::sort(all.begin(), all.end());
    std::vector<std::size_t> expected(n);
    std::iota(expected.begin(), expected.end(), std::size_t{0});
    EXPECT_EQ(all, expected) << "n=" << n;
  }
}

TEST(Split, RejectsBadRatiosAndTinyInputs) {
  EXPECT_THROW(split_indices(10, {0.7, 0.2, 0.3}, 0), DataError);
  EXPECT_THROW(split_indices(10, {0.8, 0.2, 0.0}, 0), DataError);
  EXPECT_THROW(split_indices(3, {}, 0), DataError);
}

TEST(Frequencies, HandCases) {
  auto even = attribute_frequencies(fixtures::grouped({0, 1, 0, 1}, {0, 0, 1, 1}));
  EXPECT_EQ(*even.frequency(0, 0), 0.5);
  EXPECT_EQ(*even.frequency(0, 1), 0.5);
  auto single = attribute_frequencies(fixtures::grouped({0, 0, 0}, {0, 1, 0}));
  EXPECT_EQ(*single.frequency(0, 0), 1.0);
  EXPECT_FALSE(single.frequency(0, 1).has_value());
  auto skewed = attribute_frequencies(fixtures::grouped({0, 0, 0, 1}, {0, 1, 0, 1}));
  EXPECT_EQ(*skewed.frequency(0, 0), 0.75);
  EXPECT_EQ(*skewed.frequency(0, 1), 0.25);
}

TEST(PropensityWeights, TwoAttributesGiveEight) {
  // Attribute 1: category of interest has frequency 0.5; attribute 2: 0.25.
  Dataset d;
  d.feature_names = {"f"};
  d.schema = SensitiveSchema({{"s1", {"a", "b"}}, {"s2", {"c", "d"}}});
  const std::size_t s1[] = {0, 0, 1, 1}, s2[] = {0, 1, 1, 1};
  for (int i = 0; i < 4; ++i) d.records.push_back({{0.0}, {s1[i], s2[i]}, 0});
  auto w = propensity_weights(attribute_frequencies(d), d, false);
  EXPECT_EQ(w.values[0], 8.0);
}

TEST(PropensityWeights, SingleCategoryAttributesGiveOne) {
  auto d = fixtures::grouped({0, 0, 0, 0}, {0, 1, 1, 0});
  for (double v : propensity_weights(attribute_frequencies(d), d, false).values) EXPECT_EQ(v, 1.0);
  for (double v : propensity_weights(attribute_frequencies(d), d, true).values) EXPECT_EQ(v, 1.0);
}

TEST(PropensityWeights, NormalizationKeepsRatiosAndMeanOne) {
  std::vector<std::size_t> g(100, 0);
  std::fill(g.begin(), g.begin() + 10, 1);
  auto d = fixtures::grouped(g, std::vector<int>(100, 0));
  auto raw = propensity_weights(attribute_frequencies(d), d, false);
  auto norm = propensity_weights(attribute_frequencies(d), d, true);
  EXPECT_NEAR(norm.values[0] / norm.values[50], 9.0, 1e-12);
  EXPECT_NEAR(std::accumulate(norm.values.begin(), norm.values.end(), 0.0) / 100.0, 1.0, 1e-12);
  for (std::size_t i = 0; i < 100; ++i)
    for (std::size_t j = 0; j < 100; j += 7) {
      EXPECT_NEAR(norm.values[i] / norm.values[j], raw.values[i] / raw.values[j], 1e-12);
    }
}

TEST(PropensityWeights, BalanceCategoriesForOneAttribute) {
  // The weighted count of every category equals N.
  Rng rng(8);
  for (int t = 0; t < 20; ++t) {
    std::vector<std::size_t> g(200);
    Dataset d;
    d.feature_names = {"f"};
    d.schema = SensitiveSchema({{"g", {"a", "b", "c"}}});
    for (auto& v : g) {
      v = std::uniform_int_distribution<std::size_t>(0, 2)(rng);
      d.records.push_back({{0.0}, {v}, 0});
    }
    auto w = propensity_weights(attribute_frequencies(d), d, false);
    std::map<std::size_t, double> mass;
    for (std::size_t i = 0; i < g.size(); ++i) mass[g[i]] += w.values[i];
    for (const auto& [cat, m] : mass) EXPECT_NEAR(m, 200.0, 1e-9);
  }
}

TEST(PropensityWeights, UnseenCategoryIsAnError) {
  auto train = fixtures::grouped({0, 0}, {0, 1});
  auto other = fixtures::grouped({1}, {0});
  EXPECT_THROW(propensity_weights(attribute_frequencies(train), other, false), DataError);
}

TEST(EncodeSensitive, OneHotBlocks) {
  SensitiveSchema one({{"g", {"a", "b"}}});
  EXPECT_EQ(encode_sensitive({{}, {1}, 0}, one), (std::vector<double>{0, 1}));
  SensitiveSchema two({{"g", {"a", "b"}}, {"h", {"p", "q", "r"}}});
  auto e = encode_sensitive({{}, {0, 2}, 0}, two);
  EXPECT_EQ(e, (std::vector<double>{1, 0, 0, 0, 1}));
  EXPECT_EQ(std::count(e.begin(), e.end(), 1.0), 2);
}

TEST(Standardize, TrainStatisticsOnly) {
  Dataset train;
  train.feature_names = {"u", "const"};
  train.schema = SensitiveSchema(std::vector<SensitiveAttribute>{{"g", {"a"}}});
  for (int i = 0; i < 10; ++i) train.records.push_back({{static_cast<double>(i), 3.0}, {0}, i % 2});
  Dataset test = train;
  for (auto& r : test.records) r.x[0] += 100.0;

  auto scaler = FeatureScaler::fit(train);
  auto st = scaler.apply(train);
  auto ss = scaler.apply(test);
  double mean = 0.0;
  for (const auto& r : st.records) {
    mean += r.x[0];
    EXPECT_EQ(r.x[1], 0.0);
  }
  EXPECT_NEAR(mean / 10.0, 0.0, 1e-9);
  // The shifted test set keeps its offset under the training statistics.
  EXPECT_NEAR(ss.records[0].x[0] - st.records[0].x[0], 100.0 / scaler.std[0], 1e-9);
}
