#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "checks.hpp"
#include "fixtures.hpp"
#include "primed/experiment.hpp"
#include "primed/predictor.hpp"
#include "primed/synth.hpp"

using namespace primed;

namespace {

ModelInputs random_inputs(std::size_t n, const ClassifierShape& shape, std::uint64_t seed) {
  Rng rng(seed);
  return {standard_normal({n, shape.features}, rng), checks::one_hot_rows(n, shape.sensitive, rng),
          standard_normal({n, shape.latent}, rng)};
}

PredictorTrainConfig quick_config(std::size_t epochs = 20) {
  PredictorTrainConfig cfg;
  cfg.epochs = epochs;
  cfg.learning_rate = 1e-2;
  cfg.batch_size = 32;
  return cfg;
}

}  // namespace

TEST(AttentionWeights, UniformCasesAndClosedForm) {
  const Tensor w = Tensor::matrix({{0.4, -1.0}, {2.0, 0.3}, {-0.7, 0.1}});
  for (double v : attention_weights(Tensor::zeros({3, 2}), std::vector<double>{1.0, 2.0})) EXPECT_DOUBLE_EQ(v, 1.0 / 3);
  for (double v : attention_weights(w, std::vector<double>{0.0, 0.0})) EXPECT_DOUBLE_EQ(v, 1.0 / 3);
  auto p = attention_weights(Tensor::matrix({{std::log(3.0)}, {0.0}}), std::vector<double>{1.0});
  EXPECT_NEAR(p[0], 0.75, 1e-15);
  EXPECT_NEAR(p[1], 0.25, 1e-15);
}

TEST(AttentionWeights, InvariantToCommonLogitShift) {
  // Appending a constant column to W with z's matching entry fixed adds c to every logit.
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    Tensor w = standard_normal({4, 2}, rng);
    const double c = std::normal_distribution<double>(0, 5)(rng);
    Tensor wc(Shape{4, 3});
    for (std::size_t r = 0; r < 4; ++r) {
      wc.at(r, 0) = w.at(r, 0);
      wc.at(r, 1) = w.at(r, 1);
      wc.at(r, 2) = c;
    }
    std::vector<double> z{std::normal_distribution<double>(0, 1)(rng), std::normal_distribution<double>(0, 1)(rng)};
    auto a = attention_weights(w, z);
    auto b = attention_weights(wc, std::vector<double>{z[0], z[1], 1.0});
    for (std::size_t i = 0; i < 4; ++i) EXPECT_LT(std::abs(a[i] - b[i]), 1e-12);
  }
}

TEST(Predict, RangeDeterminismAndGatedInputs) {
  const ClassifierShape shape{5, 2, 3, 8};
  auto model = Classifier::initialize(ModelKind::primed, shape, 1);
  Rng jr(2);
  checks::jitter(model.params(), jr);
  auto in = random_inputs(20, shape, 4);
  auto p = predict(model, in);
  EXPECT_EQ(p, predict(model, in));
  for (double v : p) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  // With x = 0 and s = 0 the gated terms vanish: the attention matrices no longer matter.
  ModelInputs zeroed{Tensor::zeros({20, 5}), Tensor::zeros({20, 2}), in.z};
  auto other = model;
  for (auto& v : other.params().at("attention.x").values()) v += 1.0;
  for (auto& v : other.params().at("attention.s").values()) v -= 2.0;
  EXPECT_EQ(predict(model, zeroed), predict(other, zeroed));
}

TEST(Predict, OrderedLikeLogits) {
  auto model = Classifier::initialize(ModelKind::dnn, ClassifierShape{3, 2, 0, 4}, 1);
  Rng rng(2);
  ModelInputs in{standard_normal({30, 3}, rng), checks::one_hot_rows(30, 2, rng), Tensor()};
  ad::Graph g;
  const Tensor logits = g.value(model.logits(g, bind_constant(g, model.params()), in));
  auto p = predict(model, in);
  for (std::size_t i = 0; i < p.size(); ++i)
    for (std::size_t j = 0; j < p.size(); ++j) {
      if (logits[i] > logits[j]) EXPECT_GT(p[i], p[j]);
    }
}

TEST(Predict, RejectsMissingLatent) {
  auto model = Classifier::initialize(ModelKind::primed, ClassifierShape{3, 2, 2, 4}, 1);
  ModelInputs in{Tensor::zeros({4, 3}), Tensor::zeros({4, 2}), Tensor()};
  EXPECT_THROW(predict(model, in), DimensionError);
}

TEST(BceLoss, FullLossPassesGradCheckForEveryKind) {
  for (auto kind : {ModelKind::primed, ModelKind::stage2_only, ModelKind::dnn, ModelKind::latent_logistic}) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      EXPECT_LT(checks::predictor_bce_error(seed, kind), 1e-4) << to_string(kind) << " seed " << seed;
    }
  }
}

TEST(BceLoss, MatchesDirectFormula) {
  ad::Graph g;
  std::vector<double> l{-2.0, 0.5, 3.0};
  std::vector<int> y{0, 1, 1};
  auto loss = g.value(bce_loss(g, g.constant(Tensor::matrix(3, 1, l)), y, std::nullopt)).item();
  double ref = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double p = 1.0 / (1.0 + std::exp(-l[i]));
    ref -= y[i] ? std::log(p) : std::log(1 - p);
  }
  EXPECT_NEAR(loss, ref / 3.0, 1e-14);
}

TEST(TrainPrimed, LossDropsAndDeterministic) {
  SynthConfig sc;
  sc.records = 1500;
  sc.gamma = 1.0;
  sc.seed = 2;
  auto data = prepare(generate(sc).dataset, {}, 2);
  ExperimentSettings st;
  st.cvae.epochs = 10;
  st.cvae.learning_rate = 1e-3;
  st.predictor = quick_config(15);
  auto s1 = run_stage1(data, st);
  TrainingData td{inputs_from(data.train, s1.z_train), labels_of(data.train), inputs_from(data.validation, s1.z_validation),
                  labels_of(data.validation)};
  auto a = train_primed(td, 16, st.predictor);
  auto b = train_primed(td, 16, st.predictor);
  EXPECT_LT(a.loss_trace.back(), a.loss_trace.front());
  EXPECT_EQ(a.model, b.model);
  EXPECT_EQ(a.loss_trace, b.loss_trace);
  EXPECT_GE(a.best_epoch, 1u);
}

TEST(TrainPrimed, AllZeroLabelsPushPredictionsDown) {
  const ClassifierShape shape{4, 2, 3, 8};
  auto in = random_inputs(100, shape, 9);
  std::vector<int> y(100, 0);
  TrainingData td{in, y, ModelInputs{}, {}};
  auto r = train_primed(td, 8, quick_config(30));
  for (double p : predict(r.model, in)) EXPECT_LT(p, 0.5);
}

TEST(TrainDnn, SeparableDataAndDeterminism) {
  Rng rng(4);
  const std::size_t n = 300;
  Tensor x = standard_normal({n, 3}, rng);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = x.at(i, 0) + 0.5 * x.at(i, 1) > 0 ? 1 : 0;
  ModelInputs in{x, checks::one_hot_rows(n, 2, rng), Tensor()};
  TrainingData td{in, y, in, y};
  Dataset unused;
  auto a = train_dnn(td, unused, 16, quick_config(40));
  auto b = train_dnn(td, unused, 16, quick_config(40));
  EXPECT_GT(auroc(predict(a.model, in), y), 0.99);
  EXPECT_EQ(a.model, b.model);
  for (double p : predict(a.model, in)) {
    EXPECT_GT(p, 0.0);
    EXPECT_LT(p, 1.0);
  }
}

TEST(EarlyStopping, KeepsBestValidationEpoch) {
  const ClassifierShape shape{4, 2, 3, 8};
  auto in = random_inputs(200, shape, 10);
  Rng rng(1);
  std::vector<int> y(200), yv(200);
  for (auto& v : y) v = std::bernoulli_distribution(0.5)(rng);
  for (auto& v : yv) v = std::bernoulli_distribution(0.5)(rng);
  auto cfg = quick_config(60);
  cfg.patience = 3;
  TrainingData td{in, y, random_inputs(200, shape, 11), yv};
  auto r = train_primed(td, 8, cfg);
  ASSERT_FALSE(r.validation_trace.empty());
  const auto best = std::max_element(r.validation_trace.begin(), r.validation_trace.end());
  EXPECT_EQ(r.best_epoch, static_cast<std::size_t>(best - r.validation_trace.begin()) + 1);
  EXPECT_EQ(auroc(predict(r.model, td.validation), yv), *best);
  EXPECT_LE(r.validation_trace.size(), r.best_epoch + cfg.patience);
}

TEST(Kamiran, IndependentCellsGiveOne) {
  auto d = fixtures::grouped({0, 0, 1, 1, 0, 0, 1, 1}, {0, 1, 0, 1, 0, 1, 0, 1});
  for (double w : kamiran_weights(d)) EXPECT_DOUBLE_EQ(w, 1.0);
}

TEST(Kamiran, HandCase) {
  // P(g=1) = 0.5, P(y=1) = 0.5, P(g=1, y=1) = 0.4 over 10 records.
  std::vector<std::size_t> g{1, 1, 1, 1, 1, 0, 0, 0, 0, 0};
  std::vector<int> y{1, 1, 1, 1, 0, 1, 0, 0, 0, 0};
  auto w = kamiran_weights(fixtures::grouped(g, y));
  EXPECT_DOUBLE_EQ(w[0], 0.625);
}

TEST(Kamiran, PreservesPositiveRateAndMass) {
  Rng rng(31);
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(20, 400)(rng);
    const double pg = std::uniform_real_distribution<double>(0.1, 0.9)(rng);
    std::vector<std::size_t> g(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      g[i] = std::bernoulli_distribution(pg)(rng) ? 1 : 0;
      y[i] = std::bernoulli_distribution(g[i] ? 0.7 : 0.3)(rng) ? 1 : 0;
    }
    for (std::size_t c = 0; c < 4; ++c) {  // make every cell nonempty
      g[c] = c / 2;
      y[c] = static_cast<int>(c % 2);
    }
    auto w = kamiran_weights(fixtures::grouped(g, y));
    double mass = 0.0, pos = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      mass += w[i];
      pos += y[i] ? w[i] : 0.0;
    }
    const double rate = static_cast<double>(std::count(y.begin(), y.end(), 1)) / static_cast<double>(n);
    EXPECT_NEAR(mass, static_cast<double>(n), 1e-9);
    EXPECT_NEAR(pos / mass, rate, 1e-9);
  }
}

TEST(Kamiran, EmptyCellIsAnError) {
  EXPECT_THROW(kamiran_weights(fixtures::grouped({0, 0, 1, 1}, {0, 1, 1, 1})), DataError);
}

TEST(Stage1Only, NoSignalGivesChanceAuroc) {
  Rng rng(5);
  const std::size_t n = 2000;
  ModelInputs in{Tensor::zeros({n, 1}), checks::one_hot_rows(n, 2, rng), standard_normal({n, 4}, rng)};
  std::vector<int> y(n);
  for (auto& v : y) v = std::bernoulli_distribution(0.5)(rng);
  ModelInputs test{Tensor::zeros({n, 1}), checks::one_hot_rows(n, 2, rng), standard_normal({n, 4}, rng)};
  std::vector<int> yt(n);
  for (auto& v : yt) v = std::bernoulli_distribution(0.5)(rng);
  TrainingData td{in, y, in, y};
  auto a = ablation_stage1_only(td, quick_config(10));
  auto b = ablation_stage1_only(td, quick_config(10));
  EXPECT_EQ(a.model, b.model);
  EXPECT_NEAR(auroc(predict(a.model, test), yt), 0.5, 0.05);
}

TEST(Stage2Only, AcceptsDnnInputsAndIsDeterministic) {
  const ClassifierShape shape{4, 2, 3, 8};
  auto in = random_inputs(100, shape, 12);
  in.z = Tensor();
  Rng rng(2);
  std::vector<int> y(100);
  for (auto& v : y) v = std::bernoulli_distribution(0.5)(rng);
  TrainingData td{in, y, in, y};
  auto a = ablation_stage2_only(td, 3, 8, quick_config(5));
  auto b = ablation_stage2_only(td, 3, 8, quick_config(5));
  EXPECT_EQ(a.model, b.model);
  EXPECT_EQ(predict(a.model, in).size(), 100u);
}
