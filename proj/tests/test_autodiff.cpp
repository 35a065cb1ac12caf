#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "primed/autodiff.hpp"
#include "primed/grad_check.hpp"
#include "primed/optim.hpp"
#include "primed/random.hpp"

using namespace primed;
using ad::Graph;
using ad::NodeId;

namespace {

Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  Tensor c(Shape{a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j)
      for (std::size_t k = 0; k < a.cols(); ++k) c.at(i, j) += a.at(i, k) * b.at(k, j);
  return c;
}

}  // namespace

TEST(Matmul, IdentityZeroAndHandCase) {
  Graph g;
  auto m = Tensor::matrix({{1, 2}, {3, 4}});
  EXPECT_EQ(g.value(g.matmul(g.constant(Tensor::matrix({{1, 0}, {0, 1}})), g.constant(m))), m);
  auto zero = g.value(g.matmul(g.constant(Tensor::zeros({2, 2})), g.constant(Tensor::matrix({{1, 2, 3}, {4, 5, 6}}))));
  EXPECT_EQ(zero, Tensor::zeros({2, 3}));
  EXPECT_EQ(g.value(g.matmul(g.constant(m), g.constant(Tensor::matrix({{5}, {6}})))), Tensor::matrix({{17}, {39}}));
}

TEST(Matmul, AgreesWithTripleLoop) {
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    auto a = standard_normal({4, 7}, rng);
    auto b = standard_normal({7, 3}, rng);
    Graph g;
    const Tensor& c = g.value(g.matmul(g.constant(a), g.constant(b)));
    const Tensor ref = naive_matmul(a, b);
    for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(c[i], ref[i], 1e-12);
  }
}

TEST(Matmul, RejectsMismatchedInnerDimension) {
  Graph g;
  EXPECT_THROW(g.matmul(g.constant(Tensor::zeros({2, 3})), g.constant(Tensor::zeros({2, 3}))), DimensionError);
}

TEST(Elementwise, SimpleValues) {
  Graph g;
  EXPECT_DOUBLE_EQ(g.value(g.sigmoid(g.constant(Tensor::scalar(0.0)))).item(), 0.5);
  EXPECT_EQ(g.value(g.mul(g.constant(Tensor::vector({1, 2, 3})), g.constant(Tensor::vector({0, 0, 0})))),
            Tensor::vector({0, 0, 0}));
  EXPECT_EQ(g.value(g.add(g.constant(Tensor::vector({1, 2})), g.constant(Tensor::vector({3, 4})))),
            Tensor::vector({4, 6}));
}

TEST(Elementwise, ShapeMismatchAndLogDomain) {
  Graph g;
  EXPECT_THROW(g.add(g.constant(Tensor::vector({1, 2})), g.constant(Tensor::vector({1, 2, 3}))), DimensionError);
  EXPECT_THROW(g.log(g.constant(Tensor::vector({1.0, 0.0}))), DomainError);
  EXPECT_THROW(g.log(g.constant(Tensor::vector({-1.0}))), DomainError);
}

TEST(Softmax, UniformSingleAndLargeInputs) {
  Graph g;
  auto u = g.value(g.softmax(g.constant(Tensor::vector({0, 0, 0, 0}))));
  for (double v : u.values()) EXPECT_DOUBLE_EQ(v, 0.25);
  EXPECT_DOUBLE_EQ(g.value(g.softmax(g.constant(Tensor::vector({-123.0})))).item(), 1.0);

  auto big = g.value(g.softmax(g.constant(Tensor::vector({1000.0, 0.0}))));
  // Extended-precision oracle: long double still represents e^-1000.
  const long double tail = std::exp(-1000.0L);
  EXPECT_TRUE(std::isfinite(big[0]) && std::isfinite(big[1]));
  EXPECT_NEAR(big[0], static_cast<double>(1.0L / (1.0L + tail)), 1e-15);
  EXPECT_NEAR(big[1], static_cast<double>(tail / (1.0L + tail)), 1e-300);
}

TEST(Softmax, ProbabilityVectorAndShiftInvariance) {
  Rng rng(11);
  for (int t = 0; t < 100; ++t) {
    auto v = standard_normal({6}, rng);
    for (auto& x : v.values()) x *= 20.0;
    const double c = std::uniform_real_distribution<double>(-50, 50)(rng);
    Tensor shifted = v;
    for (auto& x : shifted.values()) x += c;
    Graph g;
    const Tensor p = g.value(g.softmax(g.constant(v)));
    const Tensor q = g.value(g.softmax(g.constant(shifted)));
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      EXPECT_GT(p[i], 0.0);
      EXPECT_LE(p[i], 1.0);
      EXPECT_LT(std::abs(p[i] - q[i]), 1e-12);
      total += p[i];
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Concat, ValuesEmptyPartAndGradient) {
  Graph g;
  EXPECT_EQ(g.value(g.concat({g.constant(Tensor::vector({1, 2})), g.constant(Tensor::vector({3}))})),
            Tensor::vector({1, 2, 3}));
  EXPECT_EQ(g.value(g.concat({g.constant(Tensor::vector({})), g.constant(Tensor::vector({5}))})), Tensor::vector({5}));

  Graph h;
  NodeId a = h.parameter(Tensor::vector({0.3, -1.0, 2.0}));
  NodeId b = h.parameter(Tensor::vector({4.0}));
  auto grads = h.backward(h.reduce_sum(h.concat({a, b})));
  EXPECT_EQ(grads.of(a), Tensor::vector({1, 1, 1}));
}

TEST(ReduceSum, Values) {
  Graph g;
  EXPECT_EQ(g.value(g.reduce_sum(g.constant(Tensor::zeros({3})))).item(), 0.0);
  EXPECT_EQ(g.value(g.reduce_sum(g.constant(Tensor::vector({1, 2, 3})))).item(), 6.0);
  EXPECT_EQ(g.value(g.reduce_sum(g.constant(Tensor::ones({2, 2})))).item(), 4.0);
}

TEST(Backward, IdentityAndSquare) {
  Graph g;
  NodeId p = g.parameter(Tensor::scalar(3.0));
  EXPECT_EQ(g.backward(p).of(p).item(), 1.0);

  Graph h;
  NodeId q = h.parameter(Tensor::vector({1, 2}));
  EXPECT_EQ(h.backward(h.reduce_sum(h.mul(q, q))).of(q), Tensor::vector({2, 4}));
}

TEST(Backward, UnusedParameterGetsExactZero) {
  Graph g;
  NodeId used = g.parameter(Tensor::vector({1, 2}));
  NodeId unused = g.parameter(Tensor::matrix({{1, 2}, {3, 4}}));
  auto grads = g.backward(g.reduce_sum(g.tanh(used)));
  EXPECT_EQ(grads.of(unused), Tensor::zeros({2, 2}));
}

TEST(Backward, RejectsNonScalarLoss) {
  Graph g;
  NodeId p = g.parameter(Tensor::vector({1, 2}));
  EXPECT_THROW(g.backward(p), DimensionError);
}

// Every op against central differences on random inputs.
class OpGradient : public ::testing::TestWithParam<int> {};

TEST_P(OpGradient, MatchesFiniteDifferences) {
  Rng rng(static_cast<std::uint64_t>(GetParam()));
  auto positive = [&](Shape s) {
    Tensor t = uniform(std::move(s), 0.5, 2.0, rng);
    return t;
  };
  const Tensor a = standard_normal({3, 4}, rng), b = standard_normal({3, 4}, rng);
  const Tensor c = standard_normal({4, 2}, rng), bias = standard_normal({4}, rng);
  const Tensor pos = positive({3, 4});

  // A weighted sum keeps every output entry in play.
  auto finish = [&](Graph& g, NodeId n) {
    const Tensor& v = g.value(n);
    Tensor w(v.shape());
    Rng wr(99);
    for (auto& x : w.values()) x = std::normal_distribution<double>(0, 1)(wr);
    return g.reduce_sum(g.mul(n, g.constant(w)));
  };

  using B = ad::LossBuilder;
  std::vector<std::pair<B, std::vector<Tensor>>> cases = {
      {[&](Graph& g, auto p) { return finish(g, g.add(p[0], p[1])); }, {a, b}},
      {[&](Graph& g, auto p) { return finish(g, g.sub(p[0], p[1])); }, {a, b}},
      {[&](Graph& g, auto p) { return finish(g, g.mul(p[0], p[1])); }, {a, b}},
      {[&](Graph& g, auto p) { return finish(g, g.sigmoid(p[0])); }, {a}},
      {[&](Graph& g, auto p) { return finish(g, g.tanh(p[0])); }, {a}},
      {[&](Graph& g, auto p) { return finish(g, g.exp(p[0])); }, {a}},
      {[&](Graph& g, auto p) { return finish(g, g.log(p[0])); }, {pos}},
      {[&](Graph& g, auto p) { return finish(g, g.softplus(p[0])); }, {a}},
      {[&](Graph& g, auto p) { return finish(g, g.matmul(p[0], p[1])); }, {a, c}},
      {[&](Graph& g, auto p) { return finish(g, g.add_bias(p[0], p[1])); }, {a, bias}},
      {[&](Graph& g, auto p) { return finish(g, g.softmax(p[0])); }, {a}},
      {[&](Graph& g, auto p) { return finish(g, g.transpose(p[0])); }, {a}},
      {[&](Graph& g, auto p) { return finish(g, g.concat_cols({p[0], p[1]})); }, {a, b}},
      {[&](Graph& g, auto p) { return finish(g, g.slice_cols(p[0], 1, 2)); }, {a}},
      {[&](Graph& g, auto p) { return finish(g, g.row_sum(p[0])); }, {a}},
      {[&](Graph& g, auto p) { return finish(g, g.scale(p[0], -2.5)); }, {a}},
      {[&](Graph& g, auto p) { return finish(g, g.shift(p[0], 0.7)); }, {a}},
      {[&](Graph& g, auto p) { return finish(g, g.clamp(p[0], -0.5, 0.5)); }, {a}},
      {[&](Graph& g, auto p) { return finish(g, g.concat({p[0], p[1]})); }, {bias, bias}},
      {[&](Graph& g, auto p) { return finish(g, g.softmax(p[0])); }, {bias}},
  };
  for (std::size_t i = 0; i < cases.size(); ++i) {
    EXPECT_LT(ad::grad_check(cases[i].first, cases[i].second), 1e-4) << "case " << i;
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, OpGradient, ::testing::Range(0, 100));

TEST(Relu, GradientAwayFromKink) {
  Tensor x = Tensor::vector({-1.5, -0.2, 0.3, 2.0});
  double err = ad::grad_check([](Graph& g, auto p) { return g.reduce_sum(g.mul(g.relu(p[0]), g.relu(p[0]))); }, {x});
  EXPECT_LT(err, 1e-6);
}

TEST(GradCheck, LinearLossIsExact) {
  Tensor w = Tensor::vector({0.5, -1.0, 3.0});
  double err = ad::grad_check(
      [](Graph& g, auto p) { return g.reduce_sum(g.mul(p[0], g.constant(Tensor::vector({2, -3, 7})))); }, {w});
  EXPECT_LT(err, 1e-10);
}

TEST(AdamW, ZeroGradientNoDecayLeavesParameters) {
  AdamW opt(AdamConfig{1e-3, 0.0});
  std::vector<Tensor> p{Tensor::vector({1.0, -2.0})};
  std::vector<Tensor> gr{Tensor::vector({0.0, 0.0})};
  opt.step(p, gr);
  EXPECT_EQ(p[0], Tensor::vector({1.0, -2.0}));
  EXPECT_EQ(opt.steps(), 1u);
}

TEST(AdamW, FirstStepMovesAgainstGradientSign) {
  AdamW opt(AdamConfig{1e-2, 0.0});
  std::vector<Tensor> p{Tensor::vector({0.0, 0.0})};
  std::vector<Tensor> gr{Tensor::vector({3.0, -0.1})};
  opt.step(p, gr);
  EXPECT_LT(p[0][0], 0.0);
  EXPECT_GT(p[0][1], 0.0);
  // Bias-corrected first step has magnitude lr * |g| / (|g| + eps).
  EXPECT_NEAR(p[0][0], -1e-2 * 3.0 / (3.0 + 1e-8), 1e-15);
}

TEST(AdamW, TwoStepsOnSquareMatchHandComputation) {
  AdamConfig cfg{0.1, 0.0};
  AdamW opt(cfg);
  std::vector<Tensor> p{Tensor::scalar(1.0)};
  double ref = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 2; ++t) {
    std::vector<Tensor> gr{Tensor::scalar(2.0 * p[0].item())};
    const double gval = 2.0 * ref;
    m = cfg.beta1 * m + (1 - cfg.beta1) * gval;
    v = cfg.beta2 * v + (1 - cfg.beta2) * gval * gval;
    const double mh = m / (1 - std::pow(cfg.beta1, t)), vh = v / (1 - std::pow(cfg.beta2, t));
    ref -= cfg.learning_rate * mh / (std::sqrt(vh) + cfg.epsilon);
    const double before = std::abs(p[0].item());
    opt.step(p, gr);
    EXPECT_LT(std::abs(p[0].item()), before);
    EXPECT_NEAR(p[0].item(), ref, 1e-14);
  }
}

TEST(AdamW, DecoupledDecayShrinksTowardZero) {
  AdamW opt(AdamConfig{0.1, 0.5});
  std::vector<Tensor> p{Tensor::vector({2.0})};
  std::vector<Tensor> gr{Tensor::vector({0.0})};
  opt.step(p, gr);
  EXPECT_DOUBLE_EQ(p[0][0], 2.0 - 0.1 * 0.5 * 2.0);
}

TEST(AdamW, DeterministicBitwise) {
  Rng rng(5);
  std::vector<Tensor> p1{standard_normal({3, 3}, rng)};
  std::vector<Tensor> gr{standard_normal({3, 3}, rng)};
  auto p2 = p1;
  AdamW a, b;
  for (int i = 0; i < 5; ++i) {
    a.step(p1, gr);
    b.step(p2, gr);
  }
  EXPECT_EQ(p1, p2);
}
