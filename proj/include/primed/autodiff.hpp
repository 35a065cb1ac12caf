#pragma once

// Define-by-run reverse-mode automatic differentiation over Tensor values.
//
// A Graph is an append-only tape. Every operation evaluates eagerly, stores
// its output, and records enough to apply its adjoint later. Node inputs
// always have smaller ids than the node itself, so one reverse sweep over
// ids visits each node exactly once.
//
// There is no broadcasting: binary elementwise ops require identical shapes,
// and the only row-wise expansion is the explicit add_bias.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "primed/error.hpp"
#include "primed/tensor.hpp"

namespace primed::ad {

struct NodeId {
  std::size_t index = 0;
  friend bool operator==(NodeId, NodeId) = default;
};

enum class ElementwiseOp { add, sub, mul, sigmoid, tanh, relu, exp, log };

namespace detail {

enum class OpTag {
  leaf,
  matmul,
  add,
  sub,
  mul,
  sigmoid,
  tanh,
  relu,
  exp,
  log,
  softplus,
  scale,
  shift,
  clamp,
  transpose,
  add_bias,
  softmax,
  concat,
  concat_cols,
  slice_cols,
  row_sum,
  reduce_sum,
};

inline double sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

inline double softplus(double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); }

// c (m x n) += a (m x k) * b (k x n)
inline void gemm_nn(const Tensor& a, const Tensor& b, Tensor& c) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = &c.values()[i * n];
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = &b.values()[p * n];
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c (m x k) += g (m x n) * b^T  where b is (k x n)
inline void gemm_nt(const Tensor& g, const Tensor& b, Tensor& c) {
  const std::size_t m = g.rows(), n = g.cols(), k = b.rows();
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = &g.values()[i * n];
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = &b.values()[p * n];
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      c[i * k + p] += acc;
    }
  }
}

// c (k x n) += a^T * g  where a is (m x k), g is (m x n)
inline void gemm_tn(const Tensor& a, const Tensor& g, Tensor& c) {
  const std::size_t m = a.rows(), k = a.cols(), n = g.cols();
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = &g.values()[i * n];
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      double* crow = &c.values()[p * n];
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

}  // namespace detail

/// Gradients of a scalar loss with respect to every parameter node of a graph.
class Gradients {
 public:
  Gradients() = default;
  Gradients(std::vector<Tensor> grads, std::vector<NodeId> parameters)
      : grads_(std::move(grads)), parameters_(std::move(parameters)) {}

  const Tensor& of(NodeId id) const { return grads_.at(id.index); }
  const std::vector<NodeId>& parameters() const { return parameters_; }

 private:
  std::vector<Tensor> grads_;
  std::vector<NodeId> parameters_;
};

class Graph {
 public:
  NodeId constant(Tensor value) { return push(detail::OpTag::leaf, {}, std::move(value)); }

  NodeId parameter(Tensor value) {
    NodeId id = push(detail::OpTag::leaf, {}, std::move(value));
    nodes_.back().trainable = true;
    parameters_.push_back(id);
    return id;
  }

  const Tensor& value(NodeId id) const { return nodes_.at(id.index).value; }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<NodeId>& parameters() const { return parameters_; }

  NodeId matmul(NodeId a, NodeId b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (!av.is_matrix() || !bv.is_matrix() || av.cols() != bv.rows()) {
      throw DimensionError("matmul: cannot multiply " + shape_string(av.shape()) + " by " +
                           shape_string(bv.shape()));
    }
    Tensor out(Shape{av.rows(), bv.cols()});
    detail::gemm_nn(av, bv, out);
    return push(detail::OpTag::matmul, {a, b}, std::move(out));
  }

  NodeId elementwise(ElementwiseOp op, NodeId a, std::optional<NodeId> b = std::nullopt) {
    const bool binary = op == ElementwiseOp::add || op == ElementwiseOp::sub || op == ElementwiseOp::mul;
    if (binary != b.has_value()) {
      throw DimensionError(binary ? "elementwise: binary op needs two operands"
                                  : "elementwise: unary op takes one operand");
    }
    switch (op) {
      case ElementwiseOp::add:
        return binary_op(detail::OpTag::add, a, *b, [](double x, double y) { return x + y; });
      case ElementwiseOp::sub:
        return binary_op(detail::OpTag::sub, a, *b, [](double x, double y) { return x - y; });
      case ElementwiseOp::mul:
        return binary_op(detail::OpTag::mul, a, *b, [](double x, double y) { return x * y; });
      case ElementwiseOp::sigmoid:
        return unary_op(detail::OpTag::sigmoid, a, detail::sigmoid);
      case ElementwiseOp::tanh:
        return unary_op(detail::OpTag::tanh, a, [](double x) { return std::tanh(x); });
      case ElementwiseOp::relu:
        return unary_op(detail::OpTag::relu, a, [](double x) { return x > 0 ? x : 0.0; });
      case ElementwiseOp::exp:
        return unary_op(detail::OpTag::exp, a, [](double x) { return std::exp(x); });
      case ElementwiseOp::log: {
        for (double v : value(a).values()) {
          if (!(v > 0.0)) throw DomainError("log: input must be strictly positive, got " + std::to_string(v));
        }
        return unary_op(detail::OpTag::log, a, [](double x) { return std::log(x); });
      }
    }
    throw DimensionError("elementwise: unknown op");
  }

  NodeId add(NodeId a, NodeId b) { return elementwise(ElementwiseOp::add, a, b); }
  NodeId sub(NodeId a, NodeId b) { return elementwise(ElementwiseOp::sub, a, b); }
  NodeId mul(NodeId a, NodeId b) { return elementwise(ElementwiseOp::mul, a, b); }
  NodeId sigmoid(NodeId a) { return elementwise(ElementwiseOp::sigmoid, a); }
  NodeId tanh(NodeId a) { return elementwise(ElementwiseOp::tanh, a); }
  NodeId relu(NodeId a) { return elementwise(ElementwiseOp::relu, a); }
  NodeId exp(NodeId a) { return elementwise(ElementwiseOp::exp, a); }
  NodeId log(NodeId a) { return elementwise(ElementwiseOp::log, a); }

  /// log(1 + e^a), evaluated without overflow.
  NodeId softplus(NodeId a) { return unary_op(detail::OpTag::softplus, a, detail::softplus); }

  NodeId scale(NodeId a, double factor) {
    NodeId id = unary_op(detail::OpTag::scale, a, [factor](double x) { return factor * x; });
    nodes_.back().attr0 = factor;
    return id;
  }

  NodeId shift(NodeId a, double offset) {
    return unary_op(detail::OpTag::shift, a, [offset](double x) { return x + offset; });
  }

  /// Clips into [lo, hi]; the adjoint is zero wherever the input was clipped.
  NodeId clamp(NodeId a, double lo, double hi) {
    NodeId id = unary_op(detail::OpTag::clamp, a, [lo, hi](double x) { return std::clamp(x, lo, hi); });
    nodes_.back().attr0 = lo;
    nodes_.back().attr1 = hi;
    return id;
  }

  NodeId transpose(NodeId a) {
    const Tensor& av = value(a);
    if (!av.is_matrix()) throw DimensionError("transpose: expected a matrix, got " + shape_string(av.shape()));
    Tensor out(Shape{av.cols(), av.rows()});
    for (std::size_t i = 0; i < av.rows(); ++i)
      for (std::size_t j = 0; j < av.cols(); ++j) out.at(j, i) = av.at(i, j);
    return push(detail::OpTag::transpose, {a}, std::move(out));
  }

  /// Adds the length-n vector `bias` to every row of the m x n matrix `a`.
  NodeId add_bias(NodeId a, NodeId bias) {
    const Tensor& av = value(a);
    const Tensor& bv = value(bias);
    if (!av.is_matrix() || !bv.is_vector() || bv.size() != av.cols()) {
      throw DimensionError("add_bias: cannot add bias " + shape_string(bv.shape()) + " to rows of " +
                           shape_string(av.shape()));
    }
    Tensor out = av;
    for (std::size_t i = 0; i < av.rows(); ++i)
      for (std::size_t j = 0; j < av.cols(); ++j) out.at(i, j) += bv[j];
    return push(detail::OpTag::add_bias, {a, bias}, std::move(out));
  }

  /// Softmax of a vector, or of each row of a matrix. Uses max-subtraction.
  NodeId softmax(NodeId a) {
    const Tensor& av = value(a);
    if (av.size() == 0 || av.rank() == 0 || av.cols() == 0) {
      throw DimensionError("softmax: empty input " + shape_string(av.shape()));
    }
    Tensor out(av.shape());
    const std::size_t n = av.cols();
    for (std::size_t r = 0; r < av.rows(); ++r) {
      auto in = av.row(r);
      auto o = out.row(r);
      const double peak = *std::max_element(in.begin(), in.end());
      double total = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        o[j] = std::exp(in[j] - peak);
        total += o[j];
      }
      for (std::size_t j = 0; j < n; ++j) o[j] /= total;
    }
    return push(detail::OpTag::softmax, {a}, std::move(out));
  }

  /// Juxtaposes rank-1 parts in order.
  NodeId concat(std::span<const NodeId> parts) {
    if (parts.empty()) throw DimensionError("concat: empty list of parts");
    std::vector<double> out;
    for (NodeId p : parts) {
      const Tensor& pv = value(p);
      if (!pv.is_vector()) throw DimensionError("concat: part of shape " + shape_string(pv.shape()) + " is not a vector");
      out.insert(out.end(), pv.values().begin(), pv.values().end());
    }
    return push(detail::OpTag::concat, {parts.begin(), parts.end()}, Tensor::vector(std::move(out)));
  }
  NodeId concat(std::initializer_list<NodeId> parts) { return concat(std::span<const NodeId>(parts.begin(), parts.size())); }

  /// Joins matrices with equal row counts side by side.
  NodeId concat_cols(std::span<const NodeId> parts) {
    if (parts.empty()) throw DimensionError("concat_cols: empty list of parts");
    const std::size_t rows = value(parts[0]).rows();
    std::size_t cols = 0;
    for (NodeId p : parts) {
      const Tensor& pv = value(p);
      if (!pv.is_matrix() || pv.rows() != rows) {
        throw DimensionError("concat_cols: part " + shape_string(pv.shape()) + " does not have " +
                             std::to_string(rows) + " rows");
      }
      cols += pv.cols();
    }
    Tensor out(Shape{rows, cols});
    std::size_t offset = 0;
    for (NodeId p : parts) {
      const Tensor& pv = value(p);
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < pv.cols(); ++j) out.at(i, offset + j) = pv.at(i, j);
      offset += pv.cols();
    }
    return push(detail::OpTag::concat_cols, {parts.begin(), parts.end()}, std::move(out));
  }
  NodeId concat_cols(std::initializer_list<NodeId> parts) {
    return concat_cols(std::span<const NodeId>(parts.begin(), parts.size()));
  }

  /// Columns [begin, begin + count) of a matrix.
  NodeId slice_cols(NodeId a, std::size_t begin, std::size_t count) {
    const Tensor& av = value(a);
    if (!av.is_matrix() || begin + count > av.cols()) {
      throw DimensionError("slice_cols: columns [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                           ") out of range for " + shape_string(av.shape()));
    }
    Tensor out(Shape{av.rows(), count});
    for (std::size_t i = 0; i < av.rows(); ++i)
      for (std::size_t j = 0; j < count; ++j) out.at(i, j) = av.at(i, begin + j);
    NodeId id = push(detail::OpTag::slice_cols, {a}, std::move(out));
    nodes_.back().offset = begin;
    return id;
  }

  /// Sum of each row of a matrix, as a vector with one entry per row.
  NodeId row_sum(NodeId a) {
    const Tensor& av = value(a);
    if (!av.is_matrix()) throw DimensionError("row_sum: expected a matrix, got " + shape_string(av.shape()));
    Tensor out(Shape{av.rows()});
    for (std::size_t i = 0; i < av.rows(); ++i) {
      double acc = 0.0;
      for (double v : av.row(i)) acc += v;
      out[i] = acc;
    }
    return push(detail::OpTag::row_sum, {a}, std::move(out));
  }

  NodeId reduce_sum(NodeId a) {
    double acc = 0.0;
    for (double v : value(a).values()) acc += v;
    return push(detail::OpTag::reduce_sum, {a}, Tensor::scalar(acc));
  }

  /// Reverse sweep from a scalar loss. Parameters the loss does not depend on
  /// receive exact zeros.
  Gradients backward(NodeId loss) {
    const Tensor& lv = value(loss);
    if (lv.size() != 1) throw DimensionError("backward: loss must be scalar, got shape " + shape_string(lv.shape()));
    std::vector<Tensor> grads(nodes_.size());
    std::vector<char> touched(nodes_.size(), 0);
    grads[loss.index] = Tensor::ones(lv.shape());
    touched[loss.index] = 1;
    for (std::size_t i = loss.index + 1; i-- > 0;) {
      if (touched[i]) propagate(i, grads, touched);
    }
    for (NodeId p : parameters_) {
      if (!touched[p.index]) grads[p.index] = Tensor::zeros(nodes_[p.index].value.shape());
    }
    return Gradients(std::move(grads), parameters_);
  }

 private:
  struct Node {
    detail::OpTag tag = detail::OpTag::leaf;
    std::vector<NodeId> inputs;
    Tensor value;
    bool trainable = false;
    double attr0 = 0.0;
    double attr1 = 0.0;
    std::size_t offset = 0;
  };

  NodeId push(detail::OpTag tag, std::vector<NodeId> inputs, Tensor value) {
    for (NodeId in : inputs) {
      if (in.index >= nodes_.size()) throw DimensionError("graph: input node id out of range");
    }
    Node node;
    node.tag = tag;
    node.inputs = std::move(inputs);
    node.value = std::move(value);
    nodes_.push_back(std::move(node));
    return NodeId{nodes_.size() - 1};
  }

  template <typename F>
  NodeId unary_op(detail::OpTag tag, NodeId a, F f) {
    Tensor out = value(a);
    for (double& v : out.values()) v = f(v);
    return push(tag, {a}, std::move(out));
  }

  template <typename F>
  NodeId binary_op(detail::OpTag tag, NodeId a, NodeId b, F f) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (av.shape() != bv.shape()) {
      throw DimensionError("elementwise: shape mismatch " + shape_string(av.shape()) + " vs " +
                           shape_string(bv.shape()));
    }
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i], bv[i]);
    return push(tag, {a, b}, std::move(out));
  }

  void propagate(std::size_t index, std::vector<Tensor>& grads, std::vector<char>& touched) {
    using detail::OpTag;
    const Node& node = nodes_[index];
    const Tensor& g = grads[index];
    const Tensor& y = node.value;
    auto acc = [&](std::size_t k) -> Tensor& {
      const std::size_t id = node.inputs[k].index;
      if (!touched[id]) {
        grads[id] = Tensor::zeros(nodes_[id].value.shape());
        touched[id] = 1;
      }
      return grads[id];
    };
    auto in = [&](std::size_t k) -> const Tensor& { return nodes_[node.inputs[k].index].value; };

    switch (node.tag) {
      case OpTag::leaf:
        return;
      case OpTag::matmul: {
        detail::gemm_nt(g, in(1), acc(0));
        detail::gemm_tn(in(0), g, acc(1));
        return;
      }
      case OpTag::add: {
        Tensor& ga = acc(0);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        Tensor& gb = acc(1);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        return;
      }
      case OpTag::sub: {
        Tensor& ga = acc(0);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        Tensor& gb = acc(1);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        return;
      }
      case OpTag::mul: {
        const Tensor& a = in(0);
        const Tensor& b = in(1);
        Tensor& ga = acc(0);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
        Tensor& gb = acc(1);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
        return;
      }
      case OpTag::sigmoid: {
        Tensor& ga = acc(0);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
        return;
      }
      case OpTag::tanh: {
        Tensor& ga = acc(0);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
        return;
      }
      case OpTag::relu: {
        const Tensor& a = in(0);
        Tensor& ga = acc(0);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += a[i] > 0 ? g[i] : 0.0;
        return;
      }
      case OpTag::exp: {
        Tensor& ga = acc(0);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
        return;
      }
      case OpTag::log: {
        const Tensor& a = in(0);
        Tensor& ga = acc(0);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / a[i];
        return;
      }
      case OpTag::softplus: {
        const Tensor& a = in(0);
        Tensor& ga = acc(0);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * detail::sigmoid(a[i]);
        return;
      }
      case OpTag::scale: {
        Tensor& ga = acc(0);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += node.attr0 * g[i];
        return;
      }
      case OpTag::shift: {
        Tensor& ga = acc(0);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        return;
      }
      case OpTag::clamp: {
        const Tensor& a = in(0);
        Tensor& ga = acc(0);
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (a[i] >= node.attr0 && a[i] <= node.attr1) ga[i] += g[i];
        }
        return;
      }
      case OpTag::transpose: {
        Tensor& ga = acc(0);
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < g.cols(); ++j) ga.at(j, i) += g.at(i, j);
        return;
      }
      case OpTag::add_bias: {
        Tensor& ga = acc(0);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        Tensor& gb = acc(1);
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < g.cols(); ++j) gb[j] += g.at(i, j);
        return;
      }
      case OpTag::softmax: {
        // dL/da = p * (g - <g, p>) per row
        Tensor& ga = acc(0);
        for (std::size_t r = 0; r < y.rows(); ++r) {
          auto p = y.row(r);
          auto gr = g.row(r);
          double dot = 0.0;
          for (std::size_t j = 0; j < p.size(); ++j) dot += gr[j] * p[j];
          auto out = ga.row(r);
          for (std::size_t j = 0; j < p.size(); ++j) out[j] += p[j] * (gr[j] - dot);
        }
        return;
      }
      case OpTag::concat: {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < node.inputs.size(); ++k) {
          Tensor& ga = acc(k);
          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[offset + i];
          offset += ga.size();
        }
        return;
      }
      case OpTag::concat_cols: {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < node.inputs.size(); ++k) {
          Tensor& ga = acc(k);
          for (std::size_t i = 0; i < ga.rows(); ++i)
            for (std::size_t j = 0; j < ga.cols(); ++j) ga.at(i, j) += g.at(i, offset + j);
          offset += ga.cols();
        }
        return;
      }
      case OpTag::slice_cols: {
        Tensor& ga = acc(0);
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < g.cols(); ++j) ga.at(i, node.offset + j) += g.at(i, j);
        return;
      }
      case OpTag::row_sum: {
        Tensor& ga = acc(0);
        for (std::size_t i = 0; i < ga.rows(); ++i)
          for (double& v : ga.row(i)) v += g[i];
        return;
      }
      case OpTag::reduce_sum: {
        Tensor& ga = acc(0);
        const double gv = g[0];
        for (double& v : ga.values()) v += gv;
        return;
      }
    }
  }

  std::vector<Node> nodes_;
  std::vector<NodeId> parameters_;
};

}  // namespace primed::ad
