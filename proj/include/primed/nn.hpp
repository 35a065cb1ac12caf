#pragma once

// Named parameter storage and the small layers shared by every model.

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "primed/autodiff.hpp"
#include "primed/random.hpp"

namespace primed {

/// Ordered, named list of trainable tensors.
class ParamSet {
 public:
  std::size_t add(std::string name, Tensor value) {
    for (const auto& n : names_) {
      if (n == name) throw DimensionError("duplicate parameter name '" + name + "'");
    }
    names_.push_back(std::move(name));
    values_.push_back(std::move(value));
    return values_.size() - 1;
  }

  std::size_t size() const { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  const Tensor& operator[](std::size_t i) const { return values_.at(i); }
  Tensor& operator[](std::size_t i) { return values_.at(i); }
  std::vector<Tensor>& values() { return values_; }
  const std::vector<Tensor>& values() const { return values_; }
  const std::vector<std::string>& names() const { return names_; }

  std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i) {
      if (names_[i] == name) return i;
    }
    throw DimensionError("no parameter named '" + name + "'");
  }
  const Tensor& at(const std::string& name) const { return values_[index_of(name)]; }
  Tensor& at(const std::string& name) { return values_[index_of(name)]; }

  std::size_t total_entries() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
  }

  friend bool operator==(const ParamSet&, const ParamSet&) = default;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
};

/// Parameters of a ParamSet as graph nodes, addressable by their ParamSet index.
struct BoundParams {
  std::vector<ad::NodeId> ids;
  ad::NodeId operator[](std::size_t i) const { return ids.at(i); }
};

inline BoundParams bind(ad::Graph& graph, const ParamSet& params) {
  BoundParams out;
  out.ids.reserve(params.size());
  for (const auto& v : params.values()) out.ids.push_back(graph.parameter(v));
  return out;
}

inline BoundParams bind_constant(ad::Graph& graph, const ParamSet& params) {
  BoundParams out;
  out.ids.reserve(params.size());
  for (const auto& v : params.values()) out.ids.push_back(graph.constant(v));
  return out;
}

inline std::vector<Tensor> gradients_for(const ad::Gradients& grads, const BoundParams& bound) {
  std::vector<Tensor> out;
  out.reserve(bound.ids.size());
  for (auto id : bound.ids) out.push_back(grads.of(id));
  return out;
}

/// Glorot-uniform weight matrix (fan_in x fan_out).
inline Tensor glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return uniform(Shape{fan_in, fan_out}, -limit, limit, rng);
}

/// Affine layer y = x W + b. Registers "<prefix>.w" and "<prefix>.b".
struct Dense {
  std::size_t weight = 0;
  std::size_t bias = 0;

  static Dense create(ParamSet& params, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng) {
    Dense d;
    d.weight = params.add(prefix + ".w", glorot(in, out, rng));
    d.bias = params.add(prefix + ".b", Tensor::zeros(Shape{out}));
    return d;
  }

  static Dense lookup(const ParamSet& params, const std::string& prefix) {
    return Dense{params.index_of(prefix + ".w"), params.index_of(prefix + ".b")};
  }

  ad::NodeId forward(ad::Graph& g, const BoundParams& p, ad::NodeId x) const {
    return g.add_bias(g.matmul(x, p[weight]), p[bias]);
  }
};

/// Two-layer perceptron: tanh hidden layer, linear output.
struct Mlp {
  Dense hidden;
  Dense output;

  static Mlp create(ParamSet& params, const std::string& prefix, std::size_t in, std::size_t width, std::size_t out,
                    Rng& rng) {
    Mlp m;
    m.hidden = Dense::create(params, prefix + ".hidden", in, width, rng);
    m.output = Dense::create(params, prefix + ".out", width, out, rng);
    return m;
  }

  static Mlp lookup(const ParamSet& params, const std::string& prefix) {
    return Mlp{Dense::lookup(params, prefix + ".hidden"), Dense::lookup(params, prefix + ".out")};
  }

  ad::NodeId forward(ad::Graph& g, const BoundParams& p, ad::NodeId x) const {
    return output.forward(g, p, g.tanh(hidden.forward(g, p, x)));
  }
};

}  // namespace primed
