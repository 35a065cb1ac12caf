#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "primed/error.hpp"

namespace primed {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != 0) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

/// Dense row-major array of doubles. Rank 0 is a scalar, rank 1 a vector,
/// rank 2 a matrix; higher ranks are not used by the library.
class Tensor {
 public:
  Tensor() : shape_{0} {}

  explicit Tensor(Shape shape) : shape_(std::move(shape)), values_(shape_size(shape_), 0.0) {}

  Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), values_(std::move(values)) {
    if (values_.size() != shape_size(shape_)) {
      throw DimensionError("tensor of shape " + shape_string(shape_) + " needs " +
                           std::to_string(shape_size(shape_)) + " values, got " +
                           std::to_string(values_.size()));
    }
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, {v}); }
  static Tensor vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor(Shape{n}, std::move(values));
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor(Shape{rows, cols}, std::move(values));
  }
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    std::vector<double> values;
    std::size_t cols = rows.size() == 0 ? 0 : rows.begin()->size();
    for (const auto& row : rows) {
      if (row.size() != cols) throw DimensionError("ragged matrix literal");
      values.insert(values.end(), row.begin(), row.end());
    }
    return Tensor(Shape{rows.size(), cols}, std::move(values));
  }
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor filled(Shape shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.values_.begin(), t.values_.end(), v);
    return t;
  }
  static Tensor ones(Shape shape) { return filled(std::move(shape), 1.0); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  bool is_matrix() const { return shape_.size() == 2; }
  bool is_vector() const { return shape_.size() == 1; }

  // Rows/cols view a vector as a single row and a scalar as 1x1.
  std::size_t rows() const { return shape_.size() == 2 ? shape_[0] : 1; }
  std::size_t cols() const {
    if (shape_.size() == 2) return shape_[1];
    if (shape_.size() == 1) return shape_[0];
    return 1;
  }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }
  double item() const {
    if (values_.size() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape_));
    return values_[0];
  }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::span<const double> row(std::size_t r) const { return std::span<const double>(values_).subspan(r * cols(), cols()); }
  std::span<double> row(std::size_t r) { return std::span<double>(values_).subspan(r * cols(), cols()); }

  Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), values_); }

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  std::vector<double> values_;
};

/// Rows of `t` selected by `indices`, in order. Vectors are treated as one value per row.
inline Tensor take_rows(const Tensor& t, std::span<const std::size_t> indices) {
  if (t.is_vector()) {
    std::vector<double> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(t[i]);
    return Tensor::vector(std::move(out));
  }
  const std::size_t cols = t.cols();
  std::vector<double> out;
  out.reserve(indices.size() * cols);
  for (auto i : indices) {
    auto r = t.row(i);
    out.insert(out.end(), r.begin(), r.end());
  }
  return Tensor::matrix(indices.size(), cols, std::move(out));
}

}  // namespace primed
