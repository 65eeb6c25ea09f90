#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "revamp/common.hpp"

namespace revamp::nc {

// Storage scalar. Single switch point for a future float32 build.
using Real = double;

// Dense row-major tensor. Rank 1..3 is what the model uses; ops validate
// the ranks they support.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<Real> data;
  bool requires_grad = false;

  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> s, Real fill = 0.0) : shape(std::move(s)) {
    data.assign(count(shape), fill);
  }

  static std::size_t count(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return s.empty() ? 0 : n;
  }

  static Tensor scalar(Real v) {
    Tensor t({1});
    t.data[0] = v;
    return t;
  }

  static Tensor vec(std::vector<Real> v) {
    Tensor t;
    t.shape = {v.size()};
    t.data = std::move(v);
    return t;
  }

  static Tensor matrix(std::size_t r, std::size_t c, Real fill = 0.0) {
    return Tensor({r, c}, fill);
  }

  static Tensor from(std::vector<std::size_t> s, std::vector<Real> d) {
    if (count(s) != d.size()) throw DimensionError("Tensor::from: shape/data length mismatch");
    Tensor t;
    t.shape = std::move(s);
    t.data = std::move(d);
    return t;
  }

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }

  std::size_t rows() const {
    if (rank() != 2) throw DimensionError("rows(): tensor is not rank 2");
    return shape[0];
  }
  std::size_t cols() const {
    if (rank() != 2) throw DimensionError("cols(): tensor is not rank 2");
    return shape[1];
  }

  Real& at(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
  Real at(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }
  Real& at3(std::size_t i, std::size_t j, std::size_t k) {
    return data[(i * shape[1] + j) * shape[2] + k];
  }
  Real at3(std::size_t i, std::size_t j, std::size_t k) const {
    return data[(i * shape[1] + j) * shape[2] + k];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (Real v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  std::string shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape[i]);
    }
    return s + "]";
  }
};

// Named trainable tensor. `l2` marks membership in the Frobenius penalty
// (embedding and projection matrices; biases and layer-norm params stay out).
struct Parameter {
  std::string name;
  Tensor value;
  bool l2 = false;
};

}  // namespace revamp::nc
