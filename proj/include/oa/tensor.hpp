#pragma once

#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <vector>

namespace oa {

// Dense row-major N-dimensional array of doubles.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> v;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
    v.assign(numel(shape), 0.0);
  }
  Tensor(std::vector<std::size_t> s, std::vector<double> values)
      : shape(std::move(s)), v(std::move(values)) {
    if (numel(shape) != v.size())
      throw std::invalid_argument("Tensor: shape does not match value count");
  }

  static std::size_t numel(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
  }

  std::size_t size() const { return v.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  std::size_t rank() const { return shape.size(); }

  double& operator[](std::size_t i) { return v[i]; }
  double operator[](std::size_t i) const { return v[i]; }

  // Row-major indexing helpers for the ranks the layers use.
  double& at2(std::size_t i, std::size_t j) { return v[i * shape[1] + j]; }
  double at2(std::size_t i, std::size_t j) const { return v[i * shape[1] + j]; }
  double& at3(std::size_t i, std::size_t j, std::size_t k) {
    return v[(i * shape[1] + j) * shape[2] + k];
  }
  double at3(std::size_t i, std::size_t j, std::size_t k) const {
    return v[(i * shape[1] + j) * shape[2] + k];
  }
  double& at4(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
    return v[((i * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }
  double at4(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
    return v[((i * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }

  Tensor zeros_like() const { return Tensor(shape); }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
};

}  // namespace oa
