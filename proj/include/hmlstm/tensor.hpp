#ifndef HMLSTM_TENSOR_HPP
#define HMLSTM_TENSOR_HPP

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace hmlstm {

// Flip to float for a 32-bit build; checkpoint files stay 64-bit on disk and
// all test tolerances assume the 64-bit default.
using real_t = double;

// Dense row-major array. The only numeric carrier in the library: states,
// parameters, gradients and scalars (shape {1}) all live here.
struct Tensor {
  std::vector<int> shape;
  std::vector<real_t> data;

  Tensor() = default;
  Tensor(std::vector<int> s, std::vector<real_t> d) : shape(std::move(s)), data(std::move(d)) {
    if (numel_of(shape) != static_cast<long>(data.size()))
      throw std::invalid_argument("Tensor: shape/data size mismatch");
  }

  static long numel_of(const std::vector<int>& s) {
    long n = 1;
    for (int e : s) {
      if (e <= 0) throw std::invalid_argument("Tensor: non-positive extent");
      n *= e;
    }
    return n;
  }

  static Tensor zeros(std::vector<int> s) {
    long n = numel_of(s);
    return Tensor(std::move(s), std::vector<real_t>(static_cast<std::size_t>(n), real_t(0)));
  }
  static Tensor full(std::vector<int> s, real_t v) {
    long n = numel_of(s);
    return Tensor(std::move(s), std::vector<real_t>(static_cast<std::size_t>(n), v));
  }
  static Tensor scalar(real_t v) { return Tensor({1}, {v}); }
  static Tensor vec(std::initializer_list<real_t> v) {
    return Tensor({static_cast<int>(v.size())}, std::vector<real_t>(v));
  }
  static Tensor matrix(int r, int c, std::initializer_list<real_t> v) {
    return Tensor({r, c}, std::vector<real_t>(v));
  }

  long numel() const { return static_cast<long>(data.size()); }
  bool is_scalar() const { return data.size() == 1 && shape.size() == 1; }

  int rows() const {
    if (shape.size() != 2) throw std::invalid_argument("Tensor: rows() on non-matrix");
    return shape[0];
  }
  int cols() const {
    if (shape.size() != 2) throw std::invalid_argument("Tensor: cols() on non-matrix");
    return shape[1];
  }

  real_t& operator[](std::size_t i) { return data[i]; }
  real_t operator[](std::size_t i) const { return data[i]; }

  bool all_finite() const {
    for (real_t v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

inline double l2_norm(const Tensor& t) {
  double s = 0;
  for (real_t v : t.data) s += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(s);
}

inline std::string shape_str(const Tensor& t) {
  std::string s = "[";
  for (std::size_t i = 0; i < t.shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(t.shape[i]);
  }
  return s + "]";
}

}  // namespace hmlstm

#endif
