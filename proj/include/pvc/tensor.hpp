#pragma once

#include <cmath>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <vector>

#include "pvc/common.hpp"

namespace pvc {

// Dense row-major double tensor. Rank 0 (scalar) through 3 (batch,
// channels, time) is what the rest of the code uses.
struct Tensor {
  std::vector<i64> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<i64> s) : shape(std::move(s)) {
    data.assign(static_cast<std::size_t>(count(shape)), 0.0);
  }

  static i64 count(const std::vector<i64>& s) {
    i64 n = 1;
    for (i64 d : s) {
      require_arg(d >= 0, "tensor dims must be non-negative");
      n *= d;
    }
    return n;
  }

  static Tensor zeros(std::vector<i64> s) { return Tensor(std::move(s)); }

  static Tensor full(std::vector<i64> s, double v) {
    Tensor t(std::move(s));
    for (auto& x : t.data) x = v;
    return t;
  }

  static Tensor scalar(double v) {
    Tensor t;
    t.data.assign(1, v);
    return t;
  }

  static Tensor from(std::vector<i64> s, std::vector<double> values) {
    Tensor t;
    t.shape = std::move(s);
    require_arg(static_cast<i64>(values.size()) == count(t.shape),
                "tensor value count does not match shape");
    t.data = std::move(values);
    return t;
  }

  i64 numel() const { return static_cast<i64>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  i64 dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }

  double* ptr() { return data.data(); }
  const double* ptr() const { return data.data(); }

  // 2D access (rows, cols)
  double& at(i64 r, i64 c) { return data[static_cast<std::size_t>(r * shape[1] + c)]; }
  double at(i64 r, i64 c) const { return data[static_cast<std::size_t>(r * shape[1] + c)]; }

  // 3D access (b, c, t)
  double& at(i64 b, i64 c, i64 t) {
    return data[static_cast<std::size_t>((b * shape[1] + c) * shape[2] + t)];
  }
  double at(i64 b, i64 c, i64 t) const {
    return data[static_cast<std::size_t>((b * shape[1] + c) * shape[2] + t)];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ")";
    return os.str();
  }
};

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_arg(a.same_shape(b), "max_abs_diff: shape mismatch");
  double m = 0.0;
  for (i64 i = 0; i < a.numel(); ++i) {
    const double d = std::fabs(a.data[static_cast<std::size_t>(i)] -
                               b.data[static_cast<std::size_t>(i)]);
    if (d > m) m = d;
  }
  return m;
}

}  // namespace pvc
