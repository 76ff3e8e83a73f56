#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dynaflow/common.hpp"

namespace dynaflow {

// Dense row-major tensor of 64-bit reals, rank 0..2. Everything in the
// pipeline is expressible as vectors and matrices; higher ranks are flattened
// into a trailing feature axis by the callers.
class Tensor {
 public:
  Tensor() = default;

  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_.size() > 2) throw ValidationError("Tensor: rank > 2 unsupported");
    if (numel_from_shape(shape_) != data_.size())
      throw ValidationError("Tensor: shape/data size mismatch");
  }

  static Tensor scalar(double v) { return Tensor({std::size_t{1}}, {v}); }

  static Tensor zeros(std::vector<std::size_t> shape) {
    std::size_t n = numel_from_shape(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0));
  }

  static Tensor full(std::vector<std::size_t> shape, double v) {
    std::size_t n = numel_from_shape(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v));
  }

  static Tensor vec(std::vector<double> v) {
    std::size_t n = v.size();
    return Tensor({n}, std::move(v));
  }

  // 1 x n row matrix
  static Tensor row(std::vector<double> v) {
    std::size_t n = v.size();
    return Tensor({std::size_t{1}, n}, std::move(v));
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }

  // 2-D view: scalars and vectors are treated as single rows.
  std::size_t rows() const { return shape_.size() == 2 ? shape_[0] : 1; }
  std::size_t cols() const {
    if (shape_.empty()) return 1;
    return shape_.size() == 2 ? shape_[1] : shape_[0];
  }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t i, std::size_t j) { return data_[i * cols() + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * cols() + j]; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  static std::size_t numel_from_shape(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
      if (d == 0) throw ValidationError("Tensor: zero extent");
      n *= d;
    }
    return n;
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

inline std::string shape_str(const Tensor& t) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < t.shape().size(); ++i)
    os << (i ? "," : "") << t.shape()[i];
  os << "]";
  return os.str();
}

inline void require_finite(const Tensor& t, const char* what) {
  if (!t.all_finite())
    throw NumericError(std::string("non-finite values in ") + what);
}

inline bool equal_bits(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && a.data() == b.data();
}

// ---------------------------------------------------------------------------
// Elementwise kernels with limited broadcasting: shapes must match per axis or
// have extent 1 (numpy semantics restricted to two axes).

namespace detail {

struct Bcast {
  std::size_t ra, ca, rb, cb, R, C;
};

inline Bcast resolve_bcast(const Tensor& a, const Tensor& b, const char* op) {
  Bcast s{a.rows(), a.cols(), b.rows(), b.cols(), 0, 0};
  if (s.ra != s.rb && s.ra != 1 && s.rb != 1)
    throw ValidationError(std::string(op) + ": incompatible row extents " +
                          shape_str(a) + " vs " + shape_str(b));
  if (s.ca != s.cb && s.ca != 1 && s.cb != 1)
    throw ValidationError(std::string(op) + ": incompatible col extents " +
                          shape_str(a) + " vs " + shape_str(b));
  s.R = std::max(s.ra, s.rb);
  s.C = std::max(s.ca, s.cb);
  return s;
}

inline std::vector<std::size_t> bcast_shape(const Tensor& a, const Tensor& b,
                                            const Bcast& s) {
  if (a.shape() == b.shape()) return a.shape();
  if (s.R == 1 && a.rank() <= 1 && b.rank() <= 1)
    return {s.C};
  return {s.R, s.C};
}

template <class F>
Tensor ew_binary(const Tensor& a, const Tensor& b, const char* op, F&& f) {
  Bcast s = resolve_bcast(a, b, op);
  Tensor out = Tensor::zeros(bcast_shape(a, b, s));
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < s.R; ++i) {
    const std::size_t ia = (s.ra == 1 ? 0 : i) * s.ca;
    const std::size_t ib = (s.rb == 1 ? 0 : i) * s.cb;
    for (std::size_t j = 0; j < s.C; ++j) {
      const double va = pa[ia + (s.ca == 1 ? 0 : j)];
      const double vb = pb[ib + (s.cb == 1 ? 0 : j)];
      po[i * s.C + j] = f(va, vb);
    }
  }
  return out;
}

template <class F>
Tensor ew_unary(const Tensor& a, F&& f) {
  Tensor out = a;
  for (double& v : out.data()) v = f(v);
  return out;
}

// Reduce `g` (shaped like the broadcast output) back onto the shape of the
// operand described by (r, c). Used by the reverse pass.
inline Tensor reduce_to(const Tensor& g, std::size_t r, std::size_t c,
                        const std::vector<std::size_t>& shape) {
  if (g.rows() == r && g.cols() == c) {
    Tensor out = g;
    return Tensor(shape, std::move(out.data()));
  }
  Tensor out = Tensor::zeros(shape);
  for (std::size_t i = 0; i < g.rows(); ++i)
    for (std::size_t j = 0; j < g.cols(); ++j)
      out.data()[(r == 1 ? 0 : i) * c + (c == 1 ? 0 : j)] += g.at(i, j);
  return out;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::ew_binary(a, b, "add", [](double x, double y) { return x + y; });
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::ew_binary(a, b, "sub", [](double x, double y) { return x - y; });
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::ew_binary(a, b, "mul", [](double x, double y) { return x * y; });
}
inline Tensor div(const Tensor& a, const Tensor& b) {
  return detail::ew_binary(a, b, "div", [](double x, double y) { return x / y; });
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows())
    throw ValidationError("matmul: inner extents differ " + shape_str(a) +
                          " vs " + shape_str(b));
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out = Tensor::zeros({m, n});
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t l = 0; l < k; ++l) {
      const double av = pa[i * k + l];
      const double* prow = pb + l * n;
      double* porow = po + i * n;
      for (std::size_t j = 0; j < n; ++j) porow[j] += av * prow[j];
    }
  return out;
}

namespace detail {

// out = a^T * g, a: [m,k], g: [m,n] -> [k,n]
inline Tensor matmul_tn(const Tensor& a, const Tensor& g) {
  const std::size_t m = a.rows(), k = a.cols(), n = g.cols();
  Tensor out = Tensor::zeros({k, n});
  for (std::size_t l = 0; l < m; ++l)
    for (std::size_t i = 0; i < k; ++i) {
      const double av = a.data()[l * k + i];
      const double* prow = g.data().data() + l * n;
      double* porow = out.data().data() + i * n;
      for (std::size_t j = 0; j < n; ++j) porow[j] += av * prow[j];
    }
  return out;
}

// out = g * b^T, g: [m,n], b: [k,n] -> [m,k]
inline Tensor matmul_nt(const Tensor& g, const Tensor& b) {
  const std::size_t m = g.rows(), n = g.cols(), k = b.rows();
  Tensor out = Tensor::zeros({m, k});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      const double* pg = g.data().data() + i * n;
      const double* pb = b.data().data() + j * n;
      double acc = 0.0;
      for (std::size_t l = 0; l < n; ++l) acc += pg[l] * pb[l];
      out.data()[i * k + j] = acc;
    }
  return out;
}

}  // namespace detail

inline Tensor tanh(const Tensor& a) {
  return detail::ew_unary(a, [](double x) { return std::tanh(x); });
}
inline Tensor sin(const Tensor& a) {
  return detail::ew_unary(a, [](double x) { return std::sin(x); });
}
inline Tensor cos(const Tensor& a) {
  return detail::ew_unary(a, [](double x) { return std::cos(x); });
}
inline Tensor exp(const Tensor& a) {
  return detail::ew_unary(a, [](double x) { return std::exp(x); });
}

// Elementwise power with a fixed real exponent.
inline Tensor pow(const Tensor& a, double p) {
  if (p == 2.0) return detail::ew_unary(a, [](double x) { return x * x; });
  return detail::ew_unary(a, [p](double x) { return std::pow(x, p); });
}

// Clamp with per-element bounds; lo/hi broadcast like binary operands.
inline Tensor clamp(const Tensor& a, const Tensor& lo, const Tensor& hi) {
  Tensor t = detail::ew_binary(a, lo, "clamp", [](double x, double l) {
    return x < l ? l : x;
  });
  return detail::ew_binary(t, hi, "clamp", [](double x, double h) {
    return x > h ? h : x;
  });
}
inline Tensor clamp(const Tensor& a, double lo, double hi) {
  return clamp(a, Tensor::scalar(lo), Tensor::scalar(hi));
}

inline Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  return Tensor::scalar(acc);
}
inline Tensor mean(const Tensor& a) {
  return Tensor::scalar(sum(a)[0] / static_cast<double>(a.numel()));
}

inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ValidationError("concat: no operands");
  if (axis != 0 && axis != 1) throw ValidationError("concat: axis must be 0 or 1");
  const std::size_t R0 = parts[0].rows(), C0 = parts[0].cols();
  std::size_t R = R0, C = C0;
  for (std::size_t p = 1; p < parts.size(); ++p) {
    if (axis == 0) {
      if (parts[p].cols() != C0) throw ValidationError("concat: col mismatch");
      R += parts[p].rows();
    } else {
      if (parts[p].rows() != R0) throw ValidationError("concat: row mismatch");
      C += parts[p].cols();
    }
  }
  Tensor out = Tensor::zeros({R, C});
  if (axis == 0) {
    std::size_t off = 0;
    for (const Tensor& t : parts) {
      std::copy(t.data().begin(), t.data().end(), out.data().begin() + off);
      off += t.numel();
    }
  } else {
    std::size_t coff = 0;
    for (const Tensor& t : parts) {
      for (std::size_t i = 0; i < R; ++i)
        std::copy(t.data().begin() + i * t.cols(),
                  t.data().begin() + (i + 1) * t.cols(),
                  out.data().begin() + i * C + coff);
      coff += t.cols();
    }
  }
  return out;
}
inline Tensor concat(const Tensor& a, const Tensor& b, int axis) {
  return concat(std::vector<Tensor>{a, b}, axis);
}

inline Tensor slice(const Tensor& a, int axis, std::size_t start, std::size_t len) {
  const std::size_t R = a.rows(), C = a.cols();
  if (axis != 0 && axis != 1) throw ValidationError("slice: axis must be 0 or 1");
  if (axis == 0) {
    if (start + len > R) throw ValidationError("slice: row range out of bounds");
    Tensor out = Tensor::zeros({len, C});
    std::copy(a.data().begin() + start * C, a.data().begin() + (start + len) * C,
              out.data().begin());
    return out;
  }
  if (start + len > C) throw ValidationError("slice: col range out of bounds");
  std::vector<std::size_t> shape =
      a.rank() <= 1 ? std::vector<std::size_t>{len}
                    : std::vector<std::size_t>{R, len};
  Tensor out = Tensor::zeros(shape);
  for (std::size_t i = 0; i < R; ++i)
    std::copy(a.data().begin() + i * C + start,
              a.data().begin() + i * C + start + len,
              out.data().begin() + i * len);
  return out;
}

inline Tensor reshape(Tensor t, std::vector<std::size_t> shape) {
  if (Tensor::numel_from_shape(shape) != t.numel())
    throw ValidationError("reshape: element count mismatch");
  return Tensor(std::move(shape), std::move(t.data()));
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double s) { return add(a, Tensor::scalar(s)); }
inline Tensor operator-(const Tensor& a, double s) { return sub(a, Tensor::scalar(s)); }
inline Tensor operator*(const Tensor& a, double s) { return mul(a, Tensor::scalar(s)); }
inline Tensor operator/(const Tensor& a, double s) { return div(a, Tensor::scalar(s)); }
inline Tensor operator+(double s, const Tensor& a) { return add(Tensor::scalar(s), a); }
inline Tensor operator-(double s, const Tensor& a) { return sub(Tensor::scalar(s), a); }
inline Tensor operator*(double s, const Tensor& a) { return mul(Tensor::scalar(s), a); }

}  // namespace dynaflow
