#pragma once

// Forward-mode dual numbers for analytic test maps (hand-written decoders,
// coordinate charts). Networks use the dedicated routines in mlp.hpp.

#include <cmath>
#include <span>
#include <vector>

#include "fivelab/linalg.hpp"

namespace fivelab {

struct Dual {
  double v = 0.0;  // value
  double d = 0.0;  // tangent

  constexpr Dual() = default;
  constexpr Dual(double value, double tangent = 0.0) : v(value), d(tangent) {}

  friend constexpr Dual operator+(Dual a, Dual b) { return {a.v + b.v, a.d + b.d}; }
  friend constexpr Dual operator-(Dual a, Dual b) { return {a.v - b.v, a.d - b.d}; }
  friend constexpr Dual operator-(Dual a) { return {-a.v, -a.d}; }
  friend constexpr Dual operator*(Dual a, Dual b) { return {a.v * b.v, a.d * b.v + a.v * b.d}; }
  friend constexpr Dual operator/(Dual a, Dual b) {
    return {a.v / b.v, (a.d * b.v - a.v * b.d) / (b.v * b.v)};
  }
  Dual& operator+=(Dual o) { return *this = *this + o; }
  Dual& operator-=(Dual o) { return *this = *this - o; }
  Dual& operator*=(Dual o) { return *this = *this * o; }
  Dual& operator/=(Dual o) { return *this = *this / o; }
};

inline Dual sin(Dual a) { return {std::sin(a.v), a.d * std::cos(a.v)}; }
inline Dual cos(Dual a) { return {std::cos(a.v), -a.d * std::sin(a.v)}; }
inline Dual exp(Dual a) {
  const double e = std::exp(a.v);
  return {e, a.d * e};
}
inline Dual log(Dual a) { return {std::log(a.v), a.d / a.v}; }
inline Dual sqrt(Dual a) {
  const double s = std::sqrt(a.v);
  return {s, a.d / (2.0 * s)};
}
inline Dual tanh(Dual a) {
  const double t = std::tanh(a.v);
  return {t, a.d * (1.0 - t * t)};
}
inline Dual atan2(Dual y, Dual x) {
  const double r2 = x.v * x.v + y.v * y.v;
  return {std::atan2(y.v, x.v), (x.v * y.d - y.v * x.d) / r2};
}

// A smooth map R^d -> R^n written once as a generic callable
// `f(std::span<const T>) -> std::vector<T>` and evaluated with T = double or Dual.
template <class F>
struct AnalyticMap {
  F f;
  Eigen::Index in_dim;
  Eigen::Index out_dim;

  Vector value(const Vector& z) const {
    require_shape(z.size() == in_dim, "analytic map input");
    std::vector<double> in(z.data(), z.data() + z.size());
    auto out = f(std::span<const double>(in));
    return Eigen::Map<const Vector>(out.data(), static_cast<Eigen::Index>(out.size()));
  }

  Matrix jacobian(const Vector& z) const {
    require_shape(z.size() == in_dim, "analytic map input");
    Matrix j(out_dim, in_dim);
    std::vector<Dual> in(static_cast<std::size_t>(in_dim));
    for (Eigen::Index c = 0; c < in_dim; ++c) {
      for (Eigen::Index k = 0; k < in_dim; ++k) in[k] = Dual(z(k), k == c ? 1.0 : 0.0);
      auto out = f(std::span<const Dual>(in));
      require_shape(static_cast<Eigen::Index>(out.size()) == out_dim, "analytic map output");
      for (Eigen::Index r = 0; r < out_dim; ++r) j(r, c) = out[r].d;
    }
    return j;
  }
};

template <class F>
AnalyticMap<F> make_analytic_map(F f, Eigen::Index in_dim, Eigen::Index out_dim) {
  return {std::move(f), in_dim, out_dim};
}

}  // namespace fivelab
