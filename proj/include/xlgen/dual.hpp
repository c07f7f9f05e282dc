#pragma once

#include <cmath>

namespace xlgen {

/// First-order dual number: value plus directional derivative (tangent).
/// Running a gradient computation with Dual scalars yields exact
/// Hessian-vector products (forward-over-reverse differentiation).
struct Dual {
  double a = 0.0;  // value
  double b = 0.0;  // tangent

  Dual() = default;
  Dual(double value) : a(value), b(0.0) {}  // NOLINT(google-explicit-constructor)
  Dual(double value, double tangent) : a(value), b(tangent) {}

  Dual& operator+=(const Dual& o) { a += o.a; b += o.b; return *this; }
  Dual& operator-=(const Dual& o) { a -= o.a; b -= o.b; return *this; }
  Dual& operator*=(const Dual& o) {
    b = b * o.a + a * o.b;
    a *= o.a;
    return *this;
  }
  Dual& operator/=(const Dual& o) {
    a /= o.a;
    b = (b - a * o.b) / o.a;
    return *this;
  }
};

inline Dual operator+(Dual x, const Dual& y) { return x += y; }
inline Dual operator-(Dual x, const Dual& y) { return x -= y; }
inline Dual operator*(Dual x, const Dual& y) { return x *= y; }
inline Dual operator/(Dual x, const Dual& y) { return x /= y; }
inline Dual operator-(const Dual& x) { return {-x.a, -x.b}; }

inline bool operator<(const Dual& x, const Dual& y) { return x.a < y.a; }
inline bool operator>(const Dual& x, const Dual& y) { return x.a > y.a; }

inline double value_of(double x) { return x; }
inline double value_of(const Dual& x) { return x.a; }

inline Dual exp(const Dual& x) {
  const double e = std::exp(x.a);
  return {e, e * x.b};
}
inline Dual log(const Dual& x) { return {std::log(x.a), x.b / x.a}; }
inline Dual sqrt(const Dual& x) {
  const double s = std::sqrt(x.a);
  return {s, 0.5 * x.b / s};
}
inline Dual tanh(const Dual& x) {
  const double t = std::tanh(x.a);
  return {t, (1.0 - t * t) * x.b};
}

}  // namespace xlgen
