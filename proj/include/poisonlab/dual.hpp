#pragma once

// Forward-mode dual numbers. Running the reverse-mode gradient kernel on
// Dual gives the directional derivative of the gradient, i.e. H * v.

#include <cmath>

namespace poisonlab {

struct Dual {
  double value = 0.0;
  double tangent = 0.0;

  constexpr Dual() = default;
  constexpr Dual(double v) : value(v) {}  // NOLINT: implicit from constants
  constexpr Dual(double v, double t) : value(v), tangent(t) {}

  Dual& operator+=(const Dual& o) {
    value += o.value;
    tangent += o.tangent;
    return *this;
  }
  Dual& operator-=(const Dual& o) {
    value -= o.value;
    tangent -= o.tangent;
    return *this;
  }
  Dual& operator*=(const Dual& o) {
    tangent = tangent * o.value + value * o.tangent;
    value *= o.value;
    return *this;
  }
};

inline Dual operator+(Dual a, const Dual& b) { return a += b; }
inline Dual operator-(Dual a, const Dual& b) { return a -= b; }
inline Dual operator*(Dual a, const Dual& b) { return a *= b; }
inline Dual operator-(const Dual& a) { return {-a.value, -a.tangent}; }
inline Dual operator/(const Dual& a, const Dual& b) {
  return {a.value / b.value, (a.tangent * b.value - a.value * b.tangent) / (b.value * b.value)};
}
inline bool operator<(const Dual& a, const Dual& b) { return a.value < b.value; }

inline Dual tanh(const Dual& x) {
  const double t = std::tanh(x.value);
  return {t, (1.0 - t * t) * x.tangent};
}
inline Dual exp(const Dual& x) {
  const double e = std::exp(x.value);
  return {e, e * x.tangent};
}
inline Dual log(const Dual& x) { return {std::log(x.value), x.tangent / x.value}; }

inline double value_of(double x) { return x; }
inline double value_of(const Dual& x) { return x.value; }

}  // namespace poisonlab
