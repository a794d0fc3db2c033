#pragma once

#include <cmath>

namespace sdat {

// First-order dual number: value plus tangent. Running the tape's forward and
// backward passes with Dual scalars, with the parameter tangents seeded to a
// direction v, makes the tangent of the gradient equal to H*v exactly
// (forward-over-reverse differentiation).
struct Dual {
  double v = 0.0;
  double d = 0.0;

  Dual() = default;
  Dual(double value) : v(value) {}  // NOLINT: constants lift with zero tangent
  Dual(double value, double dot) : v(value), d(dot) {}

  Dual& operator+=(const Dual& o) {
    v += o.v;
    d += o.d;
    return *this;
  }
  Dual& operator-=(const Dual& o) {
    v -= o.v;
    d -= o.d;
    return *this;
  }
  Dual& operator*=(const Dual& o) {
    d = d * o.v + v * o.d;
    v *= o.v;
    return *this;
  }
};

inline Dual operator+(Dual a, const Dual& b) { return a += b; }
inline Dual operator-(Dual a, const Dual& b) { return a -= b; }
inline Dual operator-(const Dual& a) { return {-a.v, -a.d}; }
inline Dual operator*(Dual a, const Dual& b) { return a *= b; }
inline Dual operator/(const Dual& a, const Dual& b) {
  const double inv = 1.0 / b.v;
  const double q = a.v * inv;
  return {q, (a.d - q * b.d) * inv};
}

inline bool operator<(const Dual& a, const Dual& b) { return a.v < b.v; }
inline bool operator>(const Dual& a, const Dual& b) { return a.v > b.v; }
inline bool operator<=(const Dual& a, const Dual& b) { return a.v <= b.v; }
inline bool operator>=(const Dual& a, const Dual& b) { return a.v >= b.v; }

inline Dual exp(const Dual& a) {
  const double e = std::exp(a.v);
  return {e, e * a.d};
}
inline Dual log(const Dual& a) { return {std::log(a.v), a.d / a.v}; }
inline Dual sqrt(const Dual& a) {
  const double r = std::sqrt(a.v);
  return {r, a.d / (2.0 * r)};
}

// Uniform access to the scalar kinds the tape is instantiated with.
template <class S>
struct ScalarTraits;

template <>
struct ScalarTraits<double> {
  static double make(double value, double) { return value; }
  static double value(double s) { return s; }
  static double tangent(double) { return 0.0; }
  static bool finite(double s) { return std::isfinite(s); }
};

template <>
struct ScalarTraits<Dual> {
  static Dual make(double value, double dot) { return {value, dot}; }
  static double value(const Dual& s) { return s.v; }
  static double tangent(const Dual& s) { return s.d; }
  static bool finite(const Dual& s) { return std::isfinite(s.v) && std::isfinite(s.d); }
};

}  // namespace sdat
