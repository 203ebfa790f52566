#pragma once

#include <cmath>
#include <numbers>

#include "seqoed/core.hpp"

namespace seqoed::test {

inline Vector v1(double a) { return Vector::Constant(1, a); }

inline Vector v2(double a, double b) {
  Vector v(2);
  v << a, b;
  return v;
}

/// Closed-form D_KL(N(m1, s1^2) || N(m0, s0^2)).
inline double gaussian_kl(double m1, double var1, double m0, double var0) {
  return 0.5 * std::log(var0 / var1) + (var1 + (m1 - m0) * (m1 - m0)) / (2.0 * var0) - 0.5;
}

/// Model whose prediction ignores theta, so observations carry no information.
class ConstantModel final : public ForwardModel {
 public:
  explicit ConstantModel(double value) : value_(value) {}
  int obs_dim() const override { return 1; }
  Vector predict(const Vector&, const Vector&, const State&) const override { return Vector::Constant(1, value_); }

 private:
  double value_;
};

}  // namespace seqoed::test
