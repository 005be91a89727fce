#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace fedsched {

enum class LambertBranch { kPrincipal, kLower };

namespace detail {

template <typename Scalar>
Scalar lambert_initial_guess(Scalar x, LambertBranch branch) {
  using std::log;
  using std::sqrt;
  const Scalar e = std::numbers::e_v<Scalar>;
  const Scalar p2 = Scalar(2) * (e * x + Scalar(1));
  const Scalar p = sqrt(p2 > Scalar(0) ? p2 : Scalar(0));
  if (branch == LambertBranch::kLower) {
    if (x < Scalar(-0.25)) return Scalar(-1) - p - p * p / Scalar(3) - Scalar(11) / Scalar(72) * p * p * p;
    const Scalar l1 = log(-x);
    const Scalar l2 = log(-l1);
    return l1 - l2 + l2 / l1;
  }
  if (x < Scalar(-0.32)) return Scalar(-1) + p - p * p / Scalar(3) + Scalar(11) / Scalar(72) * p * p * p;
  if (x < Scalar(1)) return x * (Scalar(1) - x + Scalar(1.5) * x * x);
  if (x < Scalar(3)) return log1p(x) * Scalar(0.8);
  const Scalar l1 = log(x);
  return l1 - log(l1);
}

}  // namespace detail

/// Lambert W: the w with w e^w = x, by Halley iteration. The principal branch
/// covers x >= -1/e; the lower branch covers -1/e <= x < 0.
template <typename Scalar = double>
Scalar lambert_w(Scalar x, LambertBranch branch = LambertBranch::kPrincipal) {
  using std::abs;
  using std::exp;
  const Scalar branch_point = -Scalar(1) / std::numbers::e_v<Scalar>;
  const Scalar eps = std::numeric_limits<Scalar>::epsilon();
  if (std::isnan(x)) throw std::domain_error("lambert_w: NaN argument");
  if (x < branch_point - Scalar(4) * eps) throw std::domain_error("lambert_w: argument below -1/e");
  if (x <= branch_point) return Scalar(-1);
  if (branch == LambertBranch::kLower) {
    if (x >= Scalar(0)) throw std::domain_error("lambert_w: lower branch requires x < 0");
  } else if (x == Scalar(0)) {
    return Scalar(0);
  }

  Scalar w = detail::lambert_initial_guess(x, branch);
  for (int it = 0; it < 100; ++it) {
    const Scalar ew = exp(w);
    const Scalar f = w * ew - x;
    const Scalar wp1 = w + Scalar(1);
    if (wp1 == Scalar(0)) break;
    const Scalar step = f / (ew * wp1 - (w + Scalar(2)) * f / (Scalar(2) * wp1));
    w -= step;
    if (abs(step) <= Scalar(4) * eps * (Scalar(1) + abs(w))) break;
  }
  if (branch == LambertBranch::kPrincipal && w < Scalar(-1)) w = Scalar(-1);
  if (branch == LambertBranch::kLower && w > Scalar(-1)) w = Scalar(-1);
  return w;
}

}  // namespace fedsched
