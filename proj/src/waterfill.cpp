#include "fedsched/waterfill.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "fedsched/lambert_w.hpp"

namespace fedsched::waterfill {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Floors sorted(const Floors& floors) {
  Floors s = floors;
  std::sort(s.data(), s.data() + s.size());
  return s;
}

}  // namespace

double power_at(const Floors& floors, double level) { return (level - floors.array()).max(0.0).sum(); }

Eigen::VectorXd powers_at(const Floors& floors, double level) { return (level - floors.array()).max(0.0).matrix(); }

double rate_at(const Floors& floors, double level, double bandwidth_hz) {
  double r = 0.0;
  for (Eigen::Index i = 0; i < floors.size(); ++i)
    if (level > floors[i]) r += bandwidth_hz * std::log2(level / floors[i]);
  return r;
}

double energy_at(const Floors& floors, double level, double bandwidth_hz, double model_bits) {
  const double r = rate_at(floors, level, bandwidth_hz);
  if (!(r > 0.0)) return kInf;
  return power_at(floors, level) * model_bits / r;
}

double power_level_all_active(const Floors& floors, double p_max_w) {
  return (p_max_w + floors.sum()) / static_cast<double>(floors.size());
}

std::optional<EnergyRoots> energy_level_roots(const Floors& floors, double bandwidth_hz, double model_bits,
                                              double energy_j) {
  if (!(energy_j > 0.0) || floors.size() == 0) return std::nullopt;
  const double k = static_cast<double>(floors.size());
  const double a = model_bits / (bandwidth_hz * energy_j);
  // sum log2(phi) = -sum log2(floor); sum 1/phi = sum floor.
  const double sum_log2_phi = -floors.array().log2().sum();
  const double b = -(bandwidth_hz * energy_j * sum_log2_phi + model_bits * floors.sum()) / (k * bandwidth_hz * energy_j);
  // theta = -W(-a 2^b ln2) / (a ln2); evaluate the argument in log space.
  const double ln2 = std::numbers::ln2;
  const double log_mag = std::log(a) + b * ln2 + std::log(ln2);
  if (log_mag > -1.0 + 1e-12) return std::nullopt;
  const double z = -std::exp(std::min(log_mag, -1.0));
  EnergyRoots roots;
  roots.principal = -lambert_w(z, LambertBranch::kPrincipal) / (a * ln2);
  if (log_mag < -700.0) {
    // W_{-1}(z) for z -> 0-: solve w + ln(-w) = ln(-z) by Newton in log space.
    double w = log_mag - std::log(-log_mag);
    for (int i = 0; i < 50; ++i) w -= (w + std::log(-w) - log_mag) / (1.0 + 1.0 / w);
    roots.lower = -w / (a * ln2);
  } else {
    roots.lower = -lambert_w(z, LambertBranch::kLower) / (a * ln2);
  }
  return roots;
}

std::optional<double> energy_level_all_active(const Floors& floors, double bandwidth_hz, double model_bits,
                                              double energy_j) {
  const auto roots = energy_level_roots(floors, bandwidth_hz, model_bits, energy_j);
  if (!roots) return std::nullopt;
  // The principal root sits on the floor when the budget is feasible at all.
  const double top = floors.maxCoeff() * (1.0 + 1e-9);
  if (roots->principal > top) return roots->principal;
  if (roots->lower && *roots->lower > top) return roots->lower;
  return std::nullopt;
}

double power_limited_level(const Floors& floors, double p_max_w) {
  const Floors s = sorted(floors);
  for (Eigen::Index k = s.size(); k >= 1; --k) {
    const double level = power_level_all_active(s.head(k), p_max_w);
    if (level > s[k - 1]) return level;
  }
  return s[0];
}

double energy_limited_level(const Floors& floors, double bandwidth_hz, double model_bits, double energy_j) {
  const Floors s = sorted(floors);
  for (Eigen::Index k = s.size(); k >= 1; --k) {
    const auto level = energy_level_all_active(s.head(k), bandwidth_hz, model_bits, energy_j);
    if (level) return *level;
  }
  // Not even the best subcarrier can carry the model on this budget.
  return s[0];
}

double rate_limited_level(const Floors& floors, double bandwidth_hz, double target_rate_bps) {
  const Floors s = sorted(floors);
  for (Eigen::Index k = s.size(); k >= 1; --k) {
    const double kk = static_cast<double>(k);
    const double level = std::exp2((target_rate_bps / bandwidth_hz + s.head(k).array().log2().sum()) / kk);
    if (level >= s[k - 1]) return level;
  }
  return s[0];
}

double water_level(const Floors& floors, double bandwidth_hz, double model_bits, double p_max_w, double energy_j) {
  return std::min(power_limited_level(floors, p_max_w),
                  energy_limited_level(floors, bandwidth_hz, model_bits, energy_j));
}

}  // namespace fedsched::waterfill
