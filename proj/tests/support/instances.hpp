#pragma once

#include <cmath>
#include <numeric>
#include <random>

#include "fedsched/alloc.hpp"
#include "fedsched/config.hpp"
#include "fedsched/phy.hpp"
#include "fedsched/rng.hpp"

namespace testing_support {

struct InstanceShape {
  int users = 2;
  int subcarriers = 3;
  // log10 range of the per-user energy budget in joules
  double log_budget_lo = -2.5;
  double log_budget_hi = 0.0;
};

/// Random allocation problem with default-config physics: pathloss over
/// U[50,500] m with 6 dB shadowing, Rayleigh power fading and log-uniform budgets.
inline fedsched::alloc::AllocProblem random_problem(fedsched::Rng& rng, const InstanceShape& shape) {
  fedsched::SimConfig cfg;
  fedsched::alloc::AllocProblem p;
  std::uniform_real_distribution<double> dist(50.0, 500.0);
  std::normal_distribution<double> shadow(0.0, 6.0);
  std::exponential_distribution<double> fade(1.0);
  std::uniform_real_distribution<double> log_budget(shape.log_budget_lo, shape.log_budget_hi);
  std::uniform_real_distribution<double> batch(64.0, 64.0 * 64.0);

  p.users.resize(shape.users);
  std::iota(p.users.begin(), p.users.end(), 0);
  p.cnr.resize(shape.users, shape.subcarriers);
  p.comp_cycles.resize(shape.users);
  p.budgets_j.resize(shape.users);
  p.pathloss_db.resize(shape.users);
  for (int n = 0; n < shape.users; ++n) {
    p.pathloss_db[n] = fedsched::pathloss_db(dist(rng), shadow(rng));
    const double gain = std::pow(10.0, -p.pathloss_db[n] / 10.0);
    for (int m = 0; m < shape.subcarriers; ++m) p.cnr(n, m) = gain * fade(rng) / cfg.noise_power_w();
    p.comp_cycles[n] = cfg.local_epochs * cfg.cycles_per_bit * batch(rng) * 32.0;
    p.budgets_j[n] = std::pow(10.0, log_budget(rng));
  }
  p.p_max_w = cfg.p_max_w;
  p.f_min_hz = cfg.f_min_hz;
  p.f_max_hz = cfg.f_max_hz;
  p.model_bits = cfg.model_bits;
  p.bandwidth_hz = cfg.bandwidth_hz;
  p.kappa = cfg.kappa;
  return p;
}

/// Redraws until every user passes the feasibility screen.
inline fedsched::alloc::AllocProblem random_feasible_problem(fedsched::Rng& rng, const InstanceShape& shape) {
  for (;;) {
    auto p = random_problem(rng, shape);
    if (fedsched::alloc::feasibility_screen(p).dropped_rows.empty()) return p;
  }
}

}  // namespace testing_support
