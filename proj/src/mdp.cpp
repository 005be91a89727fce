#include "fedsched/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace fedsched::sched {

Eigen::VectorXd build_state(const EnvSnapshot& s) {
  const int n = s.n_users();
  Eigen::VectorXd x(state_size(n));
  const double span = kChannelDbHigh - kChannelDbLow;
  for (int i = 0; i < n; ++i) {
    const double db = 10.0 * std::log10(std::max(s.gain.row(i).mean(), 1e-300));
    x[i] = std::clamp(2.0 * (db - kChannelDbLow) / span - 1.0, -1.0, 1.0);
  }
  x.segment(n, n) = s.f_min_hz / s.f_ref_hz;
  x.segment(2 * n, n) = s.f_max_hz / s.f_ref_hz;
  x.segment(3 * n, n) = s.divergence.cwiseMin(kDivergenceClip);
  x[4 * n] = s.target_accuracy - s.accuracy;
  x.segment(4 * n + 1, n) = s.budgets_j / s.e_max_j;
  return x;
}

SchedAction split_action(const Eigen::VectorXd& flat) {
  if (flat.size() < 2) throw std::domain_error("split_action: need at least one user");
  return {flat[0], flat.tail(flat.size() - 1)};
}

std::vector<int> decode_action(const SchedAction& action, int n_users) {
  if (action.probs.size() != n_users) throw std::domain_error("decode_action: score length differs from N");
  const int len = std::clamp(static_cast<int>(std::floor(action.m_frac * n_users)), 1, n_users);
  std::vector<int> order(n_users);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return action.probs[a] > action.probs[b]; });
  order.resize(len);
  std::sort(order.begin(), order.end());
  return order;
}

double reward(double round_time_s) {
  if (round_time_s < 0.0) throw std::domain_error("reward: negative round time");
  return -round_time_s;
}

}  // namespace fedsched::sched
