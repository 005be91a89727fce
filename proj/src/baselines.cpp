#include "fedsched/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <numeric>
#include <stdexcept>

namespace fedsched::sched {

BaselineKind parse_baseline(std::string_view name) {
  if (name == "greedy") return BaselineKind::kGreedy;
  if (name == "fedavg") return BaselineKind::kFedAvg;
  if (name == "max_gradient") return BaselineKind::kMaxGradient;
  if (name == "ascend") return BaselineKind::kAscend;
  throw std::domain_error("unknown baseline scheduler: " + std::string(name));
}

std::string to_string(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::kGreedy: return "greedy";
    case BaselineKind::kFedAvg: return "fedavg";
    case BaselineKind::kMaxGradient: return "max_gradient";
    case BaselineKind::kAscend: return "ascend";
  }
  throw std::domain_error("unknown baseline kind");
}

int fixed_count(int n_users) { return std::clamp(static_cast<int>(std::lround(0.5 * n_users)), 1, n_users); }

int ascend_count(int round, int max_rounds, int n_users) {
  const int lo = std::max(1, static_cast<int>(std::lround(0.1 * n_users)));
  const int hi = std::max(lo, static_cast<int>(std::lround(0.9 * n_users)));
  if (max_rounds <= 1) return std::clamp((lo + hi) / 2, 1, n_users);
  const double frac = std::clamp(static_cast<double>(round) / (max_rounds - 1), 0.0, 1.0);
  return std::clamp(static_cast<int>(std::lround(lo + (hi - lo) * frac)), 1, n_users);
}

double greedy_estimate_s(const EnvSnapshot& s, int user, int set_size) {
  const int m = static_cast<int>(s.cnr.cols());
  const int share = std::max(1, m / std::max(1, set_size));
  const double phi = s.cnr.row(user).mean();
  const double rate = share * s.bandwidth_hz * std::log2(1.0 + s.p_max_w / share * phi);
  const double t_cp = s.comp_cycles[user] / s.f_max_hz[user];
  return rate > 0.0 ? t_cp + s.model_bits / rate : std::numeric_limits<double>::infinity();
}

namespace {

std::vector<int> uniform_subset(int n, int k, Rng& rng) {
  std::vector<int> ids(n);
  std::iota(ids.begin(), ids.end(), 0);
  std::shuffle(ids.begin(), ids.end(), rng);
  ids.resize(k);
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<int> weighted_subset(const Eigen::VectorXd& weights, int k, Rng& rng) {
  const int n = static_cast<int>(weights.size());
  std::vector<double> w(weights.data(), weights.data() + n);
  for (double& x : w) x = std::isfinite(x) && x > 0.0 ? x : 0.0;
  std::vector<int> picked;
  for (int draw = 0; draw < k; ++draw) {
    double total = std::accumulate(w.begin(), w.end(), 0.0);
    if (!(total > 0.0)) {
      // Everyone left has zero weight: fall back to uniform over the rest.
      for (int i = 0; i < n; ++i)
        if (std::find(picked.begin(), picked.end(), i) == picked.end()) w[i] = 1.0;
      total = std::accumulate(w.begin(), w.end(), 0.0);
    }
    std::discrete_distribution<int> pick(w.begin(), w.end());
    const int i = pick(rng);
    picked.push_back(i);
    w[i] = 0.0;
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

std::vector<int> greedy(const EnvSnapshot& s) {
  const int n = s.n_users();
  for (int len = n; len >= 1; --len) {
    std::vector<std::pair<double, int>> est(n);
    for (int i = 0; i < n; ++i) est[i] = {greedy_estimate_s(s, i, len), i};
    std::sort(est.begin(), est.end());
    if (est[len - 1].first <= kGreedyThresholdS) {
      std::vector<int> ids;
      for (int j = 0; j < len; ++j) ids.push_back(est[j].second);
      std::sort(ids.begin(), ids.end());
      return ids;
    }
  }
  int best = 0;
  double best_t = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) {
    const double t = greedy_estimate_s(s, i, 1);
    if (t < best_t) best_t = t, best = i;
  }
  return {best};
}

}  // namespace

std::vector<int> baseline_schedule(BaselineKind kind, const EnvSnapshot& s, Rng& rng) {
  const int n = s.n_users();
  if (n < 1) throw std::domain_error("baseline_schedule: no users");
  switch (kind) {
    case BaselineKind::kGreedy: return greedy(s);
    case BaselineKind::kFedAvg: return uniform_subset(n, fixed_count(n), rng);
    case BaselineKind::kMaxGradient: return weighted_subset(s.grad_norms, fixed_count(n), rng);
    case BaselineKind::kAscend: return uniform_subset(n, ascend_count(s.round, s.max_rounds, n), rng);
  }
  throw std::domain_error("unknown baseline kind");
}

}  // namespace fedsched::sched
