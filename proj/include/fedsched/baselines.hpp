#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "fedsched/mdp.hpp"

namespace fedsched::sched {

enum class BaselineKind { kGreedy, kFedAvg, kMaxGradient, kAscend };

/// "greedy", "fedavg", "max_gradient" or "ascend"; anything else is a domain error.
BaselineKind parse_baseline(std::string_view name);
std::string to_string(BaselineKind kind);

inline constexpr double kGreedyThresholdS = 3.0;

/// max(1, round(N / 2)): 10 of 20 at the default size.
int fixed_count(int n_users);

/// Linear ramp from max(1, round(0.1 N)) to round(0.9 N) over the horizon.
int ascend_count(int round, int max_rounds, int n_users);

/// Per-user time estimate for greedy: f_max, floor(M/L) subcarriers at the
/// user's mean CNR with P^max split evenly over them.
double greedy_estimate_s(const EnvSnapshot& s, int user, int set_size);

/// Sorted user ids.
std::vector<int> baseline_schedule(BaselineKind kind, const EnvSnapshot& s, Rng& rng);

class BaselineScheduler final : public Scheduler {
 public:
  explicit BaselineScheduler(BaselineKind kind) : kind_(kind) {}
  std::vector<int> select(const EnvSnapshot& snapshot, Rng& rng) override {
    return baseline_schedule(kind_, snapshot, rng);
  }
  [[nodiscard]] std::string name() const override { return to_string(kind_); }

 private:
  BaselineKind kind_;
};

}  // namespace fedsched::sched
