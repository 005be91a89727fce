#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "fedsched/rng.hpp"

namespace fedsched::sched {

/// What a scheduler may observe at the start of round k.
struct EnvSnapshot {
  int round = 0;
  int max_rounds = 1;
  Eigen::MatrixXd gain;  // N x M linear gains
  Eigen::MatrixXd cnr;   // N x M
  Eigen::VectorXd comp_cycles;
  Eigen::VectorXd f_min_hz;
  Eigen::VectorXd f_max_hz;
  Eigen::VectorXd divergence;
  Eigen::VectorXd budgets_j;
  Eigen::VectorXd grad_norms;  // last observed, stale for unscheduled users
  double accuracy = 0.0;
  double target_accuracy = 0.8;
  double e_max_j = 1.0;
  double f_ref_hz = 3e9;
  double p_max_w = 1.0;
  double bandwidth_hz = 15e3;
  double model_bits = 51.2e3;

  [[nodiscard]] int n_users() const { return static_cast<int>(gain.rows()); }
};

// Reference range for the per-user mean channel gain in dB.
inline constexpr double kChannelDbLow = -130.0;
inline constexpr double kChannelDbHigh = -70.0;
inline constexpr double kDivergenceClip = 5.0;

/// Flattened, normalized state of length 5N+1: channel, f_min, f_max,
/// divergence, accuracy gap, energy.
Eigen::VectorXd build_state(const EnvSnapshot& s);

inline int state_size(int n_users) { return 5 * n_users + 1; }
inline int action_size(int n_users) { return n_users + 1; }

struct SchedAction {
  double m_frac = 0.5;
  Eigen::VectorXd probs;
};

/// Splits a flat action [m, p_1..p_N].
SchedAction split_action(const Eigen::VectorXd& flat);

/// The max(1, floor(m N)) users with the highest scores, ties to the lower id.
/// Returned in ascending id order.
std::vector<int> decode_action(const SchedAction& action, int n_users);

/// -t. Negative times are a domain error.
double reward(double round_time_s);

/// Picks the users to schedule each round.
class Scheduler {
 public:
  virtual ~Scheduler() = default;
  virtual std::vector<int> select(const EnvSnapshot& snapshot, Rng& rng) = 0;
  /// Outcome of the last selection. `reward` is -t, or the penalty on abort.
  /// `truncated_next` is the following observation when the episode stopped
  /// at the round cap rather than at the target.
  virtual void feedback(double /*reward*/, bool /*done*/, const EnvSnapshot* /*truncated_next*/ = nullptr) {}
  [[nodiscard]] virtual std::string name() const = 0;
};

}  // namespace fedsched::sched
