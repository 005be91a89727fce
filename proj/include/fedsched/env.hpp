#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "fedsched/alloc.hpp"
#include "fedsched/config.hpp"
#include "fedsched/fl.hpp"
#include "fedsched/mdp.hpp"
#include "fedsched/phy.hpp"
#include "fedsched/records.hpp"
#include "fedsched/rng.hpp"

namespace fedsched {

struct EnvOptions {
  alloc::Solver solver = alloc::Solver::kLcra;
  fl::ModelKind model = fl::ModelKind::kLogistic;
  fl::TaskShape task;
  /// Computes the selection-bias diagnostic every round (full-shard gradients).
  bool survey_bias = false;
  /// Keeps the per-round allocation JSON in the step result.
  bool debug_alloc = false;
};

struct StepResult {
  RoundRecord record;
  bool aborted = false;
  std::string abort_reason;
  int violations = 0;
  int battery_negative_events = 0;
  std::vector<std::string> violation_messages;
  std::string alloc_json;
};

/// Wireless FL system driven one global round at a time. All randomness comes
/// from labelled streams of one seed, so the channel, harvest and data
/// sequences are the same whichever users a scheduler picks.
class FlEnvironment {
 public:
  FlEnvironment(const SimConfig& cfg, std::uint64_t seed, EnvOptions opt = {});

  /// Observation for the current round.
  [[nodiscard]] sched::EnvSnapshot snapshot() const;

  /// Runs the round for the given user ids and advances to the next one.
  StepResult step(const std::vector<int>& scheduled);

  [[nodiscard]] int round() const { return round_; }
  [[nodiscard]] double accuracy() const { return accuracy_; }
  [[nodiscard]] bool target_reached() const { return accuracy_ >= cfg_.target_accuracy; }
  /// Target met or round cap hit.
  [[nodiscard]] bool finished() const { return target_reached() || round_ >= cfg_.max_rounds; }

  [[nodiscard]] const SimConfig& config() const { return cfg_; }
  [[nodiscard]] const fl::SyntheticDataset& data() const { return data_; }
  [[nodiscard]] const std::vector<UserProfile>& profiles() const { return profiles_; }
  [[nodiscard]] const EnergyState& energy() const { return energy_; }
  [[nodiscard]] const ChannelRealization& channel() const { return channel_; }

  /// Allocation problem for `users` under the current channel and batteries.
  [[nodiscard]] alloc::AllocProblem make_problem(const std::vector<int>& users) const;

 private:
  SimConfig cfg_;
  std::uint64_t seed_;
  EnvOptions opt_;
  fl::SyntheticDataset data_;
  std::unique_ptr<fl::Classifier> model_;
  fl::ParamVector global_;
  std::vector<UserProfile> profiles_;
  Eigen::VectorXd comp_cycles_;
  Eigen::VectorXd weights_;
  EnergyState energy_;
  ChannelRealization channel_;
  Eigen::VectorXd divergence_;
  Eigen::VectorXd grad_norms_;
  double accuracy_ = 0.0;
  int round_ = 0;
  Rng channel_rng_;
  Rng energy_rng_;
};

}  // namespace fedsched
