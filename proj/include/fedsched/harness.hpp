#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fedsched/config.hpp"
#include "fedsched/env.hpp"
#include "fedsched/mdp.hpp"
#include "fedsched/ppo.hpp"
#include "fedsched/records.hpp"

namespace fedsched {

/// Penalty round time charged for every round of an aborted episode.
inline constexpr double kAbortPenaltyRoundS = 10.0;

struct EpisodeResult {
  int rounds_used = 0;
  double total_wallclock_s = 0.0;
  bool reached_target = false;
  bool aborted = false;
  std::string abort_reason;
  double final_accuracy = 0.0;
  /// Sum of rewards, or -max_rounds * 10 s when aborted.
  double episode_return = 0.0;
  int violations = 0;
  int battery_negative_events = 0;
  std::vector<RoundRecord> per_round;
  std::vector<std::string> alloc_dumps;
};

/// Plays one episode. `seed` fixes the environment; the scheduler's own
/// randomness comes from the seed's "policy" stream.
EpisodeResult run_episode(const SimConfig& cfg, sched::Scheduler& scheduler, std::uint64_t seed,
                          const EnvOptions& opt = {});

struct TrainOptions {
  int episodes = 300;
  sched::PpoHyper hyper;
  EnvOptions env;
  std::optional<std::filesystem::path> out_dir;
  /// Episodes in the moving average that decides the best snapshot.
  int best_window = 10;
  bool verbose = false;
};

struct CurvePoint {
  int episode = 0;
  double episode_return = 0.0;
  int rounds = 0;
  double final_accuracy = 0.0;
};

struct TrainResult {
  std::vector<CurvePoint> curve;
  sched::BetaPolicy final_policy;
  sched::BetaPolicy best_policy;
  int updates = 0;
  int rollbacks = 0;
};

inline constexpr const char* kCurveCsvHeader = "episode,return,rounds,final_accuracy";

/// Episode e uses environment seed derive_seed(cfg.rng_seed, e). Writes
/// curve.csv plus best_actor/best_critic and final_actor/final_critic
/// snapshots into out_dir when given.
TrainResult train_agent(const SimConfig& cfg, const TrainOptions& opt);

std::string format_curve(const std::vector<CurvePoint>& curve);

struct BenchRow {
  std::string scheduler;
  std::uint64_t seed = 0;
  double a = 0.0;
  double target = 0.0;
  int rounds = 0;
  double wallclock_s = 0.0;
  bool reached = false;
  int violations = 0;
  int battery_negative_events = 0;
  bool aborted = false;
};

inline constexpr const char* kBenchCsvHeader = "scheduler,seed,a,target,rounds,wallclock_s,reached";

struct BenchOptions {
  std::vector<std::string> schedulers;
  int seeds = 20;
  /// Non-IID ratios or targets to sweep; at most one may be non-empty.
  std::vector<double> sweep_a;
  std::vector<double> sweep_target;
  std::optional<std::filesystem::path> snapshot;  // actor prefix, required for "ppo"
  EnvOptions env;
  int threads = 0;  // 0: hardware concurrency
};

/// Runs every (scheduler, seed, sweep point) cell. Seed s uses environment
/// seed derive_seed(cfg.rng_seed, 1'000'000 + s), identical across schedulers.
std::vector<BenchRow> bench(const SimConfig& cfg, const BenchOptions& opt);

std::string format_bench(const std::vector<BenchRow>& rows);

/// Median wallclock per scheduler. With `unreached_as_inf`, episodes that
/// missed the target count as never finishing.
std::map<std::string, double> median_wallclock(const std::vector<BenchRow>& rows, bool unreached_as_inf = false);

std::uint64_t bench_seed(const SimConfig& cfg, int seed_index);

}  // namespace fedsched
