#pragma once

#include <Eigen/Dense>
#include <span>
#include <stdexcept>
#include <vector>

#include "fedsched/config.hpp"
#include "fedsched/rng.hpp"

namespace fedsched {

using Mask = Eigen::Array<bool, Eigen::Dynamic, 1>;

/// A user's uplink cannot carry any bits (rate <= 0).
class InfeasibleRateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An allocation spent more energy than the battery held.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct UserProfile {
  int user_id = 0;
  double cycles_per_bit = 20.0;
  double batch_bits = 1.0;
  double f_min_hz = 0.5e9;
  double f_max_hz = 3.0e9;
  double p_max_w = 1.0;
  double distance_m = 100.0;
  double shadowing_db = 0.0;
  std::size_t shard = 0;

  [[nodiscard]] double pathloss_db() const;
};

inline constexpr double kMinDistanceM = 50.0;
inline constexpr double kMaxDistanceM = 500.0;
inline constexpr double kShadowingStdDb = 6.0;
inline constexpr double kHarvestQuantumJ = 0.05;
inline constexpr double kEnergyTolJ = 1e-9;

/// Static per-user physics: distance ~ U[50,500] m, shadowing ~ N(0, 6 dB).
std::vector<UserProfile> draw_profiles(const SimConfig& cfg, std::span<const double> batch_bits, Rng& rng);

/// 38.4 + 30 log10(d) + X_sigma.
double pathloss_db(double distance_m, double shadowing_db);

struct ChannelRealization {
  Eigen::MatrixXd gain;  // N x M linear power gains
  Eigen::MatrixXd cnr;   // gain / (N0 B)
};

/// Combines large-scale fading with a given small-scale power fading matrix.
ChannelRealization make_channel(std::span<const UserProfile> profiles, const Eigen::MatrixXd& fading,
                                const SimConfig& cfg);

/// Rayleigh block fading: exponential(1) power per (user, subcarrier).
ChannelRealization draw_channel(std::span<const UserProfile> profiles, const SimConfig& cfg, Rng& rng);

double compute_time(const UserProfile& u, double f_hz, int epochs);
double compute_energy(const UserProfile& u, double f_hz, int epochs, double kappa);

/// Sum over assigned subcarriers of B log2(1 + P phi).
double rate(const Eigen::Ref<const Eigen::VectorXd>& cnr_row, const Eigen::Ref<const Eigen::VectorXd>& power,
            const Mask& assignment, double bandwidth_hz);

struct CommCost {
  double seconds = 0.0;
  double joules = 0.0;
};

CommCost comm_time_energy(double rate_bps, const Eigen::Ref<const Eigen::VectorXd>& power,
                          const Mask& assignment, double model_bits);

struct EnergyState {
  Eigen::VectorXd budgets_j;
  Eigen::VectorXd harvested_last_j;
};

EnergyState initial_energy(const SimConfig& cfg, Rng& rng);

/// One round of harvest per user: q * Poisson(mean / q) with q = 0.05 J.
Eigen::VectorXd draw_harvest(const SimConfig& cfg, Rng& rng);

/// min(old - spent + harvested, E_max). Throws ContractViolation on overspend.
EnergyState advance_energy(const EnergyState& state, const Eigen::VectorXd& spent_j,
                           const Eigen::VectorXd& harvested_j, double e_max_j);
EnergyState advance_energy(const EnergyState& state, const Eigen::VectorXd& spent_j, Rng& rng,
                           const SimConfig& cfg);

/// Straggler time: max over the list.
double round_time(std::span<const double> per_user_totals);

}  // namespace fedsched
