#pragma once

#include <Eigen/Dense>
#include <optional>

// Water-filling over a user's subcarrier set. Every routine takes the noise
// floors 1/phi of the subcarriers; power on subcarrier m is (level - floor_m)^+.
namespace fedsched::waterfill {

using Floors = Eigen::VectorXd;

double power_at(const Floors& floors, double level);
double rate_at(const Floors& floors, double level, double bandwidth_hz);
Eigen::VectorXd powers_at(const Floors& floors, double level);

/// Energy spent uploading `model_bits` at `level` (infinite when the rate is zero).
double energy_at(const Floors& floors, double level, double bandwidth_hz, double model_bits);

/// (P_max + sum floors) / |U|, assuming every subcarrier is active.
double power_level_all_active(const Floors& floors, double p_max_w);

/// Roots of the all-active energy equation, via Lambert W: the principal branch
/// gives the lower root, the lower branch the upper one. Empty when no real root.
struct EnergyRoots {
  double principal = 0.0;
  std::optional<double> lower;
};
std::optional<EnergyRoots> energy_level_roots(const Floors& floors, double bandwidth_hz, double model_bits,
                                              double energy_j);

/// Energy-limited level assuming every subcarrier is active: the principal
/// branch when it clears every floor, otherwise the lower branch. Empty when
/// neither root clears the floors.
std::optional<double> energy_level_all_active(const Floors& floors, double bandwidth_hz, double model_bits,
                                              double energy_j);

/// Exact levels with inactive subcarriers dropped from the closed forms.
double power_limited_level(const Floors& floors, double p_max_w);
double energy_limited_level(const Floors& floors, double bandwidth_hz, double model_bits, double energy_j);
double rate_limited_level(const Floors& floors, double bandwidth_hz, double target_rate_bps);

/// min(energy-limited, power-limited).
double water_level(const Floors& floors, double bandwidth_hz, double model_bits, double p_max_w, double energy_j);

}  // namespace fedsched::waterfill
