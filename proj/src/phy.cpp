#include "fedsched/phy.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace fedsched {

double UserProfile::pathloss_db() const { return fedsched::pathloss_db(distance_m, shadowing_db); }

double pathloss_db(double distance_m, double shadowing_db) {
  return 38.4 + 30.0 * std::log10(distance_m) + shadowing_db;
}

std::vector<UserProfile> draw_profiles(const SimConfig& cfg, std::span<const double> batch_bits, Rng& rng) {
  if (batch_bits.size() != static_cast<std::size_t>(cfg.n_users))
    throw std::domain_error("draw_profiles: batch_bits size must equal n_users");
  std::uniform_real_distribution<double> dist(kMinDistanceM, kMaxDistanceM);
  std::normal_distribution<double> shadow(0.0, kShadowingStdDb);
  std::vector<UserProfile> out(cfg.n_users);
  for (int n = 0; n < cfg.n_users; ++n) {
    UserProfile& u = out[n];
    u.user_id = n;
    u.cycles_per_bit = cfg.cycles_per_bit;
    u.batch_bits = batch_bits[n];
    u.f_min_hz = cfg.f_min_hz;
    u.f_max_hz = cfg.f_max_hz;
    u.p_max_w = cfg.p_max_w;
    u.distance_m = dist(rng);
    u.shadowing_db = shadow(rng);
    u.shard = static_cast<std::size_t>(n);
  }
  return out;
}

ChannelRealization make_channel(std::span<const UserProfile> profiles, const Eigen::MatrixXd& fading,
                                const SimConfig& cfg) {
  const auto n_users = static_cast<Eigen::Index>(profiles.size());
  if (fading.rows() != n_users) throw std::domain_error("make_channel: fading rows must match profiles");
  ChannelRealization ch;
  ch.gain.resize(n_users, fading.cols());
  for (Eigen::Index n = 0; n < n_users; ++n) {
    const double large_scale = std::pow(10.0, -profiles[n].pathloss_db() / 10.0);
    ch.gain.row(n) = large_scale * fading.row(n);
  }
  ch.cnr = ch.gain / cfg.noise_power_w();
  return ch;
}

ChannelRealization draw_channel(std::span<const UserProfile> profiles, const SimConfig& cfg, Rng& rng) {
  if (profiles.empty()) throw std::domain_error("draw_channel: no users");
  std::exponential_distribution<double> expo(1.0);
  Eigen::MatrixXd fading(static_cast<Eigen::Index>(profiles.size()), cfg.n_subcarriers);
  for (Eigen::Index n = 0; n < fading.rows(); ++n) {
    for (Eigen::Index m = 0; m < fading.cols(); ++m) {
      double g = 0.0;
      while (g <= 0.0) g = expo(rng);
      fading(n, m) = g;
    }
  }
  return make_channel(profiles, fading, cfg);
}

namespace {

void check_frequency(const UserProfile& u, double f_hz) {
  if (!(f_hz >= u.f_min_hz && f_hz <= u.f_max_hz))
    throw std::domain_error("CPU frequency " + std::to_string(f_hz) + " Hz outside [f_min, f_max] for user " +
                            std::to_string(u.user_id));
}

}  // namespace

double compute_time(const UserProfile& u, double f_hz, int epochs) {
  check_frequency(u, f_hz);
  return epochs * u.cycles_per_bit * u.batch_bits / f_hz;
}

double compute_energy(const UserProfile& u, double f_hz, int epochs, double kappa) {
  check_frequency(u, f_hz);
  return kappa * epochs * f_hz * f_hz * u.cycles_per_bit * u.batch_bits;
}

double rate(const Eigen::Ref<const Eigen::VectorXd>& cnr_row, const Eigen::Ref<const Eigen::VectorXd>& power,
            const Mask& assignment, double bandwidth_hz) {
  if (cnr_row.size() != power.size() || power.size() != assignment.size())
    throw std::domain_error("rate: length mismatch");
  double r = 0.0;
  for (Eigen::Index m = 0; m < power.size(); ++m) {
    if (power[m] < 0.0) throw std::domain_error("rate: negative power");
    if (assignment[m]) r += bandwidth_hz * std::log2(1.0 + power[m] * cnr_row[m]);
  }
  return r;
}

CommCost comm_time_energy(double rate_bps, const Eigen::Ref<const Eigen::VectorXd>& power,
                          const Mask& assignment, double model_bits) {
  if (!(rate_bps > 0.0)) throw InfeasibleRateError("uplink rate is not positive");
  const double seconds = model_bits / rate_bps;
  const double total_power = assignment.select(power.array(), 0.0).sum();
  return {seconds, total_power * seconds};
}

EnergyState initial_energy(const SimConfig& cfg, Rng& rng) {
  std::uniform_real_distribution<double> e0(cfg.e0_range_j[0], cfg.e0_range_j[1]);
  EnergyState s;
  s.budgets_j.resize(cfg.n_users);
  for (int n = 0; n < cfg.n_users; ++n) s.budgets_j[n] = e0(rng);
  s.harvested_last_j = Eigen::VectorXd::Zero(cfg.n_users);
  return s;
}

Eigen::VectorXd draw_harvest(const SimConfig& cfg, Rng& rng) {
  std::poisson_distribution<int> quanta(cfg.eh_mean_j / kHarvestQuantumJ);
  Eigen::VectorXd h(cfg.n_users);
  for (int n = 0; n < cfg.n_users; ++n) h[n] = kHarvestQuantumJ * quanta(rng);
  return h;
}

EnergyState advance_energy(const EnergyState& state, const Eigen::VectorXd& spent_j,
                           const Eigen::VectorXd& harvested_j, double e_max_j) {
  const Eigen::Index n = state.budgets_j.size();
  if (spent_j.size() != n || harvested_j.size() != n) throw std::domain_error("advance_energy: length mismatch");
  EnergyState next;
  next.budgets_j.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (spent_j[i] < 0.0 || spent_j[i] > state.budgets_j[i] + kEnergyTolJ)
      throw ContractViolation("user " + std::to_string(i) + " spent " + std::to_string(spent_j[i]) +
                              " J with budget " + std::to_string(state.budgets_j[i]) + " J");
    const double left = std::max(0.0, state.budgets_j[i] - spent_j[i]);
    next.budgets_j[i] = std::min(left + harvested_j[i], e_max_j);
  }
  next.harvested_last_j = harvested_j;
  return next;
}

EnergyState advance_energy(const EnergyState& state, const Eigen::VectorXd& spent_j, Rng& rng,
                           const SimConfig& cfg) {
  return advance_energy(state, spent_j, draw_harvest(cfg, rng), cfg.e_max_j);
}

double round_time(std::span<const double> per_user_totals) {
  if (per_user_totals.empty()) throw std::domain_error("round_time: no users");
  return *std::max_element(per_user_totals.begin(), per_user_totals.end());
}

}  // namespace fedsched
