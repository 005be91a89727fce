#include <cmath>
#include <numeric>

#include "doctest.h"
#include "fedsched/config.hpp"
#include "fedsched/phy.hpp"

using namespace fedsched;

namespace {

UserProfile profile(double cycles_per_bit, double bits) {
  UserProfile u;
  u.cycles_per_bit = cycles_per_bit;
  u.batch_bits = bits;
  u.f_min_hz = 1.0;
  u.f_max_hz = 3e9;
  return u;
}

Mask all(int m) { return Mask::Constant(m, true); }

}  // namespace

TEST_CASE("pathloss and cnr arithmetic") {
  CHECK(pathloss_db(10.0, 0.0) == doctest::Approx(68.4));

  SimConfig cfg;
  UserProfile u;
  u.distance_m = 10.0;
  const Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(1, 1);
  const auto ch = make_channel(std::vector<UserProfile>{u}, ones, cfg);
  CHECK(ch.gain(0, 0) == doctest::Approx(std::pow(10.0, -6.84)).epsilon(1e-12));

  const double n0b = std::pow(10.0, (-174.0 - 30.0) / 10.0) * 15000.0;
  CHECK(n0b == doctest::Approx(5.9716e-17).epsilon(1e-4));
  CHECK(1e-10 / cfg.noise_power_w() == doctest::Approx(1e-10 / n0b).epsilon(1e-12));
  CHECK(1e-10 / cfg.noise_power_w() == doctest::Approx(1.675e6).epsilon(1e-3));
}

TEST_CASE("drawn channels are positive and consistent") {
  SimConfig cfg;
  Rng rng = make_rng(4, "channel");
  const std::vector<double> bits(cfg.n_users, 64.0 * 32 * 64);
  const auto profiles = draw_profiles(cfg, bits, rng);
  for (const auto& u : profiles) {
    CHECK(u.distance_m >= kMinDistanceM);
    CHECK(u.distance_m <= kMaxDistanceM);
  }
  for (int rep = 0; rep < 20; ++rep) {
    const auto ch = draw_channel(profiles, cfg, rng);
    CHECK(ch.gain.rows() == cfg.n_users);
    CHECK(ch.gain.cols() == cfg.n_subcarriers);
    CHECK((ch.gain.array() > 0.0).all());
    const double worst = ((ch.cnr * cfg.noise_power_w()).array() / ch.gain.array() - 1.0).abs().maxCoeff();
    CHECK(worst <= 1e-12);
  }
}

TEST_CASE("rayleigh power fading has unit mean") {
  SimConfig cfg;
  cfg.n_subcarriers = 1000;
  UserProfile u;
  u.distance_m = 100.0;
  Rng rng = make_rng(8, "channel");
  const auto ch = draw_channel(std::vector<UserProfile>{u}, cfg, rng);
  const double g0 = std::pow(10.0, -u.pathloss_db() / 10.0);
  const double mean = ch.gain.mean() / g0;
  CHECK(std::abs(mean - 1.0) <= 4.0 / std::sqrt(1000.0));
}

TEST_CASE("computation time and energy") {
  const UserProfile u = profile(20.0, 1e6);
  CHECK(compute_time(u, 2e9, 8) == doctest::Approx(0.08));
  CHECK(compute_time(profile(1.0, 1.0), 1.0, 1) == 1.0);
  CHECK(compute_time(u, 1e9, 8) == doctest::Approx(2.0 * compute_time(u, 2e9, 8)));
  CHECK(compute_energy(u, 2e9, 8, 1e-28) == doctest::Approx(0.064));
  CHECK(compute_energy(u, 2e9, 8, 1e-28) == doctest::Approx(4.0 * compute_energy(u, 1e9, 8, 1e-28)));

  UserProfile bounded = u;
  bounded.f_min_hz = 0.5e9;
  CHECK_THROWS_AS(compute_time(bounded, 0.0, 8), std::domain_error);
  CHECK_THROWS_AS(compute_energy(bounded, 4e9, 8, 1e-28), std::domain_error);
}

TEST_CASE("uplink rate") {
  Eigen::VectorXd phi(1), p(1);
  phi << 2.0;
  p << 0.5;
  CHECK(rate(phi, p, all(1), 15000.0) == doctest::Approx(15000.0));
  CHECK(rate(phi, Eigen::VectorXd::Zero(1), Mask::Constant(1, false), 15000.0) == 0.0);

  Eigen::VectorXd phi2(2), p2(2);
  phi2 << 3.0, 1.5;
  p2 << 1.0, 2.0;
  CHECK(rate(phi2, p2, all(2), 15000.0) == doctest::Approx(60000.0));

  p2[0] = -0.1;
  CHECK_THROWS_AS(rate(phi2, p2, all(2), 15000.0), std::domain_error);

  // strictly increasing in every assigned power
  Rng rng = make_rng(2, "rate");
  std::uniform_real_distribution<double> u(0.01, 10.0);
  for (int i = 0; i < 100; ++i) {
    Eigen::VectorXd ph(4), pw(4);
    for (int m = 0; m < 4; ++m) {
      ph[m] = u(rng);
      pw[m] = u(rng);
    }
    const double r0 = rate(ph, pw, all(4), 15000.0);
    pw[i % 4] *= 1.01;
    CHECK(rate(ph, pw, all(4), 15000.0) > r0);
  }
}

TEST_CASE("communication time and energy") {
  Eigen::VectorXd p(1);
  p << 1.0;
  const CommCost c = comm_time_energy(15000.0, p, all(1), 51200.0);
  CHECK(c.seconds == doctest::Approx(3.4133333333));
  CHECK(c.joules == doctest::Approx(3.4133333333));
  CHECK_THROWS_AS(comm_time_energy(0.0, p, all(1), 51200.0), InfeasibleRateError);
}

TEST_CASE("battery bookkeeping") {
  EnergyState s;
  s.budgets_j = Eigen::VectorXd::Constant(1, 0.5);
  s.harvested_last_j = Eigen::VectorXd::Zero(1);
  auto v = [](double x) { return Eigen::VectorXd::Constant(1, x); };
  CHECK(advance_energy(s, v(0.1), v(0.2), 1.0).budgets_j[0] == doctest::Approx(0.6));
  s.budgets_j[0] = 0.9;
  CHECK(advance_energy(s, v(0.1), v(0.3), 1.0).budgets_j[0] == doctest::Approx(1.0));
  CHECK(advance_energy(s, v(0.1), v(0.3), 1.0).harvested_last_j[0] == doctest::Approx(0.3));
  CHECK_THROWS_AS(advance_energy(s, v(0.9 + 1e-6), v(0.0), 1.0), ContractViolation);
  CHECK(advance_energy(s, v(0.9 + 1e-12), v(0.0), 1.0).budgets_j[0] >= 0.0);
}

TEST_CASE("harvest is a quantized poisson with the configured mean") {
  SimConfig cfg;
  cfg.n_users = 100000;
  Rng rng = make_rng(17, "energy");
  const Eigen::VectorXd h = draw_harvest(cfg, rng);
  CHECK(std::abs(h.mean() - 0.2) <= 0.01);
  const Eigen::ArrayXd q = h.array() / kHarvestQuantumJ;
  CHECK(((q - q.round()).abs() < 1e-9).all());
  CHECK((h.array() >= 0.0).all());
}

TEST_CASE("battery stays within [0, E_max] over a long random run") {
  SimConfig cfg;
  Rng rng = make_rng(5, "energy");
  EnergyState s = initial_energy(cfg, rng);
  std::uniform_real_distribution<double> frac(0.0, 1.0);
  for (int k = 0; k < 2000; ++k) {
    Eigen::VectorXd spent(cfg.n_users);
    for (int n = 0; n < cfg.n_users; ++n) spent[n] = frac(rng) < 0.5 ? frac(rng) * s.budgets_j[n] : 0.0;
    s = advance_energy(s, spent, rng, cfg);
    CHECK((s.budgets_j.array() >= -1e-9).all());
    CHECK((s.budgets_j.array() <= cfg.e_max_j).all());
  }
}

TEST_CASE("straggler round time") {
  const std::vector<double> two{1.2, 2.5};
  CHECK(round_time(two) == 2.5);
  const std::vector<double> one{0.7};
  CHECK(round_time(one) == 0.7);
  std::vector<double> many{0.3, 0.9, 0.1, 0.5};
  const double t = round_time(many);
  std::reverse(many.begin(), many.end());
  CHECK(round_time(many) == t);
  CHECK_THROWS_AS(round_time(std::vector<double>{}), std::domain_error);
}
