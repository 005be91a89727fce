#pragma once

#include <Eigen/Dense>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

// Per-round joint CPU-frequency, subcarrier and power allocation for a
// scheduled user set.
namespace fedsched::alloc {

/// Every scheduled user was dropped; the round cannot run.
class EmptyRoundError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// LDRA never produced a feasible iterate.
class InfeasibleRoundError : public std::runtime_error {
 public:
  InfeasibleRoundError(const std::string& what, std::vector<int> users)
      : std::runtime_error(what), violating_users(std::move(users)) {}
  std::vector<int> violating_users;
};

/// Rows index scheduled users; `users` maps rows to global user ids.
struct AllocProblem {
  std::vector<int> users;
  Eigen::MatrixXd cnr;          // V x M
  Eigen::VectorXd comp_cycles;  // E c_n d_n
  Eigen::VectorXd budgets_j;
  Eigen::VectorXd pathloss_db;
  double p_max_w = 1.0;
  double f_min_hz = 0.5e9;
  double f_max_hz = 3.0e9;
  double model_bits = 51.2e3;
  double bandwidth_hz = 15e3;
  double kappa = 1e-28;

  [[nodiscard]] int n_users() const { return static_cast<int>(users.size()); }
  [[nodiscard]] int n_subcarriers() const { return static_cast<int>(cnr.cols()); }
  /// Restriction to the given rows, in order.
  [[nodiscard]] AllocProblem subset(std::span<const int> rows) const;
};

struct RoundAllocation {
  std::vector<int> users;
  std::vector<int> assignment;  // per subcarrier: owning row, -1 when unassigned
  Eigen::MatrixXd power_w;      // V x M
  Eigen::VectorXd freq_hz;
  Eigen::VectorXd t_cp_s;
  Eigen::VectorXd t_cm_s;
  Eigen::VectorXd e_cp_j;
  Eigen::VectorXd e_cm_j;
  Eigen::VectorXd water_level;
  double round_time_s = 0.0;
  std::vector<int> dropped;  // global user ids
  std::vector<double> round_time_trace;
  int iterations = 0;

  [[nodiscard]] bool is_dropped_row(int row) const;
  [[nodiscard]] std::vector<int> active_rows() const;
  /// t_cp + t_cm per row.
  [[nodiscard]] Eigen::VectorXd finish_times() const;
};

enum class Solver { kLdra, kLcra };

struct CpuSolution {
  Eigen::VectorXd freq_hz;
  Eigen::VectorXd f_cap_hz;  // energy-limited upper bound per user
  double t_star = 0.0;
  std::vector<int> infeasible_rows;
};

/// Closed-form CPU frequencies given the communication times and energies.
/// `active` rows only; others are left at f_min.
CpuSolution cpu_freq_opt(const AllocProblem& p, const Eigen::VectorXd& t_cm_s, const Eigen::VectorXd& e_cm_j,
                         const std::vector<int>& active_rows);
CpuSolution cpu_freq_opt(const AllocProblem& p, const Eigen::VectorXd& t_cm_s, const Eigen::VectorXd& e_cm_j);

struct LdraOptions {
  int max_iter = 500;
  double tol = 1e-4;
};

/// Nonsummable diminishing subgradient step 0.1 / sqrt(iteration), iteration >= 1.
inline double ldra_stepsize(int iteration) { return 0.1 / std::sqrt(static_cast<double>(iteration)); }

/// KKT power for one (user, subcarrier): B(lambda + gamma E)/(ln2 (mu + gamma Pi)) - 1/phi, unclipped.
double ldra_kkt_power(double lambda, double gamma, double mu, double energy_j, double model_bits, double bandwidth_hz,
                      double cnr);

/// Subcarrier value R* - 1/(ln2 (1 + 1/(phi P*))).
double ldra_subcarrier_value(double cnr, double power);

RoundAllocation ldra_solve(const AllocProblem& p, const Eigen::VectorXd& t_cp_s, const Eigen::VectorXd& e_cp_j,
                           const LdraOptions& opt = {});

RoundAllocation lcra_solve(const AllocProblem& p, const Eigen::VectorXd& t_cp_s, const Eigen::VectorXd& e_cp_j);

/// Lowers every user's water line so it finishes exactly at `deadline_s`.
/// Never raises a line. Updates t_cm, e_cm, power and water_level in place.
void synchronize_power(const AllocProblem& p, RoundAllocation& a, double deadline_s);

struct AdoOptions {
  Solver solver = Solver::kLcra;
  int max_outer = 20;
  double tol_s = 1e-4;
  LdraOptions ldra;
};

RoundAllocation ado_optimize(const AllocProblem& p, const AdoOptions& opt = {});

struct Screening {
  std::vector<int> feasible_rows;
  std::vector<int> dropped_rows;
};

/// A user survives when, at f_min on its best subcarrier, the energy left for
/// uploading buys a water level above that subcarrier's floor.
Screening feasibility_screen(const AllocProblem& p);

/// Human-readable list of violated constraints (empty when the allocation is valid).
/// `full_assignment` additionally requires every subcarrier to be owned.
std::vector<std::string> check_allocation(const AllocProblem& p, const RoundAllocation& a, bool full_assignment = false,
                                          double tol = 1e-9);

/// {assignment, power, freq, times, energies, dropped} with global user ids.
std::string allocation_to_json(const AllocProblem& p, const RoundAllocation& a);

}  // namespace fedsched::alloc
