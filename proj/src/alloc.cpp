#include "fedsched/alloc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "fedsched/waterfill.hpp"
#include "json.hpp"

namespace fedsched::alloc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kLn2 = std::numbers::ln2;
constexpr std::size_t kLdraPool = 4;

waterfill::Floors floors_of(const AllocProblem& p, int row, const std::vector<int>& subcarriers) {
  waterfill::Floors f(static_cast<Eigen::Index>(subcarriers.size()));
  for (std::size_t i = 0; i < subcarriers.size(); ++i) f[static_cast<Eigen::Index>(i)] = 1.0 / p.cnr(row, subcarriers[i]);
  return f;
}

std::vector<std::vector<int>> owned_by_row(const RoundAllocation& a, int n_rows) {
  std::vector<std::vector<int>> owned(n_rows);
  for (std::size_t m = 0; m < a.assignment.size(); ++m)
    if (a.assignment[m] >= 0) owned[a.assignment[m]].push_back(static_cast<int>(m));
  return owned;
}

RoundAllocation empty_allocation(const AllocProblem& p, const Eigen::VectorXd& t_cp, const Eigen::VectorXd& e_cp) {
  const int v = p.n_users();
  RoundAllocation a;
  a.users = p.users;
  a.assignment.assign(p.n_subcarriers(), -1);
  a.power_w = Eigen::MatrixXd::Zero(v, p.n_subcarriers());
  a.freq_hz = Eigen::VectorXd::Constant(v, p.f_min_hz);
  a.t_cp_s = t_cp;
  a.e_cp_j = e_cp;
  a.t_cm_s = Eigen::VectorXd::Zero(v);
  a.e_cm_j = Eigen::VectorXd::Zero(v);
  a.water_level = Eigen::VectorXd::Zero(v);
  return a;
}

// Sets one row's power to the water line `level` over its owned subcarriers.
void apply_level(const AllocProblem& p, RoundAllocation& a, int row, const std::vector<int>& owned, double level) {
  a.power_w.row(row).setZero();
  a.water_level[row] = level;
  if (owned.empty()) {
    a.t_cm_s[row] = kInf;
    a.e_cm_j[row] = 0.0;
    return;
  }
  const waterfill::Floors fl = floors_of(p, row, owned);
  const Eigen::VectorXd pw = waterfill::powers_at(fl, level);
  for (std::size_t i = 0; i < owned.size(); ++i) a.power_w(row, owned[i]) = pw[static_cast<Eigen::Index>(i)];
  const double r = waterfill::rate_at(fl, level, p.bandwidth_hz);
  a.t_cm_s[row] = r > 0.0 ? p.model_bits / r : kInf;
  a.e_cm_j[row] = r > 0.0 ? pw.sum() * a.t_cm_s[row] : 0.0;
}

double max_finish(const RoundAllocation& a) {
  double t = 0.0;
  for (int row : a.active_rows()) t = std::max(t, a.t_cp_s[row] + a.t_cm_s[row]);
  return t;
}

// Minimum energy to move the model over the best subcarrier (the rate -> 0 limit).
double min_upload_energy(const AllocProblem& p, int row) {
  return p.model_bits * kLn2 / (p.bandwidth_hz * p.cnr.row(row).maxCoeff());
}

// Communication time of one user at its binding water line over `owned`.
double binding_comm_time(const AllocProblem& p, int row, const std::vector<int>& owned, double e_comm) {
  if (owned.empty() || !(e_comm > 0.0)) return kInf;
  const waterfill::Floors fl = floors_of(p, row, owned);
  const double level = waterfill::water_level(fl, p.bandwidth_hz, p.model_bits, p.p_max_w, e_comm);
  const double r = waterfill::rate_at(fl, level, p.bandwidth_hz);
  return r > 0.0 ? p.model_bits / r : kInf;
}

// Hands the slowest user one more subcarrier, by a move or a swap, while that
// lowers the round time.
void refine_straggler(const AllocProblem& p, const Eigen::VectorXd& t_cp, const Eigen::VectorXd& e_comm,
                      std::vector<std::vector<int>>& held) {
  const int v = p.n_users();
  std::vector<int> owner(p.n_subcarriers(), -1);
  for (int n = 0; n < v; ++n)
    for (int m : held[n]) owner[m] = n;
  Eigen::VectorXd finish(v);
  for (int n = 0; n < v; ++n) finish[n] = t_cp[n] + binding_comm_time(p, n, held[n], e_comm[n]);

  auto without = [](std::vector<int> set, int m) {
    set.erase(std::find(set.begin(), set.end(), m));
    return set;
  };
  auto with = [](std::vector<int> set, int m) {
    set.insert(std::lower_bound(set.begin(), set.end(), m), m);
    return set;
  };

  for (int guard = 0; guard < 4 * p.n_subcarriers() * v; ++guard) {
    Eigen::Index s = 0;
    const double t_now = finish.maxCoeff(&s);
    if (!std::isfinite(t_now)) return;
    double best_t = t_now;
    std::vector<int> best_s;
    std::vector<int> best_o;
    int best_owner = -1;
    for (int m = 0; m < p.n_subcarriers(); ++m) {
      const int o = owner[m];
      if (o == s || o < 0) continue;
      double rest = 0.0;
      for (int n = 0; n < v; ++n)
        if (n != s && n != o) rest = std::max(rest, finish[n]);
      auto consider = [&](std::vector<int> ns, std::vector<int> no) {
        const double fs = t_cp[s] + binding_comm_time(p, static_cast<int>(s), ns, e_comm[s]);
        const double fo = t_cp[o] + binding_comm_time(p, o, no, e_comm[o]);
        const double t = std::max({rest, fs, fo});
        if (t < best_t * (1.0 - 1e-12)) {
          best_t = t;
          best_s = std::move(ns);
          best_o = std::move(no);
          best_owner = o;
        }
      };
      if (held[o].size() >= 2) consider(with(held[s], m), without(held[o], m));
      for (int ms : held[s]) consider(with(without(held[s], ms), m), with(without(held[o], m), ms));
    }
    if (best_owner < 0) return;
    held[s] = std::move(best_s);
    held[best_owner] = std::move(best_o);
    for (int m : held[s]) owner[m] = static_cast<int>(s);
    for (int m : held[best_owner]) owner[m] = best_owner;
    finish[s] = t_cp[s] + binding_comm_time(p, static_cast<int>(s), held[s], e_comm[s]);
    finish[best_owner] = t_cp[best_owner] + binding_comm_time(p, best_owner, held[best_owner], e_comm[best_owner]);
  }
}

}  // namespace

AllocProblem AllocProblem::subset(std::span<const int> rows) const {
  AllocProblem s = *this;
  const auto k = static_cast<Eigen::Index>(rows.size());
  s.users.clear();
  s.cnr.resize(k, cnr.cols());
  s.comp_cycles.resize(k);
  s.budgets_j.resize(k);
  s.pathloss_db.resize(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const int r = rows[static_cast<std::size_t>(i)];
    s.users.push_back(users[r]);
    s.cnr.row(i) = cnr.row(r);
    s.comp_cycles[i] = comp_cycles[r];
    s.budgets_j[i] = budgets_j[r];
    s.pathloss_db[i] = pathloss_db[r];
  }
  return s;
}

bool RoundAllocation::is_dropped_row(int row) const {
  return std::find(dropped.begin(), dropped.end(), users[row]) != dropped.end();
}

std::vector<int> RoundAllocation::active_rows() const {
  std::vector<int> rows;
  for (int r = 0; r < static_cast<int>(users.size()); ++r)
    if (!is_dropped_row(r)) rows.push_back(r);
  return rows;
}

Eigen::VectorXd RoundAllocation::finish_times() const { return t_cp_s + t_cm_s; }

// --- CPU frequency -----------------------------------------------------------

CpuSolution cpu_freq_opt(const AllocProblem& p, const Eigen::VectorXd& t_cm, const Eigen::VectorXd& e_cm,
                         const std::vector<int>& active) {
  const int v = p.n_users();
  CpuSolution s;
  s.freq_hz = Eigen::VectorXd::Constant(v, p.f_min_hz);
  s.f_cap_hz = Eigen::VectorXd::Constant(v, p.f_min_hz);
  std::vector<int> ok;
  for (int n : active) {
    const double left = p.budgets_j[n] - e_cm[n];
    const double cap = left > 0.0 ? std::sqrt(left / (p.kappa * p.comp_cycles[n])) : 0.0;
    if (cap < p.f_min_hz * (1.0 - 1e-12)) {
      s.infeasible_rows.push_back(n);
      continue;
    }
    s.f_cap_hz[n] = std::clamp(cap, p.f_min_hz, p.f_max_hz);
    ok.push_back(n);
  }
  s.t_star = 0.0;
  for (int n : ok) s.t_star = std::max(s.t_star, p.comp_cycles[n] / s.f_cap_hz[n] + t_cm[n]);
  for (int n : ok) {
    const double slack = s.t_star - t_cm[n];
    const double f = slack > 0.0 ? p.comp_cycles[n] / slack : s.f_cap_hz[n];
    s.freq_hz[n] = std::clamp(f, p.f_min_hz, s.f_cap_hz[n]);
  }
  return s;
}

CpuSolution cpu_freq_opt(const AllocProblem& p, const Eigen::VectorXd& t_cm, const Eigen::VectorXd& e_cm) {
  std::vector<int> all(p.n_users());
  std::iota(all.begin(), all.end(), 0);
  return cpu_freq_opt(p, t_cm, e_cm, all);
}

// --- LDRA --------------------------------------------------------------------

double ldra_kkt_power(double lambda, double gamma, double mu, double energy_j, double model_bits, double bandwidth_hz,
                      double cnr) {
  const double den = kLn2 * (mu + gamma * model_bits);
  const double num = bandwidth_hz * (lambda + gamma * energy_j);
  if (!(den > 0.0)) return num > 0.0 ? kInf : -1.0 / cnr;
  return num / den - 1.0 / cnr;
}

double ldra_subcarrier_value(double cnr, double power) {
  if (!(power > 0.0)) return 0.0;
  const double snr = cnr * power;
  return std::log2(1.0 + snr) - 1.0 / (kLn2 * (1.0 + 1.0 / snr));
}

RoundAllocation ldra_solve(const AllocProblem& p, const Eigen::VectorXd& t_cp, const Eigen::VectorXd& e_cp,
                           const LdraOptions& opt) {
  const int v = p.n_users();
  const int m_count = p.n_subcarriers();
  const Eigen::VectorXd e_comm = p.budgets_j - e_cp;

  // Multipliers are kept dimensionless: lambda = l T^2 / Pi, mu = u T^2 B / (ln2 Pmax Pi),
  // gamma = g T^2 B / (ln2 Pmax Pi^2), with T a round-time scale. The KKT water
  // line is then (l Pmax + g B E / (ln2 Pi)) / (u + g).
  double time_scale = 0.0;
  for (int n = 0; n < v; ++n) {
    const double share = std::max(1.0, static_cast<double>(m_count) / v);
    const double per = p.p_max_w / share;
    const double r = p.bandwidth_hz * share * std::log2(1.0 + per * p.cnr.row(n).mean());
    time_scale = std::max(time_scale, t_cp[n] + p.model_bits / r);
  }
  Eigen::VectorXd l = Eigen::VectorXd::Constant(v, 1.0 / v);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(v);
  Eigen::VectorXd u = Eigen::VectorXd::Constant(v, 1.0 / v);
  const double lambda_unit = time_scale * time_scale / p.model_bits;
  const double mu_unit = lambda_unit * p.bandwidth_hz / (kLn2 * p.p_max_w);
  const double gamma_unit = mu_unit / p.model_bits;

  // Deadline minimizing t + sum lambda_n Pi / (t - t_cp,n): sum l_n T^2 / (t - t_cp,n)^2 = 1.
  auto dual_deadline = [&]() {
    const double l_sum = l.sum();
    if (!(l_sum > 0.0)) return kInf;
    const double root = time_scale * std::sqrt(l_sum);
    double lo = std::max(t_cp.maxCoeff(), t_cp.minCoeff() + root);
    double hi = t_cp.maxCoeff() + root;
    for (int i = 0; i < 200 && hi - lo > 1e-15 * hi; ++i) {
      const double mid = 0.5 * (lo + hi);
      double h = 0.0;
      for (int n = 0; n < v; ++n) h += l[n] * time_scale * time_scale / ((mid - t_cp[n]) * (mid - t_cp[n]));
      (h > 1.0 ? lo : hi) = mid;
    }
    return hi;
  };

  // The few best distinct rounded iterates, refined once the dual loop ends.
  std::vector<std::pair<double, std::vector<std::vector<int>>>> pool;
  std::vector<int> last_evaluated;
  std::vector<int> starving;
  int iterations = 0;

  Eigen::MatrixXd power(v, m_count);
  std::vector<int> assignment(m_count, -1);
  for (int it = 1; it <= opt.max_iter; ++it) {
    // (i) candidate powers
    for (int n = 0; n < v; ++n) {
      const double lambda = l[n] * lambda_unit;
      const double gamma = g[n] * gamma_unit;
      for (int m = 0; m < m_count; ++m) {
        const double pk = ldra_kkt_power(lambda, gamma, u[n] * mu_unit, std::max(e_comm[n], 0.0), p.model_bits, p.bandwidth_hz,
                                         p.cnr(n, m));
        power(n, m) = std::clamp(pk, 0.0, p.p_max_w);
      }
    }
    // (ii) subcarrier values and exclusive assignment
    for (int m = 0; m < m_count; ++m) {
      int owner = -1;
      double best_v = 0.0;
      for (int n = 0; n < v; ++n) {
        // dL/dc carries the factor B (lambda + gamma E); it lets a starved user outbid the others.
        const double weight = l[n] * kLn2 * p.p_max_w + g[n] * p.bandwidth_hz * std::max(e_comm[n], 0.0) / p.model_bits;
        const double val = weight * ldra_subcarrier_value(p.cnr(n, m), power(n, m));
        const double scale = std::max(std::abs(val), std::abs(best_v));
        if (owner < 0 || val > best_v + 1e-12 * scale ||
            (std::abs(val - best_v) <= 1e-12 * scale && p.pathloss_db[n] > p.pathloss_db[owner])) {
          best_v = val;
          owner = n;
        }
      }
      assignment[m] = owner;
    }

    std::vector<std::vector<int>> owned(v);
    for (int m = 0; m < m_count; ++m) owned[assignment[m]].push_back(m);

    // Primal recovery: the iterate's assignment, with each starved user handed
    // the subcarrier it values most relative to a multi-subcarrier owner, and
    // each user at its binding water line.
    std::vector<int> repaired = assignment;
    std::vector<std::vector<int>> held = owned;
    for (int n = 0; n < v; ++n) {
      if (!held[n].empty()) continue;
      int pick = -1;
      double best_ratio = -kInf;
      for (int m = 0; m < m_count; ++m) {
        const int o = repaired[m];
        if (held[o].size() < 2) continue;
        const double ratio = p.cnr(n, m) / p.cnr(o, m);
        if (ratio > best_ratio) {
          best_ratio = ratio;
          pick = m;
        }
      }
      if (pick < 0) continue;
      auto& from = held[repaired[pick]];
      from.erase(std::find(from.begin(), from.end(), pick));
      repaired[pick] = n;
      held[n].push_back(pick);
    }
    if (repaired != last_evaluated) {
      last_evaluated = repaired;
      for (auto& h : held) std::sort(h.begin(), h.end());
      double t_iter = 0.0;
      starving.clear();
      for (int n = 0; n < v; ++n) {
        const double f = t_cp[n] + binding_comm_time(p, n, held[n], e_comm[n]);
        if (!std::isfinite(f)) starving.push_back(p.users[n]);
        t_iter = std::max(t_iter, f);
      }
      const bool known = std::any_of(pool.begin(), pool.end(), [&](const auto& c) { return c.second == held; });
      if (std::isfinite(t_iter) && !known) {
        pool.emplace_back(t_iter, held);
        std::sort(pool.begin(), pool.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
        if (pool.size() > kLdraPool) pool.pop_back();
      }
    }

    // (iv) dual deadline and the raw iterate's rates
    Eigen::VectorXd rate_raw = Eigen::VectorXd::Zero(v);
    Eigen::VectorXd p_total = Eigen::VectorXd::Zero(v);
    for (int n = 0; n < v; ++n) {
      for (int m : owned[n]) {
        rate_raw[n] += p.bandwidth_hz * std::log2(1.0 + p.cnr(n, m) * power(n, m));
        p_total[n] += power(n, m);
      }
    }
    const double t = dual_deadline();

    // (iii) projected subgradient step on normalized residuals
    const double step = ldra_stepsize(it);
    double worst_primal = 0.0;
    double worst_slack = 0.0;
    for (int n = 0; n < v; ++n) {
      const double need = (t - t_cp[n]) > 0.0 ? p.model_bits / (t - t_cp[n]) : kInf;
      double r_rate;
      if (!(rate_raw[n] > 0.0) || std::isinf(need)) {
        r_rate = 1.0;
      } else {
        r_rate = (need - rate_raw[n]) / std::max(need, rate_raw[n]);
      }
      const double spend = p_total[n] * p.model_bits;
      const double afford = std::max(e_comm[n], 0.0) * rate_raw[n];
      const double r_energy = (spend > 0.0 || afford > 0.0) ? (spend - afford) / std::max(spend, afford) : 0.0;
      const double r_power = (p_total[n] - p.p_max_w) / p.p_max_w;

      worst_primal = std::max({worst_primal, r_energy, r_power, r_rate});
      worst_slack = std::max(worst_slack, l[n] * std::abs(r_rate));

      l[n] = std::max(0.0, l[n] + step * r_rate);
      g[n] = std::max(0.0, g[n] + step * r_energy);
      u[n] = std::max(0.0, u[n] + step * r_power);
    }
    iterations = it;
    if (!pool.empty() && worst_primal <= opt.tol && worst_slack <= opt.tol) break;
  }

  if (pool.empty()) throw InfeasibleRoundError("LDRA found no feasible iterate", starving);
  RoundAllocation best;
  double best_time = kInf;
  for (auto& [t_pool, held] : pool) {
    refine_straggler(p, t_cp, e_comm, held);
    RoundAllocation cand = empty_allocation(p, t_cp, e_cp);
    for (int n = 0; n < v; ++n) {
      for (int m : held[n]) cand.assignment[m] = n;
      apply_level(p, cand, n, held[n],
                  waterfill::water_level(floors_of(p, n, held[n]), p.bandwidth_hz, p.model_bits, p.p_max_w,
                                         e_comm[n]));
    }
    cand.round_time_s = max_finish(cand);
    if (cand.round_time_s < best_time) {
      best_time = cand.round_time_s;
      best = std::move(cand);
    }
  }
  best.iterations = iterations;
  return best;
}

// --- LCRA --------------------------------------------------------------------

void synchronize_power(const AllocProblem& p, RoundAllocation& a, double deadline_s) {
  const auto owned = owned_by_row(a, p.n_users());
  for (int n : a.active_rows()) {
    if (owned[n].empty()) continue;
    const double comm_time = deadline_s - a.t_cp_s[n];
    if (!(comm_time > 0.0) || !(a.t_cm_s[n] < comm_time)) continue;
    const waterfill::Floors fl = floors_of(p, n, owned[n]);
    const double level =
        std::min(a.water_level[n], waterfill::rate_limited_level(fl, p.bandwidth_hz, p.model_bits / comm_time));
    apply_level(p, a, n, owned[n], level);
  }
}

RoundAllocation lcra_solve(const AllocProblem& p, const Eigen::VectorXd& t_cp, const Eigen::VectorXd& e_cp) {
  const int v = p.n_users();
  const int m_count = p.n_subcarriers();
  const Eigen::VectorXd e_comm = p.budgets_j - e_cp;
  RoundAllocation a = empty_allocation(p, t_cp, e_cp);

  std::vector<std::vector<int>> owned(v);
  std::vector<bool> in_pool(m_count, true);
  int pool = m_count;
  std::vector<bool> dropped(v, false), complete(v, false);
  Eigen::VectorXd level = Eigen::VectorXd::Zero(v);
  Eigen::VectorXd rate = Eigen::VectorXd::Zero(v);

  auto best_free = [&](int n) {
    int best = -1;
    for (int m = 0; m < m_count; ++m)
      if (in_pool[m] && (best < 0 || p.cnr(n, m) > p.cnr(n, best))) best = m;
    return best;
  };
  auto refresh = [&](int n) {
    const waterfill::Floors fl = floors_of(p, n, owned[n]);
    level[n] = e_comm[n] > 0.0 ? waterfill::water_level(fl, p.bandwidth_hz, p.model_bits, p.p_max_w, e_comm[n])
                               : fl.minCoeff();
    rate[n] = waterfill::rate_at(fl, level[n], p.bandwidth_hz);
  };

  // i) every user, worst pathloss first, claims its best subcarrier
  std::vector<int> order(v);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int x, int y) { return p.pathloss_db[x] > p.pathloss_db[y]; });
  for (int n : order) {
    const int m = best_free(n);
    if (m < 0) {
      dropped[n] = true;
      continue;
    }
    owned[n] = {m};
    refresh(n);
    if (!(level[n] > 1.0 / p.cnr(n, m)) || !(rate[n] > 0.0)) {
      dropped[n] = true;
      owned[n].clear();
      continue;
    }
    in_pool[m] = false;
    --pool;
  }
  // then the slowest unfinished user keeps claiming while its water line clears the floor
  while (pool > 0) {
    int slow = -1;
    for (int n = 0; n < v; ++n)
      if (!dropped[n] && !complete[n] && (slow < 0 || rate[n] < rate[slow])) slow = n;
    if (slow < 0) break;
    const int m = best_free(slow);
    if (level[slow] > 1.0 / p.cnr(slow, m)) {
      owned[slow].push_back(m);
      in_pool[m] = false;
      --pool;
      refresh(slow);
    } else {
      complete[slow] = true;
    }
  }

  for (int n = 0; n < v; ++n) {
    if (dropped[n]) {
      a.dropped.push_back(p.users[n]);
      continue;
    }
    for (int m : owned[n]) a.assignment[m] = n;
    apply_level(p, a, n, owned[n], level[n]);
  }
  if (a.dropped.size() == static_cast<std::size_t>(v)) {
    a.round_time_s = 0.0;
    return a;
  }

  // ii) everyone finishes with the straggler
  const double t_star = max_finish(a);
  synchronize_power(p, a, t_star);
  a.round_time_s = max_finish(a);
  a.iterations = 1;
  return a;
}

// --- ADO ---------------------------------------------------------------------

RoundAllocation ado_optimize(const AllocProblem& p, const AdoOptions& opt) {
  const int v = p.n_users();
  if (v == 0) throw EmptyRoundError("no users scheduled");

  Eigen::VectorXd freq(v);
  for (int n = 0; n < v; ++n) {
    const double mid = 0.5 * (p.f_min_hz + p.f_max_hz);
    const double left = p.budgets_j[n] - p.kappa * p.comp_cycles[n] * mid * mid;
    freq[n] = left > 2.0 * min_upload_energy(p, n) ? mid : p.f_min_hz;
  }

  std::vector<int> rows(v);
  std::iota(rows.begin(), rows.end(), 0);
  std::vector<int> dropped_ids;

  auto drop_ids = [&](const std::vector<int>& ids) {
    std::vector<int> keep;
    for (int r : rows) {
      if (std::find(ids.begin(), ids.end(), p.users[r]) != ids.end())
        dropped_ids.push_back(p.users[r]);
      else
        keep.push_back(r);
    }
    rows = std::move(keep);
  };

  RoundAllocation comm;
  bool have_comm = false;
  AllocProblem sub;
  Eigen::VectorXd f_sub;
  std::vector<double> trace;
  double prev = kInf;
  int outer = 0;
  int guard = 0;
  while (outer < opt.max_outer && guard++ < opt.max_outer + v + 1) {
    if (rows.empty()) throw EmptyRoundError("every scheduled user was dropped");
    if (!have_comm) {
      sub = p.subset(rows);
      f_sub.resize(sub.n_users());
      for (int i = 0; i < sub.n_users(); ++i) f_sub[i] = freq[rows[i]];
      prev = kInf;
      trace.clear();
    }
    const Eigen::VectorXd t_cp = sub.comp_cycles.cwiseQuotient(f_sub);
    const Eigen::VectorXd e_cp = sub.kappa * sub.comp_cycles.cwiseProduct(f_sub.cwiseAbs2());

    RoundAllocation cand;
    try {
      cand = opt.solver == Solver::kLdra ? ldra_solve(sub, t_cp, e_cp, opt.ldra) : lcra_solve(sub, t_cp, e_cp);
    } catch (const InfeasibleRoundError& e) {
      if (e.violating_users.empty()) throw;
      drop_ids(e.violating_users);
      have_comm = false;
      continue;
    }
    if (!cand.dropped.empty()) {
      drop_ids(cand.dropped);
      have_comm = false;
      continue;
    }
    const double t_comm_step = max_finish(cand);
    if (have_comm && t_comm_step > prev + 1e-12) break;  // keep the previous, feasible solution
    comm = std::move(cand);
    have_comm = true;

    const CpuSolution cpu = cpu_freq_opt(sub, comm.t_cm_s, comm.e_cm_j);
    if (!cpu.infeasible_rows.empty()) {
      std::vector<int> ids;
      for (int r : cpu.infeasible_rows) ids.push_back(sub.users[r]);
      drop_ids(ids);
      have_comm = false;
      continue;
    }
    f_sub = cpu.freq_hz;
    for (int i = 0; i < sub.n_users(); ++i) freq[rows[i]] = f_sub[i];
    const double t_now = (sub.comp_cycles.cwiseQuotient(f_sub) + comm.t_cm_s).maxCoeff();
    trace.push_back(t_now);
    ++outer;
    if (std::abs(prev - t_now) <= opt.tol_s) break;
    prev = t_now;
  }
  if (!have_comm) {
    if (rows.empty()) throw EmptyRoundError("every scheduled user was dropped");
    throw EmptyRoundError("resource allocation did not settle on a user set");
  }

  comm.freq_hz = f_sub;
  comm.t_cp_s = sub.comp_cycles.cwiseQuotient(f_sub);
  comm.e_cp_j = sub.kappa * sub.comp_cycles.cwiseProduct(f_sub.cwiseAbs2());
  const double t_star = (comm.t_cp_s + comm.t_cm_s).maxCoeff();
  synchronize_power(sub, comm, t_star);

  // Scatter back to the full problem's rows.
  RoundAllocation out = empty_allocation(p, Eigen::VectorXd::Zero(v), Eigen::VectorXd::Zero(v));
  for (int i = 0; i < sub.n_users(); ++i) {
    const int r = rows[i];
    out.power_w.row(r) = comm.power_w.row(i);
    out.freq_hz[r] = comm.freq_hz[i];
    out.t_cp_s[r] = comm.t_cp_s[i];
    out.t_cm_s[r] = comm.t_cm_s[i];
    out.e_cp_j[r] = comm.e_cp_j[i];
    out.e_cm_j[r] = comm.e_cm_j[i];
    out.water_level[r] = comm.water_level[i];
  }
  for (int m = 0; m < p.n_subcarriers(); ++m)
    out.assignment[m] = comm.assignment[m] >= 0 ? rows[comm.assignment[m]] : -1;
  out.dropped = dropped_ids;
  out.round_time_s = max_finish(out);
  out.round_time_trace = trace;
  out.iterations = outer;
  return out;
}

// --- screening and checks ----------------------------------------------------

Screening feasibility_screen(const AllocProblem& p) {
  Screening s;
  for (int n = 0; n < p.n_users(); ++n) {
    const double left = p.budgets_j[n] - p.kappa * p.comp_cycles[n] * p.f_min_hz * p.f_min_hz;
    Eigen::Index best = 0;
    p.cnr.row(n).maxCoeff(&best);
    const double floor = 1.0 / p.cnr(n, best);
    bool ok = false;
    if (left > 0.0) {
      waterfill::Floors fl(1);
      fl[0] = floor;
      const double level = waterfill::water_level(fl, p.bandwidth_hz, p.model_bits, p.p_max_w, left);
      ok = level > floor * (1.0 + 1e-9) &&
           waterfill::energy_at(fl, level, p.bandwidth_hz, p.model_bits) <= left * (1.0 + 1e-12);
    }
    (ok ? s.feasible_rows : s.dropped_rows).push_back(n);
  }
  return s;
}

std::vector<std::string> check_allocation(const AllocProblem& p, const RoundAllocation& a, bool full_assignment,
                                          double tol) {
  std::vector<std::string> errs;
  const int v = p.n_users();
  auto who = [&](int row) { return "user " + std::to_string(p.users[row]); };
  if (static_cast<int>(a.assignment.size()) != p.n_subcarriers()) errs.push_back("assignment length mismatch");
  for (int m = 0; m < static_cast<int>(a.assignment.size()); ++m) {
    const int owner = a.assignment[m];
    if (owner < -1 || owner >= v) errs.push_back("subcarrier " + std::to_string(m) + " has invalid owner");
    if (full_assignment && owner < 0) errs.push_back("subcarrier " + std::to_string(m) + " unassigned (16e)");
    for (int n = 0; n < v; ++n)
      if (n != owner && a.power_w(n, m) != 0.0)
        errs.push_back(who(n) + " transmits on subcarrier " + std::to_string(m) + " it does not own (16e)");
  }
  for (int n : a.active_rows()) {
    if ((a.power_w.row(n).array() < 0.0).any()) errs.push_back(who(n) + " has negative power (16d)");
    if (a.power_w.row(n).sum() > p.p_max_w + tol) errs.push_back(who(n) + " exceeds P_max (16c)");
    if (a.e_cp_j[n] + a.e_cm_j[n] > p.budgets_j[n] + tol) errs.push_back(who(n) + " exceeds its energy budget (16b)");
    if (a.freq_hz[n] < p.f_min_hz * (1.0 - 1e-12) || a.freq_hz[n] > p.f_max_hz * (1.0 + 1e-12))
      errs.push_back(who(n) + " CPU frequency out of range (16f)");

    // Recompute the bookkeeping from the primal variables.
    double r = 0.0;
    for (int m = 0; m < p.n_subcarriers(); ++m)
      if (a.assignment[m] == n) r += p.bandwidth_hz * std::log2(1.0 + a.power_w(n, m) * p.cnr(n, m));
    if (!(r > 0.0)) {
      errs.push_back(who(n) + " has zero uplink rate");
      continue;
    }
    const double t_cm = p.model_bits / r;
    const double e_cm = a.power_w.row(n).sum() * t_cm;
    const double t_cp = p.comp_cycles[n] / a.freq_hz[n];
    const double e_cp = p.kappa * p.comp_cycles[n] * a.freq_hz[n] * a.freq_hz[n];
    auto close = [](double x, double y) { return std::abs(x - y) <= 1e-9 * std::max({1.0, std::abs(x), std::abs(y)}); };
    if (!close(t_cm, a.t_cm_s[n]) || !close(e_cm, a.e_cm_j[n]) || !close(t_cp, a.t_cp_s[n]) || !close(e_cp, a.e_cp_j[n]))
      errs.push_back(who(n) + " time/energy bookkeeping disagrees with power and frequency");
    if (a.t_cp_s[n] + a.t_cm_s[n] > a.round_time_s * (1.0 + 1e-12))
      errs.push_back(who(n) + " finishes after the round time");
  }
  return errs;
}

std::string allocation_to_json(const AllocProblem& p, const RoundAllocation& a) {
  nlohmann::json j;
  std::vector<int> owner_ids;
  for (int r : a.assignment) owner_ids.push_back(r >= 0 ? p.users[r] : -1);
  std::vector<std::vector<double>> power(p.n_users());
  for (int n = 0; n < p.n_users(); ++n) power[n].assign(a.power_w.row(n).begin(), a.power_w.row(n).end());
  auto vec = [](const Eigen::VectorXd& x) { return std::vector<double>(x.begin(), x.end()); };
  j["users"] = p.users;
  j["assignment"] = owner_ids;
  j["power"] = power;
  j["freq"] = vec(a.freq_hz);
  j["times"] = {{"t_cp", vec(a.t_cp_s)}, {"t_cm", vec(a.t_cm_s)}, {"round", a.round_time_s}};
  j["energies"] = {{"e_cp", vec(a.e_cp_j)}, {"e_cm", vec(a.e_cm_j)}};
  j["dropped"] = a.dropped;
  return j.dump();
}

}  // namespace fedsched::alloc
