// Acceptance run: one PASS/FAIL line per criterion. Exit status is non-zero
// when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numbers>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "fedsched/alloc.hpp"
#include "fedsched/baselines.hpp"
#include "fedsched/config.hpp"
#include "fedsched/env.hpp"
#include "fedsched/fl.hpp"
#include "fedsched/harness.hpp"
#include "fedsched/lambert_w.hpp"
#include "fedsched/nn.hpp"
#include "fedsched/phy.hpp"
#include "support/instances.hpp"
#include "support/oracles.hpp"

namespace fs = std::filesystem;
using namespace fedsched;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

fs::path source_dir() { return fs::path(FEDSCHED_SOURCE_DIR); }
SimConfig default_config() { return load_config(source_dir() / "configs" / "default.json"); }
SimConfig reduced_config() { return load_config(source_dir() / "configs" / "reduced.json"); }

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

std::vector<double> floors_of(const alloc::AllocProblem& p, int row) {
  std::vector<double> f;
  for (int m = 0; m < p.n_subcarriers(); ++m) f.push_back(1.0 / p.cnr(row, m));
  return f;
}

Outcome waterfill_oracle() {
  Rng rng = make_rng(101, "acceptance");
  std::uniform_int_distribution<int> m_dist(2, 8);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto p = testing_support::random_feasible_problem(rng, {1, m_dist(rng), -3.0, 0.0});
    const auto a = alloc::lcra_solve(p, Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1));
    const double want = oracle::binding_water_level(floors_of(p, 0), p.bandwidth_hz, p.model_bits, p.p_max_w,
                                                    p.budgets_j[0]);
    worst = std::max(worst, std::abs(a.water_level[0] - want) / want);
  }
  return {worst <= 1e-6, "200 instances, worst relative error " + fmt(worst, 3)};
}

Outcome brute_force() {
  Rng rng = make_rng(102, "acceptance");
  double worst = 0.0;
  int invalid = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto p = testing_support::random_feasible_problem(rng, {2, 3, -2.0, 0.0});
    const Eigen::VectorXd t_cp = p.comp_cycles / 1e9;
    const Eigen::VectorXd e_cp = p.kappa * p.comp_cycles * 1e18;
    auto a = alloc::ldra_solve(p, t_cp, e_cp);
    a.freq_hz.setConstant(1e9);
    const double want =
        oracle::brute_force_round_time(p.cnr, t_cp, p.budgets_j - e_cp, p.bandwidth_hz, p.model_bits, p.p_max_w);
    worst = std::max(worst, a.round_time_s / want - 1.0);
    if (!alloc::check_allocation(p, a, true).empty()) ++invalid;
  }
  return {worst <= 0.01 && invalid == 0,
          "50 instances, worst gap " + fmt(100.0 * worst, 3) + "%, invalid allocations " + std::to_string(invalid)};
}

Outcome equal_finish() {
  Rng rng = make_rng(103, "acceptance");
  double worst[2] = {0.0, 0.0};
  int invalid = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto p = testing_support::random_feasible_problem(rng, {5, 16, -2.0, 0.0});
    int k = 0;
    for (auto s : {alloc::Solver::kLdra, alloc::Solver::kLcra}) {
      const auto a = alloc::ado_optimize(p, {.solver = s});
      for (int n : a.active_rows())
        worst[k] = std::max(worst[k], std::abs(a.t_cp_s[n] + a.t_cm_s[n] - a.round_time_s) / a.round_time_s);
      if (!alloc::check_allocation(p, a).empty()) ++invalid;
      ++k;
    }
  }
  return {worst[0] <= 1e-3 && worst[1] <= 1e-3 && invalid == 0,
          "100 instances, worst spread LDRA " + fmt(worst[0], 3) + ", LCRA " + fmt(worst[1], 3)};
}

struct BenchRun {
  std::vector<BenchRow> rows;
};

Outcome constraint_suite(const BenchRun& run) {
  int violations = 0, negative = 0, aborted = 0;
  for (const auto& r : run.rows) {
    violations += r.violations;
    negative += r.battery_negative_events;
    aborted += r.aborted;
  }
  return {violations == 0 && negative == 0 && run.rows.size() == 80,
          std::to_string(run.rows.size()) + " episodes, " + std::to_string(violations) + " violations, " +
              std::to_string(negative) + " battery-negative events, " + std::to_string(aborted) + " aborted"};
}

Outcome numerics() {
  double lw = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double x = std::pow(10.0, -12.0 + 24.0 * i / 9999.0);
    const double w = lambert_w(x);
    lw = std::max(lw, std::abs(w * std::exp(w) - x) / std::max(1.0, x));
  }

  Rng rng = make_rng(105, "acceptance");
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_int_distribution<Eigen::Index> pick;
  double fd_worst = 0.0;
  for (const auto& sizes : {std::vector<int>{101, 64, 64, 42}, std::vector<int>{101, 64, 64, 1},
                            std::vector<int>{41, 64, 64, 18}}) {
    nn::DenseNet net(sizes);
    net.init(rng);
    Eigen::VectorXd x(sizes.front()), up(sizes.back());
    for (auto& v : x) v = nd(rng);
    for (auto& v : up) v = nd(rng);
    const Eigen::VectorXd g = nn::backward(net, x, up);
    for (int k = 0; k < 200; ++k) {
      const Eigen::Index i = pick(rng) % net.param_count();
      const double h = 1e-5, orig = net.params()[i];
      net.params()[i] = orig + h;
      const double fp = up.dot(nn::forward(net, x));
      net.params()[i] = orig - h;
      const double fm = up.dot(nn::forward(net, x));
      net.params()[i] = orig;
      const double fd = (fp - fm) / (2 * h);
      fd_worst = std::max(fd_worst, std::abs(fd - g[i]) / std::max(1e-6, std::max(std::abs(fd), std::abs(g[i]))));
    }
  }

  // Midpoint rule on concentrations the policy head can produce.
  std::uniform_real_distribution<double> conc(1.0, 10.0);
  double quad = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const double a = conc(rng), b = conc(rng);
    const int n = 100000;
    double integral = 0.0;
    for (int i = 0; i < n; ++i) integral += std::exp(nn::beta_logpdf((i + 0.5) / n, a, b)) / n;
    quad = std::max(quad, std::abs(integral - 1.0));
  }
  return {lw <= 1e-12 && fd_worst <= 1e-4 && quad <= 1e-4,
          "Lambert-W residual " + fmt(lw, 3) + ", backprop vs FD " + fmt(fd_worst, 3) + ", Beta normalization " +
              fmt(quad, 3)};
}

Outcome learning_signal(const fs::path& workdir) {
  SimConfig cfg = reduced_config();
  std::ostringstream detail;
  int wins = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    cfg.rng_seed = seed;
    TrainOptions opt;
    opt.episodes = 300;
    opt.out_dir = workdir / ("learning_seed" + std::to_string(seed));
    const TrainResult r = train_agent(cfg, opt);
    const int k = opt.episodes / 5;
    double first = 0.0, last = 0.0;
    for (int i = 0; i < k; ++i) {
      first += r.curve[i].episode_return / k;
      last += r.curve[opt.episodes - k + i].episode_return / k;
    }
    wins += last > first;
    detail << (seed > 1 ? "; " : "") << "seed " << seed << ": first " << fmt(first) << " -> last " << fmt(last);
  }
  return {wins == 3, std::to_string(wins) + "/3 seeds improve (" + detail.str() + ")"};
}

Outcome scheduling_benefit(const fs::path& workdir) {
  const SimConfig cfg = default_config();
  TrainOptions opt;
  opt.episodes = 1200;
  opt.out_dir = workdir / "ppo_default";
  train_agent(cfg, opt);
  BenchOptions b;
  b.schedulers = {"ppo", "fedavg"};
  b.seeds = 20;
  b.snapshot = *opt.out_dir / "best_actor";
  const auto rows = bench(cfg, b);
  write_text_file(workdir / "bench_ppo_fedavg.csv", format_bench(rows));
  const auto to_target = median_wallclock(rows, true);
  const auto plain = median_wallclock(rows, false);
  int reached_ppo = 0, reached_fedavg = 0;
  for (const auto& r : rows) (r.scheduler == "ppo" ? reached_ppo : reached_fedavg) += r.reached;
  const double ratio = to_target.at("ppo") / to_target.at("fedavg");
  std::ostringstream d;
  d << "median time-to-target ppo " << fmt(to_target.at("ppo")) << " s vs fedavg " << fmt(to_target.at("fedavg"))
    << " s, ratio " << fmt(ratio) << "; reached ppo " << reached_ppo << "/20, fedavg " << reached_fedavg
    << "/20; median wallclock incl. unreached ppo " << fmt(plain.at("ppo")) << " s, fedavg "
    << fmt(plain.at("fedavg")) << " s";
  return {ratio <= 1.0, d.str()};
}

Outcome selection_bias() {
  const SimConfig cfg = default_config();
  // Gradient-gap profiles along a fedavg trajectory.
  FlEnvironment env(cfg, 108);
  const auto model = fl::make_classifier(fl::ModelKind::kLogistic, env.data().shape);
  const Eigen::VectorXd q = fl::data_weights(env.data());
  std::vector<Eigen::VectorXd> gaps;
  Rng sched_rng = make_rng(108, "policy");
  Rng init = make_rng(108, "init");
  fl::ParamVector w = model->init_params(init);
  Rng sgd = make_rng(108, "sgd");
  for (int k = 0; k < 20; ++k) {
    gaps.push_back(fl::survey_gradients(*model, w, env.data(), q).gaps);
    std::vector<fl::ParamVector> locals;
    for (int u : sched::baseline_schedule(sched::BaselineKind::kFedAvg, env.snapshot(), sched_rng)) {
      const auto& shard = env.data().shards[u];
      locals.push_back(fl::local_update(*model, env.data(), w, shard, cfg.local_epochs, fl::learning_rate(k),
                                        fl::batch_size_for(shard.size()), sgd)
                           .params);
    }
    w = fl::aggregate(locals);
  }

  const int count = sched::fixed_count(cfg.n_users);
  Rng rng = make_rng(108, "rho");
  std::discrete_distribution<int> by_weight(q.data(), q.data() + q.size());
  double sum = 0.0;
  const int rounds = 10000;
  for (int i = 0; i < rounds; ++i) {
    std::vector<int> picked(count);
    for (int& u : picked) u = by_weight(rng);
    sum += *fl::selection_bias_rho(picked, gaps[i % gaps.size()], q);
  }
  const double mean = sum / rounds;

  double min_biased = std::numeric_limits<double>::infinity();
  for (const auto& g : gaps) {
    std::vector<int> order(cfg.n_users);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return g[a] > g[b]; });
    order.resize(count);
    min_biased = std::min(min_biased, *fl::selection_bias_rho(order, g, q));
  }
  return {std::abs(mean - 1.0) <= 0.02 && min_biased > 1.0,
          "unbiased mean rho " + fmt(mean, 5) + " over " + std::to_string(rounds) + " rounds; top-gap min rho " +
              fmt(min_biased) + " over " + std::to_string(gaps.size()) + " trials"};
}

Outcome physics(const SimConfig& cfg) {
  Rng rng = make_rng(109, "acceptance");
  double sum = 0.0;
  long draws = 0;
  while (draws < 100000) {
    const Eigen::VectorXd h = draw_harvest(cfg, rng);
    sum += h.sum();
    draws += h.size();
  }
  const double mean = sum / static_cast<double>(draws);

  long rounds = 0, mismatched = 0;
  for (const char* name : {"greedy", "fedavg", "max_gradient", "ascend"}) {
    for (int s = 0; s < 20; ++s) {
      sched::BaselineScheduler sch(sched::parse_baseline(name));
      const EpisodeResult r = run_episode(cfg, sch, bench_seed(cfg, s));
      for (const auto& rec : r.per_round) {
        ++rounds;
        const double straggler = rec.per_user_time_s.empty()
                                     ? 0.0
                                     : *std::max_element(rec.per_user_time_s.begin(), rec.per_user_time_s.end());
        if (rec.round_time_s != straggler) ++mismatched;
      }
    }
  }
  return {std::abs(mean - cfg.eh_mean_j) <= 0.05 * cfg.eh_mean_j && mismatched == 0,
          "harvest mean " + fmt(mean, 5) + " J over " + std::to_string(draws) + " draws (target " +
              fmt(cfg.eh_mean_j) + "); round time != straggler on " + std::to_string(mismatched) + " of " +
              std::to_string(rounds) + " rounds"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string workdir = "acceptance_out";
  std::vector<int> only;
  app.add_option("--workdir", workdir, "scratch directory for snapshots and CSVs");
  app.add_option("--only", only, "run only these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  const fs::path dir(workdir);
  fs::create_directories(dir);

  BenchRun bench_run;
  struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "water-filling oracle equivalence", 10, waterfill_oracle},
      {2, "brute-force allocation equivalence", 60, brute_force},
      {3, "equal completion-time spread", 60, equal_finish},
      {4, "constraint suite over a full bench", 900,
       [&] {
         BenchOptions b;
         b.schedulers = {"greedy", "fedavg", "max_gradient", "ascend"};
         b.seeds = 20;
         bench_run.rows = bench(default_config(), b);
         write_text_file(dir / "bench_baselines.csv", format_bench(bench_run.rows));
         return constraint_suite(bench_run);
       }},
      {5, "numerics", 600, numerics},
      {6, "PPO learning signal", 600, [&] { return learning_signal(dir); }},
      {7, "end-to-end scheduling benefit", 900, [&] { return scheduling_benefit(dir); }},
      {8, "selection-bias diagnostic", 600, selection_bias},
      {9, "Monte-Carlo physics", 600, [] { return physics(default_config()); }},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs <= c.budget_s;
    const bool pass = o.pass && in_time;
    failures += !pass;
    std::cout << "criterion " << c.id << " [" << (pass ? "PASS" : "FAIL") << "] " << c.name << ": " << o.detail << " ("
              << fmt(secs, 3) << " s" << (in_time ? "" : ", over the " + fmt(c.budget_s) + " s budget") << ")"
              << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
