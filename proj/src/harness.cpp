#include "fedsched/harness.hpp"

#include <algorithm>
#include <atomic>
#include <iostream>
#include <sstream>
#include <limits>
#include <mutex>
#include <thread>

#include "fedsched/baselines.hpp"

namespace fedsched {

EpisodeResult run_episode(const SimConfig& cfg, sched::Scheduler& scheduler, std::uint64_t seed,
                          const EnvOptions& opt) {
  FlEnvironment env(cfg, seed, opt);
  Rng policy_rng = make_rng(seed, "policy");
  EpisodeResult res;
  double rewards = 0.0;
  // At least one round runs even if the initial model already meets the target.
  do {
    const sched::EnvSnapshot snap = env.snapshot();
    const std::vector<int> users = scheduler.select(snap, policy_rng);
    StepResult step = env.step(users);
    res.violations += step.violations;
    res.battery_negative_events += step.battery_negative_events;
    for (const auto& msg : step.violation_messages) std::cerr << "round " << step.record.round << ": " << msg << "\n";
    if (!step.alloc_json.empty()) res.alloc_dumps.push_back(std::move(step.alloc_json));
    if (step.aborted) {
      res.aborted = true;
      res.abort_reason = step.abort_reason;
      const double penalty = -cfg.max_rounds * kAbortPenaltyRoundS;
      step.record.reward = penalty - rewards;
      scheduler.feedback(step.record.reward, true);
      res.per_round.push_back(std::move(step.record));
      res.episode_return = penalty;
      break;
    }
    const double r = sched::reward(step.record.round_time_s);
    step.record.reward = r;
    rewards += r;
    if (env.finished() && !env.target_reached()) {
      const sched::EnvSnapshot next = env.snapshot();
      scheduler.feedback(r, true, &next);
    } else {
      scheduler.feedback(r, env.finished());
    }
    res.per_round.push_back(std::move(step.record));
    res.episode_return = rewards;
  } while (!env.finished());

  res.rounds_used = static_cast<int>(res.per_round.size());
  for (const auto& rec : res.per_round) res.total_wallclock_s += rec.round_time_s;
  res.final_accuracy = env.accuracy();
  res.reached_target = !res.aborted && env.target_reached();
  return res;
}

std::string format_curve(const std::vector<CurvePoint>& curve) {
  std::ostringstream os;
  os << kCurveCsvHeader << "\n";
  for (const auto& p : curve)
    os << p.episode << "," << format_double(p.episode_return) << "," << p.rounds << ","
       << format_double(p.final_accuracy) << "\n";
  return os.str();
}

TrainResult train_agent(const SimConfig& cfg, const TrainOptions& opt) {
  if (opt.episodes < 1) throw std::domain_error("train_agent: episodes must be >= 1");
  Rng init_rng = make_rng(cfg.rng_seed, "agent");
  sched::PpoAgent agent(cfg.n_users, opt.hyper, init_rng);
  sched::PpoScheduler scheduler(agent, true);

  TrainResult out;
  out.best_policy = agent.policy();
  double best_avg = -std::numeric_limits<double>::infinity();
  for (int e = 0; e < opt.episodes; ++e) {
    const EpisodeResult r = run_episode(cfg, scheduler, derive_seed(cfg.rng_seed, static_cast<std::uint64_t>(e)), opt.env);
    out.curve.push_back({e, r.episode_return, r.rounds_used, r.final_accuracy});
    const int w = std::min<int>(std::max(1, opt.best_window), static_cast<int>(out.curve.size()));
    double avg = 0.0;
    for (int i = static_cast<int>(out.curve.size()) - w; i < static_cast<int>(out.curve.size()); ++i)
      avg += out.curve[i].episode_return;
    avg /= w;
    if (avg > best_avg) {
      best_avg = avg;
      out.best_policy = agent.policy();
    }
    if (opt.verbose)
      std::cerr << "episode " << e << " return " << r.episode_return << " rounds " << r.rounds_used << " acc "
                << r.final_accuracy << (r.aborted ? " aborted" : "") << "\n";
  }
  out.final_policy = agent.policy();
  out.updates = agent.updates();
  out.rollbacks = agent.rollbacks();

  if (opt.out_dir) {
    write_text_file(*opt.out_dir / "curve.csv", format_curve(out.curve));
    out.best_policy.save(*opt.out_dir / "best_actor", *opt.out_dir / "best_critic");
    out.final_policy.save(*opt.out_dir / "final_actor", *opt.out_dir / "final_critic");
  }
  return out;
}

std::uint64_t bench_seed(const SimConfig& cfg, int seed_index) {
  return derive_seed(cfg.rng_seed, 1'000'000ULL + static_cast<std::uint64_t>(seed_index));
}

namespace {

struct Cell {
  std::string scheduler;
  int seed_index = 0;
  SimConfig cfg;
};

sched::BetaPolicy load_policy(const BenchOptions& opt, const SimConfig& cfg) {
  if (!opt.snapshot) throw ConfigError("bench: scheduler 'ppo' needs a trained snapshot");
  sched::BetaPolicy pol;
  try {
    pol = sched::BetaPolicy::load(*opt.snapshot);
  } catch (const std::exception& e) {
    throw ConfigError("bench: cannot load snapshot " + opt.snapshot->string() + ": " + e.what());
  }
  if (pol.state_dim() != sched::state_size(cfg.n_users) || pol.action_dim() != sched::action_size(cfg.n_users))
    throw ConfigError("bench: snapshot was trained for a different number of users");
  return pol;
}

}  // namespace

std::vector<BenchRow> bench(const SimConfig& cfg, const BenchOptions& opt) {
  if (!opt.sweep_a.empty() && !opt.sweep_target.empty())
    throw ConfigError("bench: sweep either a or target, not both");
  if (opt.seeds < 1) throw ConfigError("bench: need at least one seed");

  std::optional<sched::BetaPolicy> policy;
  for (const auto& name : opt.schedulers) {
    if (name == "ppo") {
      if (!policy) policy = load_policy(opt, cfg);
    } else {
      sched::parse_baseline(name);
    }
  }

  std::vector<SimConfig> points;
  if (!opt.sweep_a.empty()) {
    for (double a : opt.sweep_a) {
      SimConfig c = cfg;
      c.noniid_ratio = a;
      validate(c);
      points.push_back(c);
    }
  } else if (!opt.sweep_target.empty()) {
    for (double t : opt.sweep_target) {
      SimConfig c = cfg;
      c.target_accuracy = t;
      validate(c);
      points.push_back(c);
    }
  } else {
    points.push_back(cfg);
  }

  std::vector<Cell> cells;
  for (const auto& name : opt.schedulers)
    for (const auto& point : points)
      for (int s = 0; s < opt.seeds; ++s) cells.push_back({name, s, point});

  std::vector<BenchRow> rows(cells.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      try {
        const Cell& c = cells[i];
        const std::uint64_t seed = bench_seed(cfg, c.seed_index);
        EpisodeResult r;
        if (c.scheduler == "ppo") {
          sched::PpoAgent agent(*policy, sched::PpoHyper{});
          sched::PpoScheduler s(agent, false);
          r = run_episode(c.cfg, s, seed, opt.env);
        } else {
          sched::BaselineScheduler s(sched::parse_baseline(c.scheduler));
          r = run_episode(c.cfg, s, seed, opt.env);
        }
        rows[i] = {c.scheduler, static_cast<std::uint64_t>(c.seed_index), c.cfg.noniid_ratio, c.cfg.target_accuracy,
                   r.rounds_used, r.total_wallclock_s, r.reached_target, r.violations, r.battery_negative_events,
                   r.aborted};
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  unsigned n_threads = opt.threads > 0 ? static_cast<unsigned>(opt.threads) : std::max(1u, std::thread::hardware_concurrency());
  n_threads = std::min<unsigned>(n_threads, static_cast<unsigned>(std::max<std::size_t>(1, cells.size())));
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return rows;
}

std::string format_bench(const std::vector<BenchRow>& rows) {
  std::ostringstream os;
  os << kBenchCsvHeader << "\n";
  for (const auto& r : rows)
    os << r.scheduler << "," << r.seed << "," << format_double(r.a) << "," << format_double(r.target) << ","
       << r.rounds << "," << format_double(r.wallclock_s) << "," << (r.reached ? 1 : 0) << "\n";
  return os.str();
}

std::map<std::string, double> median_wallclock(const std::vector<BenchRow>& rows, bool unreached_as_inf) {
  std::map<std::string, std::vector<double>> by;
  for (const auto& r : rows)
    by[r.scheduler].push_back(unreached_as_inf && !r.reached ? std::numeric_limits<double>::infinity() : r.wallclock_s);
  std::map<std::string, double> out;
  for (auto& [name, v] : by) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    out[name] = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  }
  return out;
}

}  // namespace fedsched
