#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fedsched/baselines.hpp"
#include "fedsched/config.hpp"
#include "fedsched/harness.hpp"
#include "fedsched/records.hpp"

namespace fs = std::filesystem;
using namespace fedsched;

namespace {

struct Common {
  std::string config;
  std::string alloc = "lcra";
  bool debug_alloc = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON experiment config")->required()->check(CLI::ExistingFile);
  cmd->add_option("--alloc", c.alloc, "inner resource allocator")->check(CLI::IsMember({"ldra", "lcra"}));
  cmd->add_flag("--debug-alloc", c.debug_alloc, "dump the per-round allocation as JSON");
}

EnvOptions env_options(const Common& c) {
  EnvOptions opt;
  opt.solver = c.alloc == "ldra" ? alloc::Solver::kLdra : alloc::Solver::kLcra;
  opt.debug_alloc = c.debug_alloc;
  return opt;
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

void print_summary(const std::string& name, const EpisodeResult& r) {
  std::cout << name << ": rounds=" << r.rounds_used << " wallclock_s=" << format_double(r.total_wallclock_s)
            << " reached=" << (r.reached_target ? 1 : 0) << " final_accuracy=" << format_double(r.final_accuracy)
            << " return=" << format_double(r.episode_return);
  if (r.aborted) std::cout << " aborted (" << r.abort_reason << ")";
  std::cout << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Wireless federated learning scheduling simulator"};
  app.require_subcommand(1);

  Common train_c;
  int episodes = 300;
  std::string train_out;
  bool verbose = false;
  auto* train = app.add_subcommand("train", "train the PPO scheduler");
  add_common(train, train_c);
  train->add_option("--episodes", episodes, "training episodes")->check(CLI::PositiveNumber);
  train->add_option("--out", train_out, "output directory")->required();
  train->add_flag("--verbose", verbose, "log every episode to stderr");

  Common run_c;
  std::string scheduler;
  std::string snapshot;
  std::string run_out;
  std::optional<std::uint64_t> run_seed;
  auto* run = app.add_subcommand("run", "play one episode");
  add_common(run, run_c);
  run->add_option("--scheduler", scheduler, "ppo, greedy, fedavg, max_gradient or ascend")->required();
  run->add_option("--snapshot", snapshot, "actor snapshot prefix (ppo only)");
  run->add_option("--out", run_out, "directory for the round CSV and allocation dumps");
  run->add_option("--seed", run_seed, "environment seed (default: the config's rng_seed)");

  Common bench_c;
  std::string schedulers;
  int seeds = 20;
  std::vector<double> sweep_a, sweep_target;
  std::string bench_out;
  std::string bench_snapshot;
  int threads = 0;
  auto* bench_cmd = app.add_subcommand("bench", "compare schedulers across seeds");
  add_common(bench_cmd, bench_c);
  bench_cmd->add_option("--schedulers", schedulers, "comma-separated scheduler list")->required();
  bench_cmd->add_option("--seeds", seeds, "seeds per cell")->check(CLI::PositiveNumber);
  auto* sa = bench_cmd->add_option("--sweep-a", sweep_a, "non-IID ratios")->delimiter(',');
  auto* st = bench_cmd->add_option("--sweep-target", sweep_target, "target accuracies")->delimiter(',');
  sa->excludes(st);
  bench_cmd->add_option("--snapshot", bench_snapshot, "actor snapshot prefix (needed for ppo)");
  bench_cmd->add_option("--out", bench_out, "output directory")->required();
  bench_cmd->add_option("--threads", threads, "worker threads (0: all cores)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      const SimConfig cfg = load_config(train_c.config);
      TrainOptions opt;
      opt.episodes = episodes;
      opt.env = env_options(train_c);
      opt.out_dir = fs::path(train_out);
      opt.verbose = verbose;
      const TrainResult r = train_agent(cfg, opt);
      std::cout << "trained " << r.curve.size() << " episodes, " << r.updates << " updates, " << r.rollbacks
                << " rollbacks; snapshots in " << train_out << "\n";
    } else if (*run) {
      const SimConfig cfg = load_config(run_c.config);
      std::unique_ptr<sched::Scheduler> s;
      std::unique_ptr<sched::PpoAgent> agent;
      if (scheduler == "ppo") {
        if (snapshot.empty()) throw ConfigError("run: scheduler 'ppo' needs --snapshot");
        sched::BetaPolicy pol;
        try {
          pol = sched::BetaPolicy::load(snapshot);
        } catch (const std::exception& e) {
          throw ConfigError("run: cannot load snapshot " + snapshot + ": " + e.what());
        }
        if (pol.state_dim() != sched::state_size(cfg.n_users))
          throw ConfigError("run: snapshot was trained for a different number of users");
        agent = std::make_unique<sched::PpoAgent>(std::move(pol), sched::PpoHyper{});
        s = std::make_unique<sched::PpoScheduler>(*agent, false);
      } else {
        s = std::make_unique<sched::BaselineScheduler>(sched::parse_baseline(scheduler));
      }
      const EpisodeResult r = run_episode(cfg, *s, run_seed.value_or(cfg.rng_seed), env_options(run_c));
      print_summary(scheduler, r);
      if (!run_out.empty()) {
        write_round_records(r.per_round, fs::path(run_out) / "rounds.csv");
        for (std::size_t k = 0; k < r.alloc_dumps.size(); ++k)
          write_text_file(fs::path(run_out) / ("alloc_round_" + std::to_string(k) + ".json"), r.alloc_dumps[k]);
      } else {
        for (const auto& dump : r.alloc_dumps) std::cerr << dump << "\n";
      }
    } else if (*bench_cmd) {
      const SimConfig cfg = load_config(bench_c.config);
      BenchOptions opt;
      opt.schedulers = split_csv(schedulers);
      if (opt.schedulers.empty()) throw ConfigError("bench: empty scheduler list");
      opt.seeds = seeds;
      opt.sweep_a = sweep_a;
      opt.sweep_target = sweep_target;
      if (!bench_snapshot.empty()) opt.snapshot = fs::path(bench_snapshot);
      opt.env = env_options(bench_c);
      opt.env.debug_alloc = false;
      opt.threads = threads;
      const auto rows = bench(cfg, opt);
      write_text_file(fs::path(bench_out) / "bench.csv", format_bench(rows));
      for (const auto& [name, med] : median_wallclock(rows))
        std::cout << name << " median_wallclock_s=" << format_double(med) << "\n";
    }
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "invalid config: " << e.what() << "\n";
    return 2;
  } catch (const std::domain_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
