#include "fedsched/env.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fedsched {

FlEnvironment::FlEnvironment(const SimConfig& cfg, std::uint64_t seed, EnvOptions opt)
    : cfg_(cfg),
      seed_(seed),
      opt_(opt),
      channel_rng_(make_rng(seed, "channel")),
      energy_rng_(make_rng(seed, "energy")) {
  validate(cfg_);
  Rng data_rng = make_rng(seed, "data");
  data_ = fl::generate_noniid(cfg_, data_rng, opt_.task);
  model_ = fl::make_classifier(opt_.model, data_.shape);
  Rng init_rng = make_rng(seed, "init");
  global_ = model_->init_params(init_rng);

  const int n = cfg_.n_users;
  std::vector<double> bits(n);
  for (int i = 0; i < n; ++i)
    bits[i] = fl::batch_bits(fl::batch_size_for(data_.shards[i].size()), data_.shape.n_features);
  Rng profile_rng = make_rng(seed, "profile");
  profiles_ = draw_profiles(cfg_, bits, profile_rng);
  comp_cycles_.resize(n);
  for (int i = 0; i < n; ++i) comp_cycles_[i] = cfg_.local_epochs * profiles_[i].cycles_per_bit * profiles_[i].batch_bits;

  weights_ = fl::data_weights(data_);
  energy_ = initial_energy(cfg_, energy_rng_);
  divergence_ = Eigen::VectorXd::Zero(n);
  grad_norms_ = Eigen::VectorXd::Ones(n);
  accuracy_ = fl::evaluate_accuracy(*model_, global_, data_);
  channel_ = draw_channel(profiles_, cfg_, channel_rng_);
}

sched::EnvSnapshot FlEnvironment::snapshot() const {
  const int n = cfg_.n_users;
  sched::EnvSnapshot s;
  s.round = round_;
  s.max_rounds = cfg_.max_rounds;
  s.gain = channel_.gain;
  s.cnr = channel_.cnr;
  s.comp_cycles = comp_cycles_;
  s.f_min_hz.resize(n);
  s.f_max_hz.resize(n);
  for (int i = 0; i < n; ++i) {
    s.f_min_hz[i] = profiles_[i].f_min_hz;
    s.f_max_hz[i] = profiles_[i].f_max_hz;
  }
  s.divergence = divergence_;
  s.budgets_j = energy_.budgets_j;
  s.grad_norms = grad_norms_;
  s.accuracy = accuracy_;
  s.target_accuracy = cfg_.target_accuracy;
  s.e_max_j = cfg_.e_max_j;
  s.f_ref_hz = cfg_.f_max_hz;
  s.p_max_w = cfg_.p_max_w;
  s.bandwidth_hz = cfg_.bandwidth_hz;
  s.model_bits = cfg_.model_bits;
  return s;
}

alloc::AllocProblem FlEnvironment::make_problem(const std::vector<int>& users) const {
  alloc::AllocProblem p;
  const auto v = static_cast<Eigen::Index>(users.size());
  p.users = users;
  p.cnr.resize(v, channel_.cnr.cols());
  p.comp_cycles.resize(v);
  p.budgets_j.resize(v);
  p.pathloss_db.resize(v);
  for (Eigen::Index r = 0; r < v; ++r) {
    const int u = users[r];
    p.cnr.row(r) = channel_.cnr.row(u);
    p.comp_cycles[r] = comp_cycles_[u];
    p.budgets_j[r] = energy_.budgets_j[u];
    p.pathloss_db[r] = profiles_[u].pathloss_db();
  }
  p.p_max_w = cfg_.p_max_w;
  p.f_min_hz = cfg_.f_min_hz;
  p.f_max_hz = cfg_.f_max_hz;
  p.model_bits = cfg_.model_bits;
  p.bandwidth_hz = cfg_.bandwidth_hz;
  p.kappa = cfg_.kappa;
  return p;
}

StepResult FlEnvironment::step(const std::vector<int>& scheduled_in) {
  if (round_ >= cfg_.max_rounds) throw std::logic_error("FlEnvironment::step: round cap already reached");
  const int n = cfg_.n_users;
  std::vector<int> scheduled = scheduled_in;
  std::sort(scheduled.begin(), scheduled.end());
  scheduled.erase(std::unique(scheduled.begin(), scheduled.end()), scheduled.end());
  if (scheduled.empty()) throw std::domain_error("FlEnvironment::step: empty user set");
  if (scheduled.front() < 0 || scheduled.back() >= n) throw std::domain_error("FlEnvironment::step: user id out of range");

  StepResult out;
  RoundRecord& rec = out.record;
  rec.round = round_;
  rec.scheduled = scheduled;
  rec.per_user_time_s.assign(scheduled.size(), 0.0);
  rec.per_user_energy_j.assign(scheduled.size(), 0.0);

  // The harvest and the next channel are drawn whatever happens, so every
  // scheduler sees the same exogenous sequence.
  const Eigen::VectorXd harvest = draw_harvest(cfg_, energy_rng_);
  auto advance = [&](const Eigen::VectorXd& spent) {
    energy_ = advance_energy(energy_, spent, harvest, cfg_.e_max_j);
    ++round_;
    channel_ = draw_channel(profiles_, cfg_, channel_rng_);
  };

  const alloc::AllocProblem full = make_problem(scheduled);
  const alloc::Screening screen = alloc::feasibility_screen(full);
  for (int r : screen.dropped_rows) rec.dropped.push_back(scheduled[r]);

  alloc::RoundAllocation a;
  alloc::AllocProblem prob;
  try {
    if (screen.feasible_rows.empty()) throw alloc::EmptyRoundError("every scheduled user failed the feasibility screen");
    prob = full.subset(screen.feasible_rows);
    alloc::AdoOptions ado;
    ado.solver = opt_.solver;
    a = alloc::ado_optimize(prob, ado);
  } catch (const alloc::EmptyRoundError& e) {
    out.aborted = true;
    out.abort_reason = e.what();
  } catch (const alloc::InfeasibleRoundError& e) {
    out.aborted = true;
    out.abort_reason = e.what();
  }
  if (out.aborted) {
    rec.dropped = scheduled;
    rec.accuracy = accuracy_;
    advance(Eigen::VectorXd::Zero(n));
    return out;
  }

  for (int id : a.dropped) rec.dropped.push_back(id);
  std::sort(rec.dropped.begin(), rec.dropped.end());
  out.violation_messages = alloc::check_allocation(prob, a);
  out.violations = static_cast<int>(out.violation_messages.size());
  if (opt_.debug_alloc) out.alloc_json = alloc::allocation_to_json(prob, a);

  const std::vector<int> rows = a.active_rows();
  const Eigen::VectorXd finish = a.finish_times();
  Eigen::VectorXd spent = Eigen::VectorXd::Zero(n);
  std::vector<double> active_times;
  std::vector<int> active_ids;
  for (int r : rows) {
    const int u = prob.users[r];
    active_ids.push_back(u);
    active_times.push_back(finish[r]);
    double e = a.e_cp_j[r] + a.e_cm_j[r];
    if (e > energy_.budgets_j[u] + kEnergyTolJ) {
      ++out.battery_negative_events;
      e = energy_.budgets_j[u];
    }
    spent[u] = e;
    const auto pos = std::lower_bound(scheduled.begin(), scheduled.end(), u) - scheduled.begin();
    rec.per_user_time_s[pos] = finish[r];
    rec.per_user_energy_j[pos] = a.e_cp_j[r] + a.e_cm_j[r];
  }
  rec.round_time_s = round_time(active_times);

  if (opt_.survey_bias) {
    const fl::GradientSurvey survey = fl::survey_gradients(*model_, global_, data_, weights_);
    rec.selection_bias = fl::selection_bias_rho(active_ids, survey.gaps, weights_);
  }

  // Local training and aggregation.
  const double lr = fl::learning_rate(round_);
  std::vector<fl::ParamVector> locals;
  locals.reserve(active_ids.size());
  for (int u : active_ids) {
    Rng sgd = make_rng(derive_seed(seed_, static_cast<std::uint64_t>(round_) * n + u), "sgd");
    const auto& shard = data_.shards[u];
    fl::LocalUpdateResult res =
        fl::local_update(*model_, data_, global_, shard, cfg_.local_epochs, lr, fl::batch_size_for(shard.size()), sgd);
    grad_norms_[u] = res.last_grad_norm;
    rec.max_grad_norm = std::max(rec.max_grad_norm, res.last_grad_norm);
    locals.push_back(std::move(res.params));
  }
  const fl::ParamVector start = global_;
  const bool start_nonzero = start.norm() > 0.0;
  for (std::size_t i = 0; i < active_ids.size(); ++i)
    divergence_[active_ids[i]] = start_nonzero ? fl::divergence_entry(locals[i], start) : 0.0;
  global_ = fl::aggregate(locals);
  accuracy_ = fl::evaluate_accuracy(*model_, global_, data_);
  rec.accuracy = accuracy_;
  rec.reward = -rec.round_time_s;

  advance(spent);
  return out;
}

}  // namespace fedsched
