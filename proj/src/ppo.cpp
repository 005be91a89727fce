#include "fedsched/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <stdexcept>

namespace fedsched::sched {

namespace {

double dconcentration(double raw) {
  return nn::softplus(raw) > 1e-12 ? nn::sigmoid(raw) : 0.0;
}

void clip_norm(Eigen::VectorXd& g, double max_norm) {
  if (max_norm <= 0.0) return;
  const double n = g.norm();
  if (n > max_norm) g *= max_norm / n;
}

bool all_finite(const Eigen::VectorXd& v) { return v.allFinite(); }

}  // namespace

BetaPolicy::BetaPolicy(int state_dim, int action_dim, int hidden)
    : actor_({state_dim, hidden, hidden, 2 * action_dim}), critic_({state_dim, hidden, hidden, 1}) {}

void BetaPolicy::init(Rng& rng, double output_gain) {
  actor_.init(rng, output_gain);
  critic_.init(rng, 1.0);
}

BetaParams BetaPolicy::heads(const Eigen::VectorXd& state) const {
  BetaParams h;
  h.raw = nn::forward(actor_, state);
  const int d = action_dim();
  h.alpha = h.raw.head(d).unaryExpr([](double r) { return nn::concentration(r); });
  h.beta = h.raw.tail(d).unaryExpr([](double r) { return nn::concentration(r); });
  return h;
}

double BetaPolicy::value(const Eigen::VectorXd& state) const { return nn::forward(critic_, state)[0]; }

ActSample BetaPolicy::act(const Eigen::VectorXd& state, Rng& rng) const {
  const BetaParams h = heads(state);
  ActSample s;
  s.action.resize(action_dim());
  for (int i = 0; i < action_dim(); ++i) {
    s.action[i] = nn::sample_beta(h.alpha[i], h.beta[i], rng);
    s.log_prob += nn::beta_logpdf(s.action[i], h.alpha[i], h.beta[i]);
  }
  s.value = value(state);
  return s;
}

Eigen::VectorXd BetaPolicy::mean_action(const Eigen::VectorXd& state) const {
  const BetaParams h = heads(state);
  return h.alpha.cwiseQuotient(h.alpha + h.beta);
}

double BetaPolicy::log_prob(const Eigen::VectorXd& state, const Eigen::VectorXd& action) const {
  const BetaParams h = heads(state);
  double lp = 0.0;
  for (int i = 0; i < action_dim(); ++i) lp += nn::beta_logpdf(action[i], h.alpha[i], h.beta[i]);
  return lp;
}

void BetaPolicy::save(const std::filesystem::path& actor_prefix, const std::filesystem::path& critic_prefix) const {
  nn::save_snapshot(actor_, actor_prefix);
  nn::save_snapshot(critic_, critic_prefix);
}

BetaPolicy BetaPolicy::load(const std::filesystem::path& actor_prefix,
                            const std::optional<std::filesystem::path>& critic_prefix) {
  BetaPolicy p;
  p.actor_ = nn::load_snapshot(actor_prefix);
  if (p.actor_.output_size() % 2 != 0) throw std::runtime_error("actor snapshot has an odd output size");
  if (critic_prefix) {
    p.critic_ = nn::load_snapshot(*critic_prefix);
    if (p.critic_.input_size() != p.actor_.input_size() || p.critic_.output_size() != 1)
      throw std::runtime_error("critic snapshot does not match the actor");
  } else {
    const auto& s = p.actor_.layer_sizes();
    std::vector<int> sizes(s.begin(), s.end() - 1);
    sizes.push_back(1);
    p.critic_ = nn::DenseNet(sizes);
  }
  return p;
}

Advantages compute_gae(const std::vector<Transition>& items, double gamma, double lambda, double last_value) {
  const auto n = static_cast<Eigen::Index>(items.size());
  Advantages out{Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n)};
  double next_value = last_value;
  double running = 0.0;
  for (Eigen::Index i = n - 1; i >= 0; --i) {
    const Transition& t = items[i];
    if (t.done) {
      next_value = t.truncated ? t.bootstrap_value : 0.0;
      running = 0.0;
    }
    const double delta = t.reward + gamma * next_value - t.value;
    running = delta + gamma * lambda * running;
    out.advantages[i] = running;
    out.returns[i] = running + t.value;
    next_value = t.value;
  }
  return out;
}

Surrogate clipped_surrogate(const Eigen::VectorXd& ratios, const Eigen::VectorXd& advantages, double clip) {
  const auto n = ratios.size();
  Surrogate s{0.0, Eigen::VectorXd::Zero(n)};
  if (n == 0) return s;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double r = ratios[i];
    const double a = advantages[i];
    const double clipped = std::clamp(r, 1.0 - clip, 1.0 + clip);
    s.objective += std::min(r * a, clipped * a);
    const bool saturated = (a > 0.0 && r > 1.0 + clip) || (a < 0.0 && r < 1.0 - clip);
    if (!saturated) s.dlogp[i] = r * a;
  }
  s.objective /= static_cast<double>(n);
  s.dlogp /= static_cast<double>(n);
  return s;
}

PpoAgent::PpoAgent(int n_users, const PpoHyper& hyper, Rng& init_rng)
    : policy_(state_size(n_users), action_size(n_users), hyper.hidden),
      hyper_(hyper),
      buffer_(hyper.buffer_size),
      shuffle_rng_(init_rng()) {
  policy_.init(init_rng, hyper.output_gain);
  actor_adam_ = nn::make_adam(policy_.actor().param_count());
  critic_adam_ = nn::make_adam(policy_.critic().param_count());
}

PpoAgent::PpoAgent(BetaPolicy policy, const PpoHyper& hyper, std::uint64_t shuffle_seed)
    : policy_(std::move(policy)), hyper_(hyper), buffer_(hyper.buffer_size), shuffle_rng_(shuffle_seed) {
  actor_adam_ = nn::make_adam(policy_.actor().param_count());
  critic_adam_ = nn::make_adam(policy_.critic().param_count());
}

std::optional<UpdateStats> PpoAgent::maybe_update() {
  if (!buffer_.full() || !buffer_.at_episode_boundary()) return std::nullopt;
  return update();
}

UpdateStats PpoAgent::update() {
  UpdateStats stats;
  const auto& items = buffer_.items();
  const int n = static_cast<int>(items.size());
  if (n == 0) return stats;

  const int sd = policy_.state_dim();
  const int ad = policy_.action_dim();
  Eigen::MatrixXd states(sd, n);
  Eigen::MatrixXd actions(ad, n);
  Eigen::VectorXd old_logp(n);
  for (int i = 0; i < n; ++i) {
    states.col(i) = items[i].state;
    actions.col(i) = items[i].action;
    old_logp[i] = items[i].log_prob;
  }
  const double last_value = items.back().done ? 0.0 : policy_.value(items.back().state);
  Advantages gae = compute_gae(items, hyper_.gamma, hyper_.gae_lambda, last_value);
  Eigen::VectorXd adv = gae.advantages;
  if (n > 1) {
    const double mean = adv.mean();
    const double sdev = std::sqrt((adv.array() - mean).square().sum() / (n - 1));
    adv = (adv.array() - mean) / (sdev + 1e-8);
  }

  const Eigen::VectorXd actor_backup = policy_.actor().params();
  const Eigen::VectorXd critic_backup = policy_.critic().params();
  const nn::AdamState actor_adam_backup = actor_adam_;
  const nn::AdamState critic_adam_backup = critic_adam_;

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  const int mb = std::max(1, hyper_.minibatch);
  bool bad = false;
  double objective_sum = 0.0;
  double value_sum = 0.0;

  for (int epoch = 0; epoch < hyper_.epochs && !bad; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng_);
    for (int start = 0; start < n && !bad; start += mb) {
      const int b = std::min(mb, n - start);
      Eigen::MatrixXd xs(sd, b);
      Eigen::MatrixXd as(ad, b);
      Eigen::VectorXd lp_old(b), adv_b(b), ret_b(b);
      for (int j = 0; j < b; ++j) {
        const int i = order[start + j];
        xs.col(j) = states.col(i);
        as.col(j) = actions.col(i);
        lp_old[j] = old_logp[i];
        adv_b[j] = adv[i];
        ret_b[j] = gae.returns[i];
      }

      nn::ForwardCache cache;
      const Eigen::MatrixXd raw = nn::forward(policy_.actor(), xs, cache);
      Eigen::VectorXd ratios(b);
      Eigen::MatrixXd dlogp_draw(2 * ad, b);
      for (int j = 0; j < b; ++j) {
        double lp = 0.0;
        for (int d = 0; d < ad; ++d) {
          const double ra = raw(d, j), rb = raw(ad + d, j);
          const double a = nn::concentration(ra), bb = nn::concentration(rb);
          lp += nn::beta_logpdf(as(d, j), a, bb);
          const auto [ga, gb] = nn::beta_logpdf_grad(as(d, j), a, bb);
          dlogp_draw(d, j) = ga * dconcentration(ra);
          dlogp_draw(ad + d, j) = gb * dconcentration(rb);
        }
        ratios[j] = std::exp(lp - lp_old[j]);
      }
      const Surrogate sur = clipped_surrogate(ratios, adv_b, hyper_.clip);
      // Minimize the negated objective.
      const Eigen::MatrixXd upstream = -(dlogp_draw.array().rowwise() * sur.dlogp.transpose().array()).matrix();
      Eigen::VectorXd g_actor = nn::backward(policy_.actor(), cache, upstream);

      nn::ForwardCache vcache;
      const Eigen::MatrixXd v = nn::forward(policy_.critic(), xs, vcache);
      const Eigen::RowVectorXd err = v.row(0) - ret_b.transpose();
      const double vloss = 0.5 * err.squaredNorm() / b;
      Eigen::VectorXd g_critic = nn::backward(policy_.critic(), vcache, err / b);

      if (!std::isfinite(sur.objective) || !std::isfinite(vloss) || !all_finite(g_actor) || !all_finite(g_critic)) {
        bad = true;
        break;
      }
      clip_norm(g_actor, hyper_.max_grad_norm);
      clip_norm(g_critic, hyper_.max_grad_norm);
      nn::adam_step(policy_.actor().params(), g_actor, actor_adam_, hyper_.lr);
      nn::adam_step(policy_.critic().params(), g_critic, critic_adam_, hyper_.lr);
      objective_sum += sur.objective;
      value_sum += vloss;
      ++stats.steps;
    }
  }
  if (!bad && (!all_finite(policy_.actor().params()) || !all_finite(policy_.critic().params()))) bad = true;

  if (bad) {
    policy_.actor().params() = actor_backup;
    policy_.critic().params() = critic_backup;
    actor_adam_ = actor_adam_backup;
    critic_adam_ = critic_adam_backup;
    stats.rolled_back = true;
    ++rollbacks_;
    std::cerr << "ppo: non-finite loss or gradient, update rolled back\n";
  } else {
    double kl = 0.0;
    for (int i = 0; i < n; ++i) kl += old_logp[i] - policy_.log_prob(states.col(i), actions.col(i));
    stats.kl = kl / n;
    if (stats.kl > hyper_.kl_warn) std::cerr << "ppo: KL estimate " << stats.kl << " exceeds " << hyper_.kl_warn << "\n";
    if (stats.steps > 0) {
      stats.policy_objective = objective_sum / stats.steps;
      stats.value_loss = value_sum / stats.steps;
    }
  }
  ++updates_;
  buffer_.clear();
  return stats;
}

std::vector<int> PpoScheduler::select(const EnvSnapshot& snapshot, Rng& rng) {
  const Eigen::VectorXd state = build_state(snapshot);
  const BetaPolicy& pol = agent_.policy();
  if (state.size() != pol.state_dim()) throw std::domain_error("ppo: policy was built for a different user count");
  ActSample s = pol.act(state, rng);
  if (training_) pending_ = Transition{state, s.action, s.log_prob, 0.0, s.value, false};
  return decode_action(split_action(s.action), snapshot.n_users());
}

void PpoScheduler::feedback(double reward, bool done, const EnvSnapshot* truncated_next) {
  if (!training_ || !pending_) return;
  pending_->reward = reward;
  pending_->done = done;
  if (done && truncated_next) {
    pending_->truncated = true;
    pending_->bootstrap_value = agent_.policy().value(build_state(*truncated_next));
  }
  agent_.buffer().push(std::move(*pending_));
  pending_.reset();
  if (done) agent_.maybe_update();
}

}  // namespace fedsched::sched
