#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "fedsched/mdp.hpp"
#include "fedsched/nn.hpp"
#include "fedsched/rng.hpp"

namespace fedsched::sched {

struct PpoHyper {
  double lr = 3e-4;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip = 0.2;
  int epochs = 10;
  int minibatch = 64;
  int buffer_size = 1000;
  int hidden = 64;
  double max_grad_norm = 0.5;
  double kl_warn = 1.0;
  double output_gain = 0.01;
};

/// Beta head parameters per action dimension.
struct BetaParams {
  Eigen::VectorXd raw;  // 2D actor outputs: raw alpha then raw beta
  Eigen::VectorXd alpha;
  Eigen::VectorXd beta;
};

struct ActSample {
  Eigen::VectorXd action;
  double log_prob = 0.0;
  double value = 0.0;
};

/// Actor (state -> 2D Beta concentrations) and critic (state -> value).
class BetaPolicy {
 public:
  BetaPolicy() = default;
  BetaPolicy(int state_dim, int action_dim, int hidden = 64);

  void init(Rng& rng, double output_gain = 0.01);

  [[nodiscard]] int state_dim() const { return actor_.input_size(); }
  [[nodiscard]] int action_dim() const { return actor_.output_size() / 2; }

  [[nodiscard]] BetaParams heads(const Eigen::VectorXd& state) const;
  [[nodiscard]] double value(const Eigen::VectorXd& state) const;
  [[nodiscard]] ActSample act(const Eigen::VectorXd& state, Rng& rng) const;
  [[nodiscard]] Eigen::VectorXd mean_action(const Eigen::VectorXd& state) const;
  [[nodiscard]] double log_prob(const Eigen::VectorXd& state, const Eigen::VectorXd& action) const;

  nn::DenseNet& actor() { return actor_; }
  nn::DenseNet& critic() { return critic_; }
  [[nodiscard]] const nn::DenseNet& actor() const { return actor_; }
  [[nodiscard]] const nn::DenseNet& critic() const { return critic_; }

  void save(const std::filesystem::path& actor_prefix, const std::filesystem::path& critic_prefix) const;
  /// The critic is optional for evaluation.
  static BetaPolicy load(const std::filesystem::path& actor_prefix,
                         const std::optional<std::filesystem::path>& critic_prefix = std::nullopt);

 private:
  nn::DenseNet actor_;
  nn::DenseNet critic_;
};

struct Transition {
  Eigen::VectorXd state;
  Eigen::VectorXd action;
  double log_prob = 0.0;
  double reward = 0.0;
  double value = 0.0;
  bool done = false;
  /// Episode cut by the round cap: the return bootstraps from `bootstrap_value`.
  bool truncated = false;
  double bootstrap_value = 0.0;
};

/// On-policy rollout storage. Updates happen only at episode boundaries once
/// the buffer holds at least `capacity` transitions.
class PpoBuffer {
 public:
  explicit PpoBuffer(int capacity = 1000) : capacity_(capacity) {}
  void push(Transition t) { items_.push_back(std::move(t)); }
  void clear() { items_.clear(); }
  [[nodiscard]] int size() const { return static_cast<int>(items_.size()); }
  [[nodiscard]] int capacity() const { return capacity_; }
  [[nodiscard]] bool full() const { return size() >= capacity_; }
  [[nodiscard]] bool at_episode_boundary() const { return items_.empty() || items_.back().done; }
  [[nodiscard]] const std::vector<Transition>& items() const { return items_; }

 private:
  int capacity_;
  std::vector<Transition> items_;
};

struct Advantages {
  Eigen::VectorXd advantages;
  Eigen::VectorXd returns;
};

/// Generalized advantage estimates. A trailing non-terminal transition
/// bootstraps from `last_value`, a truncated one from its own bootstrap value.
Advantages compute_gae(const std::vector<Transition>& items, double gamma, double lambda, double last_value = 0.0);

/// Clipped surrogate objective (to maximize) for given ratios and advantages,
/// and its derivative w.r.t. each sample's log-probability.
struct Surrogate {
  double objective = 0.0;
  Eigen::VectorXd dlogp;
};
Surrogate clipped_surrogate(const Eigen::VectorXd& ratios, const Eigen::VectorXd& advantages, double clip);

struct UpdateStats {
  bool rolled_back = false;
  double kl = 0.0;
  double policy_objective = 0.0;
  double value_loss = 0.0;
  int steps = 0;
};

/// Policy plus optimizer state.
class PpoAgent {
 public:
  /// Fresh agent for N users (state 5N+1, action N+1).
  PpoAgent(int n_users, const PpoHyper& hyper, Rng& init_rng);
  PpoAgent(BetaPolicy policy, const PpoHyper& hyper, std::uint64_t shuffle_seed = 0);

  BetaPolicy& policy() { return policy_; }
  [[nodiscard]] const BetaPolicy& policy() const { return policy_; }
  PpoBuffer& buffer() { return buffer_; }
  [[nodiscard]] const PpoHyper& hyper() const { return hyper_; }
  [[nodiscard]] int updates() const { return updates_; }
  [[nodiscard]] int rollbacks() const { return rollbacks_; }

  /// Runs an update when the buffer is full at an episode boundary, then
  /// clears it. Returns nothing when no update was due.
  std::optional<UpdateStats> maybe_update();
  /// Unconditional update on the current buffer contents, then clears it.
  UpdateStats update();

 private:
  BetaPolicy policy_;
  PpoHyper hyper_;
  PpoBuffer buffer_;
  nn::AdamState actor_adam_;
  nn::AdamState critic_adam_;
  Rng shuffle_rng_;
  int updates_ = 0;
  int rollbacks_ = 0;
};

/// Wraps a PpoAgent as a Scheduler. Actions are always sampled from the
/// policy; in training mode the transitions also go to the agent.
class PpoScheduler final : public Scheduler {
 public:
  PpoScheduler(PpoAgent& agent, bool training) : agent_(agent), training_(training) {}
  std::vector<int> select(const EnvSnapshot& snapshot, Rng& rng) override;
  void feedback(double reward, bool done, const EnvSnapshot* truncated_next = nullptr) override;
  [[nodiscard]] std::string name() const override { return "ppo"; }
  void set_training(bool on) { training_ = on; }

 private:
  PpoAgent& agent_;
  bool training_;
  std::optional<Transition> pending_;
};

}  // namespace fedsched::sched
