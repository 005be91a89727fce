#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "fedsched/rng.hpp"

namespace fedsched::nn {

/// Fully connected net: tanh on hidden layers, linear output. All weights and
/// biases live in one flat parameter vector, layer by layer, each layer stored
/// as a column-major (out x in) weight block followed by its bias.
class DenseNet {
 public:
  DenseNet() = default;
  explicit DenseNet(std::vector<int> layer_sizes);

  [[nodiscard]] const std::vector<int>& layer_sizes() const { return sizes_; }
  [[nodiscard]] int n_layers() const { return static_cast<int>(sizes_.size()) - 1; }
  [[nodiscard]] int input_size() const { return sizes_.front(); }
  [[nodiscard]] int output_size() const { return sizes_.back(); }
  [[nodiscard]] Eigen::Index param_count() const { return params_.size(); }

  Eigen::VectorXd& params() { return params_; }
  [[nodiscard]] const Eigen::VectorXd& params() const { return params_; }

  [[nodiscard]] Eigen::Map<const Eigen::MatrixXd> weight(int layer) const;
  [[nodiscard]] Eigen::Map<const Eigen::VectorXd> bias(int layer) const;
  Eigen::Map<Eigen::MatrixXd> weight(int layer);
  Eigen::Map<Eigen::VectorXd> bias(int layer);

  /// Glorot-uniform weights, zero biases; the last layer is scaled by `output_gain`.
  void init(Rng& rng, double output_gain = 1.0);

 private:
  std::vector<int> sizes_;
  std::vector<Eigen::Index> offsets_;
  Eigen::VectorXd params_;
};

/// Post-activation values of every layer for a batch (columns are samples).
struct ForwardCache {
  std::vector<Eigen::MatrixXd> activations;
};

Eigen::MatrixXd forward(const DenseNet& net, const Eigen::Ref<const Eigen::MatrixXd>& inputs, ForwardCache& cache);
Eigen::MatrixXd forward_batch(const DenseNet& net, const Eigen::Ref<const Eigen::MatrixXd>& inputs);
Eigen::VectorXd forward(const DenseNet& net, const Eigen::Ref<const Eigen::VectorXd>& input);

/// Gradient of sum_columns <upstream, output> w.r.t. the parameters.
Eigen::VectorXd backward(const DenseNet& net, const ForwardCache& cache,
                         const Eigen::Ref<const Eigen::MatrixXd>& upstream);
Eigen::VectorXd backward(const DenseNet& net, const Eigen::Ref<const Eigen::VectorXd>& input,
                         const Eigen::Ref<const Eigen::VectorXd>& upstream);

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

AdamState make_adam(Eigen::Index n);

/// In-place bias-corrected Adam update.
void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grads, AdamState& state, double lr);

// --- Beta distribution head --------------------------------------------------

template <typename Scalar>
Scalar softplus(Scalar x) {
  using std::exp;
  using std::log1p;
  return x > Scalar(30) ? x : log1p(exp(x));
}

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  using std::exp;
  return Scalar(1) / (Scalar(1) + exp(-x));
}

/// Concentration > 1 from an unconstrained output.
template <typename Scalar>
Scalar concentration(Scalar raw) {
  using std::max;
  return Scalar(1) + max(softplus(raw), Scalar(1e-12));
}

template <typename Scalar>
Scalar digamma(Scalar x) {
  using std::log;
  Scalar acc(0);
  while (x < Scalar(10)) {
    acc -= Scalar(1) / x;
    x += Scalar(1);
  }
  const Scalar inv = Scalar(1) / x;
  const Scalar inv2 = inv * inv;
  const Scalar tail =
      Scalar(1) / 252 -
      inv2 * (Scalar(1) / 240 - inv2 * (Scalar(1) / 132 - inv2 * (Scalar(691) / 32760)));
  return acc + log(x) - Scalar(0.5) * inv - inv2 * (Scalar(1) / 12 - inv2 * (Scalar(1) / 120 - inv2 * tail));
}

template <typename Scalar>
Scalar log_beta_fn(Scalar a, Scalar b) {
  using std::lgamma;
  return lgamma(a) + lgamma(b) - lgamma(a + b);
}

template <typename Scalar>
Scalar beta_logpdf(Scalar x, Scalar a, Scalar b) {
  using std::log;
  using std::log1p;
  if (!(x > Scalar(0) && x < Scalar(1))) throw std::domain_error("beta_logpdf: x must lie in (0,1)");
  if (!(a > Scalar(0) && b > Scalar(0))) throw std::domain_error("beta_logpdf: concentrations must be positive");
  return (a - 1) * log(x) + (b - 1) * log1p(-x) - log_beta_fn(a, b);
}

/// d/da and d/db of beta_logpdf.
template <typename Scalar>
std::pair<Scalar, Scalar> beta_logpdf_grad(Scalar x, Scalar a, Scalar b) {
  using std::log;
  using std::log1p;
  const Scalar common = digamma(a + b);
  return {log(x) - digamma(a) + common, log1p(-x) - digamma(b) + common};
}

inline constexpr double kBetaSampleEps = 1e-9;

/// Gamma-ratio sampler, clamped strictly inside (0,1).
double sample_beta(double a, double b, Rng& rng);

inline double beta_mean(double a, double b) { return a / (a + b); }

// --- Snapshots ---------------------------------------------------------------

/// Writes `<prefix>.bin` (little-endian float64 parameters) and `<prefix>.json`
/// ({"layer_sizes": [...]}).
void save_snapshot(const DenseNet& net, const std::filesystem::path& prefix);
DenseNet load_snapshot(const std::filesystem::path& prefix);

}  // namespace fedsched::nn
