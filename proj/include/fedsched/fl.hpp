#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "fedsched/config.hpp"
#include "fedsched/nn.hpp"
#include "fedsched/rng.hpp"

namespace fedsched::fl {

using ParamVector = Eigen::VectorXd;

/// Local SGD produced a non-finite weight.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(int epoch, const std::string& what) : std::runtime_error(what), epoch_(epoch) {}
  [[nodiscard]] int epoch() const { return epoch_; }

 private:
  int epoch_;
};

struct TaskShape {
  int n_classes = 10;
  int n_features = 32;
  /// Std-dev of the class-mean prior; unit-variance noise around each mean.
  double class_separation = 0.7;
  /// Multiplies every feature; sets the loss curvature and so the number of rounds to converge.
  double feature_scale = 0.1;
};

/// Gaussian-cluster classification data. Samples are stored as columns.
struct SyntheticDataset {
  TaskShape shape;
  Eigen::MatrixXd features;  // F x D
  std::vector<int> labels;
  std::vector<std::vector<int>> shards;  // per-user sample indices
  std::vector<int> dominant_class;       // -1 when the shard has none
  Eigen::MatrixXd test_features;         // held-out, class-balanced
  std::vector<int> test_labels;

  [[nodiscard]] std::size_t n_users() const { return shards.size(); }
};

/// Each user gets D_n ~ U[samples_range]; floor(a D_n) samples from its dominant
/// class (round-robin over classes) and the rest uniformly from the others.
/// With a = 0 every sample's class is uniform over all classes. The held-out
/// set is 20% of all generated samples.
SyntheticDataset generate_noniid(const SimConfig& cfg, Rng& rng, const TaskShape& shape = {});

/// Differentiable classifier over a flat parameter vector.
class Classifier {
 public:
  virtual ~Classifier() = default;
  [[nodiscard]] virtual Eigen::Index param_count() const = 0;
  [[nodiscard]] virtual ParamVector init_params(Rng& rng) const = 0;
  /// Class scores, C x B.
  [[nodiscard]] virtual Eigen::MatrixXd scores(const ParamVector& w, const Eigen::Ref<const Eigen::MatrixXd>& x) const = 0;
  /// Mean cross-entropy over the batch; fills `grad` when non-null.
  virtual double loss(const ParamVector& w, const Eigen::Ref<const Eigen::MatrixXd>& x, std::span<const int> labels,
                      ParamVector* grad) const = 0;
};

/// Multinomial logistic regression: C x F weights then C biases.
class SoftmaxRegression final : public Classifier {
 public:
  SoftmaxRegression(int n_classes, int n_features) : classes_(n_classes), features_(n_features) {}
  [[nodiscard]] Eigen::Index param_count() const override { return static_cast<Eigen::Index>(classes_) * (features_ + 1); }
  [[nodiscard]] ParamVector init_params(Rng& rng) const override;
  [[nodiscard]] Eigen::MatrixXd scores(const ParamVector& w, const Eigen::Ref<const Eigen::MatrixXd>& x) const override;
  double loss(const ParamVector& w, const Eigen::Ref<const Eigen::MatrixXd>& x, std::span<const int> labels,
              ParamVector* grad) const override;

 private:
  int classes_;
  int features_;
};

/// One tanh hidden layer; non-convex variant of the task.
class MlpClassifier final : public Classifier {
 public:
  MlpClassifier(int n_features, int hidden, int n_classes) : net_({n_features, hidden, n_classes}) {}
  [[nodiscard]] Eigen::Index param_count() const override { return net_.param_count(); }
  [[nodiscard]] ParamVector init_params(Rng& rng) const override;
  [[nodiscard]] Eigen::MatrixXd scores(const ParamVector& w, const Eigen::Ref<const Eigen::MatrixXd>& x) const override;
  double loss(const ParamVector& w, const Eigen::Ref<const Eigen::MatrixXd>& x, std::span<const int> labels,
              ParamVector* grad) const override;

 private:
  mutable nn::DenseNet net_;
};

enum class ModelKind { kLogistic, kMlp };
std::unique_ptr<Classifier> make_classifier(ModelKind kind, const TaskShape& shape);

/// Gradient of the loss on one mini-batch (indices into the caller's data).
using BatchGradient = std::function<ParamVector(const ParamVector&, std::span<const int>)>;

struct LocalUpdateResult {
  ParamVector params;
  double last_grad_norm = 0.0;
};

/// Exactly `epochs` steps w <- w - lr * grad, one uniformly drawn mini-batch
/// (without replacement within the batch) per step.
LocalUpdateResult local_update(const ParamVector& start, std::span<const int> shard, int epochs, double lr,
                               int batch_size, Rng& rng, const BatchGradient& gradient);

/// Convenience overload binding a classifier and dataset.
LocalUpdateResult local_update(const Classifier& model, const SyntheticDataset& data, const ParamVector& start,
                               std::span<const int> shard, int epochs, double lr, int batch_size, Rng& rng);

/// Plain mean of the scheduled users' models.
ParamVector aggregate(std::span<const ParamVector> models);

/// ||local - global|| / ||global||.
double divergence_entry(const ParamVector& local, const ParamVector& global_model);

double evaluate_accuracy(const Classifier& model, const ParamVector& w, const Eigen::Ref<const Eigen::MatrixXd>& x,
                         std::span<const int> labels);
double evaluate_accuracy(const Classifier& model, const ParamVector& w, const SyntheticDataset& data);

/// Scheduled-set mean of gradient gaps over their q-weighted population mean.
/// Empty when the denominator vanishes.
std::optional<double> selection_bias_rho(std::span<const int> scheduled, const Eigen::VectorXd& grad_gaps,
                                         const Eigen::VectorXd& weights);

struct GradientSurvey {
  Eigen::VectorXd gaps;   // ||grad F_n - grad F||^2
  Eigen::VectorXd norms;  // ||grad F_n||
};

/// Full-shard gradients of every user at `w`; grad F = sum_n q_n grad F_n.
GradientSurvey survey_gradients(const Classifier& model, const ParamVector& w, const SyntheticDataset& data,
                                const Eigen::VectorXd& weights);

/// q_n = D_n / sum D.
Eigen::VectorXd data_weights(const SyntheticDataset& data);

inline constexpr double kBaseLearningRate = 0.1;
inline constexpr int kMaxBatchSize = 64;

/// eta_k = eta_0 / (1 + k / 50).
inline double learning_rate(int round) { return kBaseLearningRate / (1.0 + round / 50.0); }

inline int batch_size_for(std::size_t shard_size) {
  return static_cast<int>(std::min<std::size_t>(kMaxBatchSize, shard_size));
}

/// Bits per mini-batch: batch_size * F * 64.
inline double batch_bits(int batch_size, int n_features) { return static_cast<double>(batch_size) * n_features * 64.0; }

}  // namespace fedsched::fl
