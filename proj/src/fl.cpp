#include "fedsched/fl.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace fedsched::fl {

namespace {

Eigen::MatrixXd gather_columns(const Eigen::MatrixXd& x, std::span<const int> idx) {
  Eigen::MatrixXd out(x.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = x.col(idx[i]);
  return out;
}

std::vector<int> gather(const std::vector<int>& v, std::span<const int> idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(v[i]);
  return out;
}

// Mean cross-entropy and dL/dscores for column-sample scores.
double softmax_xent(const Eigen::MatrixXd& scores, std::span<const int> labels, Eigen::MatrixXd* dscores) {
  const Eigen::Index b = scores.cols();
  double loss = 0.0;
  if (dscores) dscores->resize(scores.rows(), b);
  for (Eigen::Index j = 0; j < b; ++j) {
    const double mx = scores.col(j).maxCoeff();
    Eigen::VectorXd e = (scores.col(j).array() - mx).exp();
    const double z = e.sum();
    loss += std::log(z) + mx - scores(labels[j], j);
    if (dscores) {
      dscores->col(j) = e / z;
      (*dscores)(labels[j], j) -= 1.0;
    }
  }
  if (dscores) *dscores /= static_cast<double>(b);
  return loss / static_cast<double>(b);
}

}  // namespace

SyntheticDataset generate_noniid(const SimConfig& cfg, Rng& rng, const TaskShape& shape) {
  if (shape.n_classes < 2) throw std::domain_error("generate_noniid: need at least two classes");
  SyntheticDataset ds;
  ds.shape = shape;
  const int c = shape.n_classes;
  const int f = shape.n_features;

  Eigen::MatrixXd means(f, c);
  std::normal_distribution<double> prior(0.0, shape.class_separation);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < f; ++i) means(i, j) = prior(rng);

  std::uniform_int_distribution<int> size_dist(cfg.samples_range[0], cfg.samples_range[1]);
  std::uniform_int_distribution<int> any_class(0, c - 1);
  std::uniform_int_distribution<int> other_class(0, c - 2);
  for (int n = 0; n < cfg.n_users; ++n) {
    const int d = size_dist(rng);
    const int dominant = n % c;
    const int n_dominant = static_cast<int>(std::floor(cfg.noniid_ratio * d));
    const bool has_dominant = cfg.noniid_ratio > 0.0;
    ds.dominant_class.push_back(has_dominant ? dominant : -1);
    std::vector<int> shard;
    for (int s = 0; s < d; ++s) {
      int label;
      if (!has_dominant) {
        label = any_class(rng);
      } else if (s < n_dominant) {
        label = dominant;
      } else {
        label = other_class(rng);
        if (label >= dominant) ++label;
      }
      shard.push_back(static_cast<int>(ds.labels.size()));
      ds.labels.push_back(label);
    }
    ds.shards.push_back(std::move(shard));
  }

  const auto n_train = static_cast<int>(ds.labels.size());
  const int n_test = static_cast<int>(std::lround(0.25 * n_train));
  for (int s = 0; s < n_test; ++s) ds.test_labels.push_back(s % c);

  std::normal_distribution<double> noise(0.0, 1.0);
  auto draw = [&](const std::vector<int>& labels) {
    Eigen::MatrixXd x(f, static_cast<Eigen::Index>(labels.size()));
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      for (Eigen::Index i = 0; i < f; ++i) x(i, j) = shape.feature_scale * (means(i, labels[j]) + noise(rng));
    return x;
  };
  ds.features = draw(ds.labels);
  ds.test_features = draw(ds.test_labels);
  return ds;
}

ParamVector SoftmaxRegression::init_params(Rng& rng) const {
  std::normal_distribution<double> n01(0.0, 0.01);
  ParamVector w(param_count());
  for (Eigen::Index i = 0; i < w.size(); ++i) w[i] = n01(rng);
  return w;
}

Eigen::MatrixXd SoftmaxRegression::scores(const ParamVector& w, const Eigen::Ref<const Eigen::MatrixXd>& x) const {
  if (w.size() != param_count() || x.rows() != features_) throw std::domain_error("SoftmaxRegression: shape mismatch");
  Eigen::Map<const Eigen::MatrixXd> weights(w.data(), classes_, features_);
  Eigen::Map<const Eigen::VectorXd> bias(w.data() + static_cast<Eigen::Index>(classes_) * features_, classes_);
  Eigen::MatrixXd s = weights * x;
  s.colwise() += bias;
  return s;
}

double SoftmaxRegression::loss(const ParamVector& w, const Eigen::Ref<const Eigen::MatrixXd>& x,
                               std::span<const int> labels, ParamVector* grad) const {
  const Eigen::MatrixXd s = scores(w, x);
  Eigen::MatrixXd ds;
  const double l = softmax_xent(s, labels, grad ? &ds : nullptr);
  if (grad) {
    grad->resize(param_count());
    Eigen::Map<Eigen::MatrixXd> gw(grad->data(), classes_, features_);
    Eigen::Map<Eigen::VectorXd> gb(grad->data() + static_cast<Eigen::Index>(classes_) * features_, classes_);
    gw.noalias() = ds * x.transpose();
    gb = ds.rowwise().sum();
  }
  return l;
}

ParamVector MlpClassifier::init_params(Rng& rng) const {
  nn::DenseNet net(net_.layer_sizes());
  net.init(rng, 0.1);
  return net.params();
}

Eigen::MatrixXd MlpClassifier::scores(const ParamVector& w, const Eigen::Ref<const Eigen::MatrixXd>& x) const {
  net_.params() = w;
  return nn::forward_batch(net_, x);
}

double MlpClassifier::loss(const ParamVector& w, const Eigen::Ref<const Eigen::MatrixXd>& x,
                           std::span<const int> labels, ParamVector* grad) const {
  net_.params() = w;
  nn::ForwardCache cache;
  const Eigen::MatrixXd s = nn::forward(net_, x, cache);
  Eigen::MatrixXd ds;
  const double l = softmax_xent(s, labels, grad ? &ds : nullptr);
  if (grad) *grad = nn::backward(net_, cache, ds);
  return l;
}

std::unique_ptr<Classifier> make_classifier(ModelKind kind, const TaskShape& shape) {
  if (kind == ModelKind::kMlp) return std::make_unique<MlpClassifier>(shape.n_features, 32, shape.n_classes);
  return std::make_unique<SoftmaxRegression>(shape.n_classes, shape.n_features);
}

LocalUpdateResult local_update(const ParamVector& start, std::span<const int> shard, int epochs, double lr,
                               int batch_size, Rng& rng, const BatchGradient& gradient) {
  if (lr < 0.0) throw std::domain_error("local_update: negative learning rate");
  if (shard.empty()) throw std::domain_error("local_update: empty shard");
  if (batch_size < 1 || static_cast<std::size_t>(batch_size) > shard.size())
    throw std::domain_error("local_update: batch size must lie in [1, |shard|]");

  LocalUpdateResult out{start, 0.0};
  std::vector<int> pool(shard.begin(), shard.end());
  std::vector<int> batch(batch_size);
  for (int epoch = 0; epoch < epochs; ++epoch) {
    for (int i = 0; i < batch_size; ++i) {
      std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i), pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
      batch[i] = pool[i];
    }
    const ParamVector g = gradient(out.params, batch);
    out.last_grad_norm = g.norm();
    out.params -= lr * g;
    if (!out.params.allFinite())
      throw DivergenceError(epoch, "local update diverged at epoch " + std::to_string(epoch));
  }
  return out;
}

LocalUpdateResult local_update(const Classifier& model, const SyntheticDataset& data, const ParamVector& start,
                               std::span<const int> shard, int epochs, double lr, int batch_size, Rng& rng) {
  auto grad = [&](const ParamVector& w, std::span<const int> batch) {
    ParamVector g;
    const std::vector<int> labels = gather(data.labels, batch);
    model.loss(w, gather_columns(data.features, batch), labels, &g);
    return g;
  };
  return local_update(start, shard, epochs, lr, batch_size, rng, grad);
}

ParamVector aggregate(std::span<const ParamVector> models) {
  if (models.empty()) throw std::domain_error("aggregate: no models");
  ParamVector sum = models.front();
  for (std::size_t i = 1; i < models.size(); ++i) {
    if (models[i].size() != sum.size()) throw std::domain_error("aggregate: model length mismatch");
    sum += models[i];
  }
  return sum / static_cast<double>(models.size());
}

double divergence_entry(const ParamVector& local, const ParamVector& global_model) {
  const double g = global_model.norm();
  if (!(g > 0.0)) throw std::domain_error("divergence_entry: global model has zero norm");
  if (local.size() != global_model.size()) throw std::domain_error("divergence_entry: length mismatch");
  return (local - global_model).norm() / g;
}

double evaluate_accuracy(const Classifier& model, const ParamVector& w, const Eigen::Ref<const Eigen::MatrixXd>& x,
                         std::span<const int> labels) {
  if (labels.empty()) return 0.0;
  const Eigen::MatrixXd s = model.scores(w, x);
  int hits = 0;
  for (Eigen::Index j = 0; j < s.cols(); ++j) {
    Eigen::Index arg = 0;
    s.col(j).maxCoeff(&arg);
    if (arg == labels[j]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double evaluate_accuracy(const Classifier& model, const ParamVector& w, const SyntheticDataset& data) {
  return evaluate_accuracy(model, w, data.test_features, data.test_labels);
}

std::optional<double> selection_bias_rho(std::span<const int> scheduled, const Eigen::VectorXd& grad_gaps,
                                         const Eigen::VectorXd& weights) {
  if (scheduled.empty() || grad_gaps.size() != weights.size()) return std::nullopt;
  const double denom = weights.dot(grad_gaps);
  if (!(denom > 0.0)) return std::nullopt;
  double num = 0.0;
  for (int n : scheduled) num += grad_gaps[n];
  num /= static_cast<double>(scheduled.size());
  return num / denom;
}

Eigen::VectorXd data_weights(const SyntheticDataset& data) {
  Eigen::VectorXd q(static_cast<Eigen::Index>(data.n_users()));
  for (std::size_t n = 0; n < data.n_users(); ++n) q[static_cast<Eigen::Index>(n)] = static_cast<double>(data.shards[n].size());
  return q / q.sum();
}

GradientSurvey survey_gradients(const Classifier& model, const ParamVector& w, const SyntheticDataset& data,
                                const Eigen::VectorXd& weights) {
  const auto n_users = static_cast<Eigen::Index>(data.n_users());
  Eigen::MatrixXd grads(model.param_count(), n_users);
  for (Eigen::Index n = 0; n < n_users; ++n) {
    ParamVector g;
    const auto& shard = data.shards[static_cast<std::size_t>(n)];
    model.loss(w, gather_columns(data.features, shard), gather(data.labels, shard), &g);
    grads.col(n) = g;
  }
  const Eigen::VectorXd global = grads * weights;
  GradientSurvey out;
  out.norms = grads.colwise().norm().transpose();
  out.gaps = (grads.colwise() - global).colwise().squaredNorm().transpose();
  return out;
}

}  // namespace fedsched::fl
