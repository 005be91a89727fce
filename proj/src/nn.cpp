#include "fedsched/nn.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "fedsched/records.hpp"
#include "json.hpp"

namespace fedsched::nn {

DenseNet::DenseNet(std::vector<int> layer_sizes) : sizes_(std::move(layer_sizes)) {
  if (sizes_.size() < 2) throw std::domain_error("DenseNet needs at least an input and an output layer");
  Eigen::Index total = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    if (sizes_[l] <= 0 || sizes_[l + 1] <= 0) throw std::domain_error("DenseNet layer sizes must be positive");
    offsets_.push_back(total);
    total += static_cast<Eigen::Index>(sizes_[l] + 1) * sizes_[l + 1];
  }
  params_ = Eigen::VectorXd::Zero(total);
}

Eigen::Map<const Eigen::MatrixXd> DenseNet::weight(int l) const {
  return {params_.data() + offsets_[l], sizes_[l + 1], sizes_[l]};
}
Eigen::Map<const Eigen::VectorXd> DenseNet::bias(int l) const {
  return {params_.data() + offsets_[l] + static_cast<Eigen::Index>(sizes_[l]) * sizes_[l + 1], sizes_[l + 1]};
}
Eigen::Map<Eigen::MatrixXd> DenseNet::weight(int l) {
  return {params_.data() + offsets_[l], sizes_[l + 1], sizes_[l]};
}
Eigen::Map<Eigen::VectorXd> DenseNet::bias(int l) {
  return {params_.data() + offsets_[l] + static_cast<Eigen::Index>(sizes_[l]) * sizes_[l + 1], sizes_[l + 1]};
}

void DenseNet::init(Rng& rng, double output_gain) {
  for (int l = 0; l < n_layers(); ++l) {
    const double limit = std::sqrt(6.0 / (sizes_[l] + sizes_[l + 1])) * (l + 1 == n_layers() ? output_gain : 1.0);
    std::uniform_real_distribution<double> u(-limit, limit);
    auto w = weight(l);
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = u(rng);
    bias(l).setZero();
  }
}

Eigen::MatrixXd forward(const DenseNet& net, const Eigen::Ref<const Eigen::MatrixXd>& inputs, ForwardCache& cache) {
  if (inputs.rows() != net.input_size()) throw std::domain_error("forward: input size mismatch");
  cache.activations.resize(net.n_layers() + 1);
  cache.activations[0] = inputs;
  for (int l = 0; l < net.n_layers(); ++l) {
    Eigen::MatrixXd z = net.weight(l) * cache.activations[l];
    z.colwise() += net.bias(l);
    if (l + 1 < net.n_layers()) z = z.array().tanh().matrix();
    cache.activations[l + 1] = std::move(z);
  }
  return cache.activations.back();
}

Eigen::MatrixXd forward_batch(const DenseNet& net, const Eigen::Ref<const Eigen::MatrixXd>& inputs) {
  ForwardCache cache;
  return forward(net, inputs, cache);
}

Eigen::VectorXd forward(const DenseNet& net, const Eigen::Ref<const Eigen::VectorXd>& input) {
  ForwardCache cache;
  return forward(net, Eigen::MatrixXd(input), cache).col(0);
}

Eigen::VectorXd backward(const DenseNet& net, const ForwardCache& cache,
                         const Eigen::Ref<const Eigen::MatrixXd>& upstream) {
  if (cache.activations.size() != static_cast<std::size_t>(net.n_layers() + 1))
    throw std::domain_error("backward: cache does not match net");
  const Eigen::MatrixXd& out = cache.activations.back();
  if (upstream.rows() != out.rows() || upstream.cols() != out.cols())
    throw std::domain_error("backward: upstream gradient shape mismatch");

  DenseNet grad_net(net.layer_sizes());
  Eigen::MatrixXd delta = upstream;  // dL/dz for the current layer
  for (int l = net.n_layers() - 1; l >= 0; --l) {
    grad_net.weight(l) = delta * cache.activations[l].transpose();
    grad_net.bias(l) = delta.rowwise().sum();
    if (l > 0) {
      const Eigen::ArrayXXd& a = cache.activations[l].array();
      delta = ((net.weight(l).transpose() * delta).array() * (1.0 - a * a)).matrix();
    }
  }
  return grad_net.params();
}

Eigen::VectorXd backward(const DenseNet& net, const Eigen::Ref<const Eigen::VectorXd>& input,
                         const Eigen::Ref<const Eigen::VectorXd>& upstream) {
  ForwardCache cache;
  forward(net, Eigen::MatrixXd(input), cache);
  return backward(net, cache, Eigen::MatrixXd(upstream));
}

AdamState make_adam(Eigen::Index n) {
  AdamState s;
  s.m = Eigen::VectorXd::Zero(n);
  s.v = Eigen::VectorXd::Zero(n);
  return s;
}

void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grads, AdamState& s, double lr) {
  if (!(lr > 0.0)) throw std::domain_error("adam_step: learning rate must be positive");
  if (s.m.size() != params.size()) s = make_adam(params.size());
  ++s.t;
  s.m = s.beta1 * s.m + (1.0 - s.beta1) * grads;
  s.v = s.beta2 * s.v + (1.0 - s.beta2) * grads.cwiseAbs2();
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.t));
  params.array() -= lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + s.eps);
}

double sample_beta(double a, double b, Rng& rng) {
  std::gamma_distribution<double> ga(a, 1.0);
  std::gamma_distribution<double> gb(b, 1.0);
  const double x = ga(rng);
  const double y = gb(rng);
  const double s = x + y;
  const double v = s > 0.0 ? x / s : 0.5;
  return std::clamp(v, kBetaSampleEps, 1.0 - kBetaSampleEps);
}

void save_snapshot(const DenseNet& net, const std::filesystem::path& prefix) {
  std::filesystem::path bin = prefix;
  bin += ".bin";
  std::filesystem::path meta = prefix;
  meta += ".json";
  if (prefix.has_parent_path()) std::filesystem::create_directories(prefix.parent_path());

  std::string bytes(static_cast<std::size_t>(net.param_count()) * 8, '\0');
  for (Eigen::Index i = 0; i < net.param_count(); ++i) {
    auto word = std::bit_cast<std::uint64_t>(net.params()[i]);
    for (int b = 0; b < 8; ++b) bytes[static_cast<std::size_t>(i) * 8 + b] = static_cast<char>((word >> (8 * b)) & 0xff);
  }
  write_text_file(bin, bytes);
  nlohmann::json j = {{"layer_sizes", net.layer_sizes()}};
  write_text_file(meta, j.dump() + "\n");
}

DenseNet load_snapshot(const std::filesystem::path& prefix) {
  std::filesystem::path bin = prefix;
  bin += ".bin";
  std::filesystem::path meta = prefix;
  meta += ".json";
  std::ifstream jm(meta);
  if (!jm) throw IoError("cannot open snapshot metadata " + meta.string());
  nlohmann::json j;
  try {
    jm >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad snapshot metadata " + meta.string() + ": " + e.what());
  }
  DenseNet net(j.at("layer_sizes").get<std::vector<int>>());

  std::ifstream in(bin, std::ios::binary);
  if (!in) throw IoError("cannot open snapshot weights " + bin.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() != static_cast<std::size_t>(net.param_count()) * 8)
    throw IoError("snapshot " + bin.string() + " has " + std::to_string(bytes.size()) + " bytes, expected " +
                  std::to_string(net.param_count() * 8));
  for (Eigen::Index i = 0; i < net.param_count(); ++i) {
    std::uint64_t word = 0;
    for (int b = 0; b < 8; ++b)
      word |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[static_cast<std::size_t>(i) * 8 + b])) << (8 * b);
    net.params()[i] = std::bit_cast<double>(word);
  }
  return net;
}

}  // namespace fedsched::nn
