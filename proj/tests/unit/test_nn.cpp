#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "fedsched/nn.hpp"
#include "fedsched/rng.hpp"

using namespace fedsched;
using namespace fedsched::nn;

namespace {

// Dense evaluation written directly from the layout: per layer, a column-major
// out x in weight block, then the bias.
Eigen::VectorXd oracle_forward(const std::vector<int>& sizes, const Eigen::VectorXd& params, Eigen::VectorXd x) {
  Eigen::Index off = 0;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const int in = sizes[l], out = sizes[l + 1];
    Eigen::VectorXd y(out);
    for (int o = 0; o < out; ++o) {
      double acc = params[off + in * out + o];
      for (int i = 0; i < in; ++i) acc += params[off + static_cast<Eigen::Index>(i) * out + o] * x[i];
      y[o] = (l + 2 < sizes.size()) ? std::tanh(acc) : acc;
    }
    off += static_cast<Eigen::Index>(in + 1) * out;
    x = y;
  }
  return x;
}

DenseNet random_net(std::vector<int> sizes, Rng& rng) {
  DenseNet net(std::move(sizes));
  net.init(rng);
  std::normal_distribution<double> n(0.0, 0.1);
  for (Eigen::Index i = 0; i < net.param_count(); ++i) net.params()[i] += n(rng);
  return net;
}

Eigen::VectorXd random_vec(Eigen::Index n, Rng& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  Eigen::VectorXd v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

}  // namespace

TEST_CASE("parameter count") {
  DenseNet net({5, 64, 64, 3});
  CHECK(net.param_count() == 6 * 64 + 65 * 64 + 65 * 3);
}

TEST_CASE("forward pass") {
  SUBCASE("zero network") {
    DenseNet net({4, 3, 2});
    net.params().setZero();
    CHECK(forward(net, Eigen::VectorXd::Ones(4)).isZero());
  }
  SUBCASE("identity linear layer") {
    DenseNet net({3, 3});
    net.params().setZero();
    net.weight(0).setIdentity();
    Eigen::Vector3d x(0.5, -2.0, 7.0);
    CHECK(forward(net, x).isApprox(x, 1e-15));
  }
  SUBCASE("matches the dense oracle") {
    Rng rng = make_rng(1, "nn");
    for (auto sizes : {std::vector<int>{7, 5, 3}, std::vector<int>{101, 64, 64, 42}, std::vector<int>{32, 32, 10}}) {
      const DenseNet net = random_net(sizes, rng);
      const Eigen::VectorXd x = random_vec(sizes.front(), rng);
      const Eigen::VectorXd got = forward(net, x);
      const Eigen::VectorXd want = oracle_forward(sizes, net.params(), x);
      CHECK((got - want).cwiseAbs().maxCoeff() <= 1e-12);
    }
  }
  SUBCASE("batch columns equal single evaluations") {
    Rng rng = make_rng(2, "nn");
    const DenseNet net = random_net({6, 8, 2}, rng);
    Eigen::MatrixXd xs(6, 5);
    for (int c = 0; c < 5; ++c) xs.col(c) = random_vec(6, rng);
    const Eigen::MatrixXd ys = forward_batch(net, xs);
    for (int c = 0; c < 5; ++c) CHECK((ys.col(c) - forward(net, Eigen::VectorXd(xs.col(c)))).norm() <= 1e-14);
  }
  SUBCASE("dimension mismatch") {
    DenseNet net({4, 2});
    CHECK_THROWS_AS(forward(net, Eigen::VectorXd::Ones(3)), std::domain_error);
    CHECK_THROWS_AS(backward(net, Eigen::VectorXd::Ones(4), Eigen::VectorXd::Ones(3)), std::domain_error);
  }
}

TEST_CASE("backward pass") {
  SUBCASE("finite differences on every repo shape") {
    Rng rng = make_rng(3, "nn");
    std::uniform_int_distribution<Eigen::Index> pick;
    for (auto sizes : {std::vector<int>{101, 64, 64, 42}, std::vector<int>{101, 64, 64, 1}, std::vector<int>{32, 32, 10},
                       std::vector<int>{41, 64, 64, 18}}) {
      DenseNet net = random_net(sizes, rng);
      const Eigen::VectorXd x = random_vec(sizes.front(), rng);
      const Eigen::VectorXd up = random_vec(sizes.back(), rng);
      const Eigen::VectorXd grad = backward(net, x, up);
      double worst = 0.0;
      for (int k = 0; k < 30; ++k) {
        const Eigen::Index i = pick(rng) % net.param_count();
        const double h = 1e-5, orig = net.params()[i];
        net.params()[i] = orig + h;
        const double fp = up.dot(forward(net, x));
        net.params()[i] = orig - h;
        const double fm = up.dot(forward(net, x));
        net.params()[i] = orig;
        const double fd = (fp - fm) / (2 * h);
        worst = std::max(worst, std::abs(fd - grad[i]) / std::max(1e-6, std::max(std::abs(fd), std::abs(grad[i]))));
      }
      CHECK(worst <= 1e-4);
    }
  }
  SUBCASE("zero upstream") {
    Rng rng = make_rng(4, "nn");
    const DenseNet net = random_net({5, 4, 3}, rng);
    CHECK(backward(net, random_vec(5, rng), Eigen::VectorXd::Zero(3)).isZero());
  }
  SUBCASE("linear net gradient is the outer product") {
    Rng rng = make_rng(5, "nn");
    const DenseNet net = random_net({3, 2}, rng);
    const Eigen::VectorXd x = random_vec(3, rng), up = random_vec(2, rng);
    const Eigen::VectorXd g = backward(net, x, up);
    const Eigen::MatrixXd outer = up * x.transpose();
    CHECK((Eigen::Map<const Eigen::MatrixXd>(g.data(), 2, 3) - outer).norm() <= 1e-14);
    CHECK((g.tail(2) - up).norm() <= 1e-14);
  }
}

TEST_CASE("adam") {
  SUBCASE("zero gradient leaves parameters") {
    Eigen::VectorXd p = Eigen::VectorXd::LinSpaced(4, -1, 1), before = p;
    AdamState s = make_adam(4);
    for (int i = 0; i < 10; ++i) adam_step(p, Eigen::VectorXd::Zero(4), s, 1e-3);
    CHECK(p == before);
  }
  SUBCASE("constant gradient steps approach lr") {
    Eigen::VectorXd p = Eigen::VectorXd::Zero(1);
    AdamState s = make_adam(1);
    double last = 0.0;
    for (int i = 0; i < 2000; ++i) {
      const double before = p[0];
      adam_step(p, Eigen::VectorXd::Constant(1, 0.37), s, 1e-3);
      last = before - p[0];
    }
    CHECK(last == doctest::Approx(1e-3).epsilon(1e-6));
  }
  SUBCASE("deterministic") {
    Eigen::VectorXd a = Eigen::VectorXd::Ones(3), b = a;
    AdamState sa = make_adam(3), sb = make_adam(3);
    const Eigen::Vector3d g(0.1, -2.0, 5.0);
    adam_step(a, g, sa, 3e-4);
    adam_step(b, g, sb, 3e-4);
    CHECK(a == b);
    CHECK(sa.m == sb.m);
    CHECK(sa.v == sb.v);
  }
  SUBCASE("rejects non-positive lr") {
    Eigen::VectorXd p = Eigen::VectorXd::Ones(1);
    AdamState s = make_adam(1);
    CHECK_THROWS(adam_step(p, p, s, 0.0));
  }
}

TEST_CASE("beta density") {
  CHECK(beta_logpdf(0.3, 1.0, 1.0) == doctest::Approx(0.0));
  CHECK(beta_logpdf(0.5, 2.0, 1.0) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK_THROWS_AS(beta_logpdf(0.0, 2.0, 2.0), std::domain_error);
  CHECK_THROWS_AS(beta_logpdf(1.2, 2.0, 2.0), std::domain_error);

  Rng rng = make_rng(6, "beta");
  std::uniform_real_distribution<double> u(1.0, 5.0);
  for (int trial = 0; trial < 20; ++trial) {
    const double a = u(rng), b = u(rng);
    const int n = 10000;
    double integral = 0.0;
    for (int i = 0; i <= n; ++i) {
      const double x = static_cast<double>(i) / n;
      double f = 0.0;
      if (i > 0 && i < n) f = std::exp(beta_logpdf(x, a, b));
      else if (i == 0 && a == 1.0) f = b;
      integral += (i == 0 || i == n ? 0.5 : 1.0) * f / n;
    }
    CHECK(std::abs(integral - 1.0) <= 1e-4);
  }
}

TEST_CASE("beta gradient and digamma") {
  CHECK(digamma(1.0) == doctest::Approx(-0.57721566490153286).epsilon(1e-14));
  CHECK(digamma(0.5) == doctest::Approx(-1.9635100260214235).epsilon(1e-14));
  CHECK(digamma(10.0) == doctest::Approx(2.2517525890667211).epsilon(1e-14));
  Rng rng = make_rng(7, "beta");
  std::uniform_real_distribution<double> u(1.01, 8.0), x(0.01, 0.99);
  for (int i = 0; i < 50; ++i) {
    const double a = u(rng), b = u(rng), xv = x(rng), h = 1e-6;
    const auto [ga, gb] = beta_logpdf_grad(xv, a, b);
    CHECK(ga == doctest::Approx((beta_logpdf(xv, a + h, b) - beta_logpdf(xv, a - h, b)) / (2 * h)).epsilon(1e-6));
    CHECK(gb == doctest::Approx((beta_logpdf(xv, a, b + h) - beta_logpdf(xv, a, b - h)) / (2 * h)).epsilon(1e-6));
  }
}

TEST_CASE("beta head keeps concentrations above one") {
  for (double raw : {-50.0, -3.0, 0.0, 2.5, 40.0}) CHECK(concentration(raw) > 1.0);
  CHECK(concentration(0.0) == doctest::Approx(1.0 + std::log(2.0)));
}

TEST_CASE("beta sampler mean") {
  Rng rng = make_rng(8, "beta");
  const int n = 100000;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const double s = sample_beta(2.0, 5.0, rng);
    REQUIRE(s > 0.0);
    REQUIRE(s < 1.0);
    sum += s;
  }
  const double mean = 2.0 / 7.0;
  const double var = 2.0 * 5.0 / (49.0 * 8.0);
  CHECK(std::abs(sum / n - mean) <= 3.0 * std::sqrt(var / n));
}

TEST_CASE("snapshot round trip") {
  Rng rng = make_rng(9, "nn");
  const DenseNet net = random_net({4, 6, 2}, rng);
  const auto prefix = std::filesystem::temp_directory_path() / "fedsched_nn" / "actor";
  std::filesystem::create_directories(prefix.parent_path());
  save_snapshot(net, prefix);
  const DenseNet back = load_snapshot(prefix);
  CHECK(back.layer_sizes() == net.layer_sizes());
  CHECK(back.params() == net.params());
  CHECK(std::filesystem::file_size(prefix.string() + ".bin") == static_cast<std::uintmax_t>(net.param_count()) * 8);
}
