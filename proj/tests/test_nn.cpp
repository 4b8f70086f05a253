#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "genxfer/nn.hpp"
#include "genxfer/training.hpp"
#include "test_util.hpp"

using namespace genxfer;

namespace {

// Scalar-loop evaluation of the same network, independent of Eigen products.
std::vector<double> straight_line_forward(const Mlp& net, const std::vector<double>& x) {
  std::vector<double> h = x;
  for (int k = 0; k < net.num_layers(); ++k) {
    const auto w = net.weight(k);
    const auto b = net.bias(k);
    std::vector<double> z(std::size_t(w.rows()), 0.0);
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      double acc = b[i];
      for (Eigen::Index j = 0; j < w.cols(); ++j) acc += w(i, j) * h[std::size_t(j)];
      z[std::size_t(i)] = acc;
    }
    const bool last = k + 1 == net.num_layers();
    for (double& v : z) {
      if (last) {
        if (net.output_activation() == OutputActivation::scaled_tanh) {
          v = net.output_bound() * std::tanh(v / net.output_bound());
        }
      } else if (net.hidden_activation() == Activation::relu) {
        v = v > 0 ? v : 0.0;
      } else if (net.hidden_activation() == Activation::requ) {
        v = v > 0 ? v * v : 0.0;
      } else {
        v = std::tanh(v);
      }
    }
    h = z;
  }
  return h;
}

}  // namespace

TEST_CASE("zero network maps everything to zero") {
  Mlp net({3, 5, 2}, Activation::relu);
  Eigen::VectorXd x(3);
  x << 1.5, -2.0, 7.0;
  CHECK(net.forward(x).isZero(0.0));
}

TEST_CASE("identity weights with relu clip negatives") {
  Mlp net({2, 2, 2}, Activation::relu);
  net.weight_mut(0).setIdentity();
  net.weight_mut(1).setIdentity();
  Eigen::VectorXd x(2);
  x << -1.0, 2.0;
  const Eigen::VectorXd y = net.forward(x);
  CHECK(y[0] == 0.0);
  CHECK(y[1] == 2.0);
}

TEST_CASE("forward matches straight-line arithmetic on a 3x128 net") {
  for (Activation act : {Activation::relu, Activation::requ, Activation::tanh}) {
    Mlp net(mlp_dims(4, {128, 128, 128}, 3), act);
    net.init(17);
    // Non-zero biases so they are exercised too.
    std::mt19937_64 gen(3);
    std::normal_distribution<double> nd(0.0, 0.1);
    for (int k = 0; k < net.num_layers(); ++k)
      for (Eigen::Index i = 0; i < net.bias(k).size(); ++i) net.bias_mut(k)[i] = nd(gen);
    Eigen::VectorXd x(4);
    x << 0.3, -1.2, 0.8, 2.0;
    if (act == Activation::requ) x *= 0.1;
    const Eigen::VectorXd y = net.forward(x);
    const auto ref = straight_line_forward(net, {x[0], x[1], x[2], x[3]});
    for (int i = 0; i < 3; ++i) CHECK(y[i] == doctest::Approx(ref[std::size_t(i)]).epsilon(1e-12));
  }
}

TEST_CASE("forward is deterministic") {
  Mlp net(mlp_dims(3, {16, 16}, 2), Activation::tanh);
  net.init(5);
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(3, 10);
  const Eigen::MatrixXd a = net.forward(x);
  const Eigen::MatrixXd b = net.forward(x);
  CHECK((a.array() == b.array()).all());
}

TEST_CASE("input dimension mismatch is rejected") {
  Mlp net({3, 4, 1}, Activation::relu);
  CHECK_THROWS_AS(net.forward(Eigen::VectorXd(Eigen::VectorXd::Zero(2))), std::invalid_argument);
}

TEST_CASE("zero output gradient gives zero gradients") {
  Mlp net(mlp_dims(3, {8}, 2), Activation::relu);
  net.init(1);
  const auto g = mlp_backward(net, Eigen::VectorXd(Eigen::VectorXd::Ones(3)), Eigen::VectorXd(Eigen::VectorXd::Zero(2)));
  CHECK(g.params.isZero(0.0));
  CHECK(g.input.isZero(0.0));
}

TEST_CASE("linear scalar net: product rule") {
  Mlp net({3, 1}, Activation::relu);
  net.weight_mut(0) << 0.5, -2.0, 3.0;
  Eigen::VectorXd x(3);
  x << 1.0, 4.0, -0.5;
  Eigen::VectorXd og(1);
  og << 1.0;
  const auto g = mlp_backward(net, x, og);
  // Layout: weights (column-major 1x3) then bias.
  CHECK(g.params.head(3).isApprox(x));
  CHECK(g.params[3] == 1.0);
  CHECK(g.input.isApprox(Eigen::Vector3d(0.5, -2.0, 3.0)));
}

TEST_CASE("backward agrees with finite differences on 100 random nets") {
  std::mt19937_64 gen(2024);
  std::uniform_int_distribution<int> dim(1, 8);
  std::uniform_int_distribution<int> depth(1, 4);
  int checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto cse = testutil::random_net(gen, dim, depth);
    const auto g = mlp_backward(cse.net, cse.x, cse.out_grad);
    const auto fd_params = finite_diff_grad<double>(
        [&](const Eigen::VectorXd& p) {
          Mlp m = cse.net;
          m.params() = p;
          return m.forward(cse.x).dot(cse.out_grad);
        },
        cse.net.params(), 1e-5);
    const auto fd_input = finite_diff_grad<double>(
        [&](const Eigen::VectorXd& x) { return cse.net.forward(x).dot(cse.out_grad); }, cse.x, 1e-5);
    checked += testutil::count_grad_mismatches(g.params, fd_params, 1e-4, 1e-7) == 0;
    checked += testutil::count_grad_mismatches(g.input, fd_input, 1e-4, 1e-7) == 0;
  }
  CHECK(checked == 200);
}

TEST_CASE("scaled_tanh head stays inside its bound") {
  Mlp net(mlp_dims(2, {32, 32}, 3), Activation::relu, OutputActivation::scaled_tanh, 2.5);
  net.init(9);
  net.params() *= 40.0;  // push pre-activations far into saturation
  Rng rng(4);
  const Eigen::MatrixXd x = 50.0 * rng.normal_matrix(2, 1000000);
  const Eigen::MatrixXd y = net.forward(x);
  CHECK(y.cwiseAbs().maxCoeff() <= 2.5);
}

TEST_CASE("init is reproducible per seed") {
  Mlp a(mlp_dims(3, {8, 8}, 1), Activation::relu);
  Mlp b = a, c = a;
  a.init(11);
  b.init(11);
  c.init(12);
  CHECK(param_hash(a.params()) == param_hash(b.params()));
  CHECK(param_hash(a.params()) != param_hash(c.params()));
}

TEST_CASE("weight clip bounds weights only") {
  Mlp net(mlp_dims(2, {4}, 1), Activation::relu);
  net.init(1);
  net.params() *= 10.0;
  net.bias_mut(0).setConstant(9.0);
  net.clip_weights(0.5);
  for (int k = 0; k < net.num_layers(); ++k) CHECK(net.weight(k).cwiseAbs().maxCoeff() <= 0.5);
  CHECK(net.bias(0)[0] == 9.0);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  Eigen::VectorXd p(3);
  p << 1.0, -2.0, 0.5;
  const Eigen::VectorXd before = p;
  AdamState s(3, 0.1);
  adam_step<double>(p, Eigen::VectorXd::Zero(3), s);
  CHECK((p.array() == before.array()).all());
  CHECK(s.step_count == 1);
}

TEST_CASE("adam: first step has bias-corrected magnitude lr") {
  // m = 0.1, v = 0.001; corrected m = 1, v = 1; update = lr / (1 + eps).
  Eigen::VectorXd p(1);
  p << 2.0;
  AdamState s(1, 0.1);
  Eigen::VectorXd g(1);
  g << 1.0;
  adam_step<double>(p, g, s);
  CHECK(p[0] == doctest::Approx(2.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-15));
}

TEST_CASE("adam: converges on w^2 from w = 1") {
  Eigen::VectorXd w(1);
  w << 1.0;
  AdamState s(1, 0.01);
  int steps = 0;
  while (std::abs(w[0]) >= 1e-3 && steps < 2000) {
    Eigen::VectorXd g(1);
    g << 2.0 * w[0];
    adam_step<double>(w, g, s);
    ++steps;
  }
  CHECK(std::abs(w[0]) < 1e-3);
  CHECK(s.step_count == steps);
}

TEST_CASE("adam: non-finite gradient aborts") {
  Eigen::VectorXd p = Eigen::VectorXd::Zero(2);
  AdamState s(2, 0.1);
  Eigen::VectorXd g(2);
  g << 1.0, std::nan("");
  CHECK_THROWS_AS(adam_step<double>(p, g, s), std::runtime_error);
  CHECK(s.step_count == 0);
}

TEST_CASE("iterate averaging: warm-up recurrence") {
  ParamEma ema(0.999);
  CHECK(ema.value_or(Eigen::VectorXd::Constant(1, 7.0))[0] == 7.0);  // nothing averaged yet
  for (double p : {1.0, 2.0, 3.0}) ema.update(Eigen::VectorXd::Constant(1, p));
  // t = 1: d = 2/11, t = 2: d = 3/12.
  const double a1 = 2.0 / 11.0 * 1.0 + 9.0 / 11.0 * 2.0;
  const double a2 = 3.0 / 12.0 * a1 + 9.0 / 12.0 * 3.0;
  CHECK(ema.value_or(Eigen::VectorXd::Zero(1))[0] == doctest::Approx(a2).epsilon(1e-15));

  ParamEma off(0.0);
  off.update(Eigen::VectorXd::Constant(1, 5.0));
  CHECK_FALSE(off.enabled());
  CHECK(off.value_or(Eigen::VectorXd::Constant(1, 9.0))[0] == 9.0);
}

TEST_CASE("gradient clipping factor") {
  CHECK(clip_factor(10.0, 5.0) == 0.5);
  CHECK(clip_factor(3.0, 5.0) == 1.0);
  CHECK(clip_factor(1e9, 0.0) == 1.0);
}

TEST_CASE("finite differences: constant and quadratic") {
  Eigen::VectorXd w(1);
  w << 3.0;
  const auto zero = finite_diff_grad<double>([](const Eigen::VectorXd&) { return 4.0; }, w, 1e-5);
  CHECK(zero[0] == 0.0);
  const auto quad = finite_diff_grad<double>([](const Eigen::VectorXd& p) { return p[0] * p[0]; }, w, 1e-5);
  CHECK(quad[0] == doctest::Approx(6.0).epsilon(1e-8));
}

TEST_CASE("templated on scalar: float network evaluates") {
  BasicMlp<float> net({2, 4, 1}, Activation::tanh);
  net.init(3);
  Eigen::VectorXf x(2);
  x << 0.5f, -0.25f;
  CHECK(std::isfinite(net.forward(x)[0]));
}
