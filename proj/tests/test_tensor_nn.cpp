#include <gtest/gtest.h>

#include <filesystem>

#include "gammalab/tensor_nn.hpp"
#include "test_support.hpp"

using namespace gammalab;
using nn::Activation;
using nn::Mlp;
using Rng = std::mt19937_64;

namespace {

Eigen::MatrixXd gaussian(int rows, int cols, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Eigen::MatrixXd m(rows, cols);
  for (auto& e : m.reshaped()) e = g(rng);
  return m;
}

// Straight-line re-evaluation of an MLP from its weight/bias accessors.
Eigen::VectorXd reference_forward(const Mlp& net, Eigen::VectorXd x) {
  for (int l = 0; l < net.layers(); ++l) {
    Eigen::VectorXd z = net.bias(l);
    for (int r = 0; r < z.size(); ++r)
      for (int c = 0; c < x.size(); ++c) z[r] += net.weight(l)(r, c) * x[c];
    if (l + 1 < net.layers() || net.output_activation() == Activation::Tanh)
      for (auto& e : z) e = std::tanh(e);
    x = z;
  }
  return x;
}

}  // namespace

TEST(Mlp, ParameterCount) {
  const Mlp net({3, 64, 64, 2}, Activation::Identity);
  EXPECT_EQ(net.parameter_count(), (3 + 1) * 64 + (64 + 1) * 64 + (64 + 1) * 2);
}

TEST(Mlp, ZeroWeightsGiveActivatedBias) {
  Mlp lin({4, 5, 3}, Activation::Identity);
  EXPECT_TRUE(lin.forward_one(Eigen::VectorXd::Ones(4)).isZero());
  Mlp net({2, 3, 2}, Activation::Tanh);
  net.bias(1) << 0.5, -1.0;
  const auto y = net.forward_one(Eigen::Vector2d(1.0, 2.0));
  EXPECT_DOUBLE_EQ(y[0], std::tanh(0.5));
  EXPECT_DOUBLE_EQ(y[1], std::tanh(-1.0));
}

TEST(Mlp, OddNetworkAtZero) {
  Mlp net({1, 1, 1, 1}, Activation::Tanh);
  for (int l = 0; l < 3; ++l) net.weight(l).setOnes();
  EXPECT_EQ(net.forward_one(Eigen::VectorXd::Zero(1))[0], 0.0);
}

TEST(Mlp, MatchesStraightLineEvaluation) {
  Rng rng(1);
  for (auto out : {Activation::Identity, Activation::Tanh}) {
    Mlp net({5, 7, 6, 3}, out);
    net.params() = gaussian(static_cast<int>(net.parameter_count()), 1, rng, 0.5);
    const Eigen::MatrixXd x = gaussian(5, 4, rng);
    const Eigen::MatrixXd y = net.forward(x);
    for (int b = 0; b < 4; ++b) EXPECT_LT((y.col(b) - reference_forward(net, x.col(b))).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Mlp, ShapeErrors) {
  Mlp net({3, 4, 2}, Activation::Identity);
  EXPECT_THROW(net.forward(Eigen::MatrixXd::Zero(2, 1)), nn::ShapeMismatch);
  Mlp::Cache cache;
  net.forward(Eigen::MatrixXd::Zero(3, 2), &cache);
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(net.parameter_count());
  EXPECT_THROW(net.backward(cache, Eigen::MatrixXd::Zero(2, 3), grad), nn::ShapeMismatch);
  Mlp other({5, 4, 2}, Activation::Identity);
  Eigen::VectorXd other_grad = Eigen::VectorXd::Zero(other.parameter_count());
  EXPECT_THROW(other.backward(cache, Eigen::MatrixXd::Zero(2, 2), other_grad), nn::StaleCache);
  EXPECT_THROW(net.backward(Mlp::Cache{}, Eigen::MatrixXd::Zero(2, 2), grad), nn::StaleCache);
}

TEST(Mlp, LinearLayerGradientIsOuterProduct) {
  Rng rng(2);
  Mlp net({3, 2}, Activation::Identity);
  net.params() = gaussian(static_cast<int>(net.parameter_count()), 1, rng);
  const Eigen::MatrixXd x = gaussian(3, 1, rng);
  const Eigen::MatrixXd d = gaussian(2, 1, rng);
  Mlp::Cache cache;
  net.forward(x, &cache);
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(net.parameter_count());
  net.backward(cache, d, grad);
  EXPECT_LT((net.weight_slice(grad, 0) - d * x.transpose()).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((net.bias_slice(grad, 0) - d.col(0)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Mlp, ZeroOutputGradientGivesZeroGradients) {
  Rng rng(3);
  Mlp net({3, 8, 8, 2}, Activation::Tanh);
  net.init_orthogonal(rng);
  Mlp::Cache cache;
  net.forward(gaussian(3, 5, rng), &cache);
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(net.parameter_count());
  const Eigen::MatrixXd dx = net.backward(cache, Eigen::MatrixXd::Zero(2, 5), grad);
  EXPECT_TRUE(grad.isZero());
  EXPECT_TRUE(dx.isZero());
}

TEST(Mlp, BackwardMatchesFiniteDifferences) {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    Mlp net({4, 16, 16, 3}, trial % 2 ? Activation::Tanh : Activation::Identity);
    net.params() = gaussian(static_cast<int>(net.parameter_count()), 1, rng, 0.4);
    const Eigen::MatrixXd x = gaussian(4, 3, rng);
    const Eigen::MatrixXd c = gaussian(3, 3, rng);
    Mlp::Cache cache;
    net.forward(x, &cache);
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(net.parameter_count());
    const Eigen::MatrixXd dx = net.backward(cache, c, grad);
    auto loss = [&](const Eigen::VectorXd& p) {
      Mlp copy = net;
      copy.params() = p;
      return copy.forward(x).cwiseProduct(c).sum();
    };
    EXPECT_LT(oracle::gradient_error(grad, oracle::central_difference(loss, net.params())), 1e-6);
    auto loss_x = [&](const Eigen::VectorXd& flat) {
      return net.forward(flat.reshaped(4, 3)).cwiseProduct(c).sum();
    };
    const Eigen::VectorXd fd_x = oracle::central_difference(loss_x, Eigen::VectorXd(x.reshaped()));
    EXPECT_LT(oracle::gradient_error(dx.reshaped(), fd_x), 1e-6);
  }
}

TEST(Mlp, OrthogonalInitScales) {
  Rng rng(5);
  Mlp net({3, 64, 64, 1}, Activation::Identity);
  net.init_orthogonal(rng);
  const Eigen::MatrixXd w1 = net.weight(1);
  EXPECT_LT((w1.transpose() * w1 - 2.0 * Eigen::MatrixXd::Identity(64, 64)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(Eigen::MatrixXd(net.weight(2)).norm(), 1e-2, 1e-12);
  EXPECT_TRUE(net.bias(0).isZero());
}

TEST(GaussianPolicy, PeakDensityAndLogStdGradient) {
  Rng rng(6);
  nn::GaussianPolicy pi(3, 2, 8);
  pi.init(rng);
  const Eigen::VectorXd s = gaussian(3, 1, rng);
  const Eigen::VectorXd a = pi.mean(Eigen::MatrixXd(s)).col(0);
  const auto pg = nn::log_prob_and_grad(pi, s, a);
  EXPECT_NEAR(pg.log_prob, -std::log(2.0 * std::numbers::pi), 1e-14);
  const Eigen::Index mean_params = pi.parameter_count() - 2;
  EXPECT_TRUE(pg.grad.head(mean_params).isZero());
  EXPECT_DOUBLE_EQ(pg.grad[mean_params], -1.0);
  EXPECT_DOUBLE_EQ(pg.grad[mean_params + 1], -1.0);
}

TEST(GaussianPolicy, LogProbGradientMatchesFiniteDifferences) {
  Rng rng(7);
  for (int heads : {1, 2}) {
    for (int trial = 0; trial < 5; ++trial) {
      nn::GaussianPolicy pi(3, 2, 16, heads);
      pi.set_params(gaussian(static_cast<int>(pi.parameter_count()), 1, rng, 0.3));
      const Eigen::MatrixXd obs = gaussian(3, 4, rng);
      const Eigen::MatrixXd act = gaussian(2, 4, rng);
      const Eigen::MatrixXd w = gaussian(heads, 4, rng);
      const auto e = pi.evaluate(obs, act);
      const Eigen::VectorXd grad = pi.backward(e, w);
      auto loss = [&](const Eigen::VectorXd& p) {
        nn::GaussianPolicy copy = pi;
        copy.set_params(p);
        return copy.evaluate(obs, act).log_prob.cwiseProduct(w).sum();
      };
      EXPECT_LT(oracle::gradient_error(grad, oracle::central_difference(loss, pi.get_params())), 1e-6);
    }
  }
}

TEST(GaussianPolicy, DensityIntegratesToOne) {
  // Importance estimate E_q[p/q] with q a wider Gaussian.
  Rng rng(8);
  nn::GaussianPolicy pi(2, 2, 8);
  pi.init(rng);
  pi.log_std(0) << -0.3, 0.2;
  const Eigen::MatrixXd obs = gaussian(2, 1, rng);
  const Eigen::VectorXd mu = pi.mean(obs).col(0);
  const int n = 1000000;
  const double q_sd = 2.0;
  std::normal_distribution<double> g(0.0, q_sd);
  Eigen::MatrixXd acts(2, n);
  double log_q_norm = -std::log(2.0 * std::numbers::pi * q_sd * q_sd);
  Eigen::VectorXd log_q(n);
  for (int i = 0; i < n; ++i) {
    const double z0 = g(rng), z1 = g(rng);
    acts(0, i) = mu[0] + z0;
    acts(1, i) = mu[1] + z1;
    log_q[i] = log_q_norm - 0.5 * (z0 * z0 + z1 * z1) / (q_sd * q_sd);
  }
  const Eigen::MatrixXd rep = obs.replicate(1, n);
  const Eigen::VectorXd log_p = pi.evaluate(rep, acts).log_prob.row(0).transpose();
  const double estimate = (log_p - log_q).array().exp().mean();
  EXPECT_NEAR(estimate, 1.0, 1e-2);
}

TEST(GaussianPolicy, AuxHeadsStartAsCopies) {
  Rng a(9), b(9);
  nn::GaussianPolicy single(3, 1, 8, 1), dual(3, 1, 8, 2);
  single.init(a);
  dual.init(b);
  EXPECT_TRUE(dual.head(0).params() == single.head(0).params());
  EXPECT_TRUE(dual.head(1).params() == dual.head(0).params());
  EXPECT_TRUE(dual.trunk().params() == single.trunk().params());
  Rng s1(1), s2(1);
  const Eigen::MatrixXd obs = Eigen::MatrixXd::Ones(3, 1);
  EXPECT_TRUE(single.sample(obs, s1) == dual.sample(obs, s2));
  EXPECT_THROW(nn::GaussianPolicy(3, 1, 8, 0), nn::ShapeMismatch);
  EXPECT_THROW(single.set_params(Eigen::VectorXd::Zero(3)), nn::ShapeMismatch);
}

TEST(MultiHeadCritic, GradientAndHeadIndependence) {
  Rng rng(10);
  nn::MultiHeadCritic critic(4, 16, 5);
  critic.net().params() = gaussian(static_cast<int>(critic.net().parameter_count()), 1, rng, 0.3);
  const Eigen::MatrixXd obs = gaussian(4, 6, rng);
  const Eigen::MatrixXd c = gaussian(5, 6, rng);
  Mlp::Cache cache;
  critic.forward(obs, &cache);
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(critic.net().parameter_count());
  critic.backward(cache, c, grad);
  auto loss = [&](const Eigen::VectorXd& p) {
    nn::MultiHeadCritic copy = critic;
    copy.net().params() = p;
    return copy.forward(obs).cwiseProduct(c).sum();
  };
  EXPECT_LT(oracle::gradient_error(grad, oracle::central_difference(loss, critic.net().params())), 1e-6);

  const Eigen::MatrixXd before = critic.forward(obs);
  critic.net().weight(2).row(2).array() += 0.7;
  critic.net().bias(2)[2] -= 0.3;
  const Eigen::MatrixXd after = critic.forward(obs);
  for (int h = 0; h < 5; ++h) {
    if (h != 2) {
      EXPECT_TRUE(after.row(h) == before.row(h));
    }
  }
  EXPECT_FALSE(after.row(2) == before.row(2));
}

TEST(Adam, FirstStepAndZeroGradient) {
  nn::Adam adam(1e-3);
  Eigen::VectorXd p = Eigen::VectorXd::Zero(3);
  adam.step(p, Eigen::VectorXd::Ones(3));
  for (double e : p) EXPECT_NEAR(e, -1e-3 / (1.0 + 1e-8), 1e-18);

  nn::Adam idle(1e-3);
  Eigen::VectorXd q = Eigen::VectorXd::LinSpaced(4, -1.0, 1.0);
  const Eigen::VectorXd q0 = q;
  for (int i = 0; i < 100; ++i) idle.step(q, Eigen::VectorXd::Zero(4));
  EXPECT_TRUE(q == q0);

  nn::Adam x(0.01), y(0.01);
  Eigen::VectorXd px = q0, py = q0;
  for (int i = 0; i < 5; ++i) {
    x.step(px, Eigen::VectorXd::Constant(4, 0.3 * i));
    y.step(py, Eigen::VectorXd::Constant(4, 0.3 * i));
  }
  EXPECT_TRUE(px == py);
  EXPECT_THROW(x.step(px, Eigen::VectorXd::Zero(3)), nn::ShapeMismatch);
}

TEST(Checkpoint, RoundTrip) {
  Rng rng(11);
  nn::GaussianPolicy pi(3, 1, 8, 2);
  pi.init(rng);
  pi.log_std(1)[0] = 0.25;
  const auto path = std::filesystem::temp_directory_path() / "gammalab_ckpt.json";
  nn::save_checkpoint(pi.tensors(), path.string());
  nn::GaussianPolicy other(3, 1, 8, 2);
  nn::load_checkpoint(other.tensors(), path.string());
  EXPECT_TRUE(other.get_params() == pi.get_params());
  nn::GaussianPolicy wrong(4, 1, 8, 2);
  EXPECT_THROW(nn::load_checkpoint(wrong.tensors(), path.string()), nn::ShapeMismatch);
  std::filesystem::remove(path);
}
