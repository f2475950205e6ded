#pragma once

// Least-squares representation error on a chain MRP with aliased tanh features.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

#include "gammalab/exact_mdp.hpp"

namespace gammalab::repr {

class DegenerateSplit : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ZeroTarget : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// s_1 -> s_2 -> ... -> s_N -> absorbing; rewards[i] is received on leaving s_{i+1}.
struct ChainMrp {
  Eigen::VectorXd rewards;

  int size() const { return static_cast<int>(rewards.size()); }

  static ChainMrp random(int n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    ChainMrp chain{Eigen::VectorXd(n)};
    for (int i = 0; i < n; ++i) chain.rewards[i] = unit(rng);
    return chain;
  }
};

struct FeatureMatrix {
  Eigen::MatrixXd x;  // N x K
  double alias_fraction = 0.0;
  double noise_std = 0.0;
  // alias_source[s] is the state whose pre-noise row s copies, or -1.
  std::vector<int> alias_source;
};

/// Number of aliased states, ceil(alpha * n) with a guard against 0.4 * 100 = 40.000...01.
inline int aliased_count(int n, double alias_fraction) {
  return static_cast<int>(std::ceil(alias_fraction * n - 1e-9));
}

inline FeatureMatrix generate_features(int n, int k, double alias_fraction, double noise_std,
                                       std::mt19937_64& rng) {
  if (k < 1 || n < 1) throw std::invalid_argument("feature matrix needs n >= 1 and k >= 1");
  if (!(alias_fraction >= 0.0 && alias_fraction <= 1.0))
    throw std::invalid_argument("alias_fraction must lie in [0, 1]");
  const int n_alias = aliased_count(n, alias_fraction);
  if (n_alias >= n) throw DegenerateSplit("aliasing every state leaves nothing to copy from");

  FeatureMatrix out;
  out.alias_fraction = alias_fraction;
  out.noise_std = noise_std;
  out.x.resize(n, k);
  std::uniform_real_distribution<double> xi(-2.0, 2.0);
  for (int s = 0; s < n; ++s)
    for (int i = 0; i < k; ++i) out.x(s, i) = std::tanh(xi(rng));

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  out.alias_source.assign(n, -1);
  std::uniform_int_distribution<int> pick(n_alias, n - 1);
  for (int i = 0; i < n_alias; ++i) {
    const int src = order[pick(rng)];
    out.alias_source[order[i]] = src;
    out.x.row(order[i]) = out.x.row(src);
  }

  if (noise_std > 0.0) {
    std::normal_distribution<double> noise(0.0, noise_std);
    for (int s = 0; s < n; ++s)
      for (int i = 0; i < k; ++i) out.x(s, i) += noise(rng);
  }
  return out;
}

inline FeatureMatrix generate_features(int n, int k, double alias_fraction, double noise_std,
                                       std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return generate_features(n, k, alias_fraction, noise_std, rng);
}

/// v(s_i) = sum_{j >= i} gamma^{j-i} r_j by backward recursion.
inline Eigen::VectorXd chain_values(const ChainMrp& chain, double gamma) {
  const int n = chain.size();
  Eigen::VectorXd v(n);
  double tail = 0.0;
  for (int i = n - 1; i >= 0; --i) {
    tail = chain.rewards[i] + gamma * tail;
    v[i] = tail;
  }
  return v;
}

/// The chain as a one-action FiniteMdp; the absorbing state is appended last
/// and all initial mass sits on s_1.
inline mdp::FiniteMdp chain_as_mdp(const ChainMrp& chain) {
  const int n = chain.size();
  mdp::FiniteMdp out(n + 1, 1, n);
  for (int i = 0; i < n; ++i) {
    out.p(i, 0, i + 1) = 1.0;
    out.reward[i] = chain.rewards[i];
  }
  out.initial_dist[0] = 1.0;
  return out;
}

/// min_w ||Xw - v||_2 (divided by ||v||_2 when normalized), minimum-norm solution
/// via complete orthogonal decomposition.
inline double representation_error(const Eigen::MatrixXd& x, const Eigen::VectorXd& v,
                                   bool normalized) {
  if (x.rows() != v.size()) throw std::invalid_argument("feature rows must match target length");
  const double scale = v.norm();
  if (normalized && scale == 0.0) throw ZeroTarget("normalized error of a zero target");
  const Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(x);
  const Eigen::VectorXd w = cod.solve(v);
  const double residual = (x * w - v).norm();
  return normalized ? residual / scale : residual;
}

inline double representation_error(const FeatureMatrix& f, const Eigen::VectorXd& v, bool normalized) {
  return representation_error(f.x, v, normalized);
}

struct SweepOptions {
  int n = 100;
  int k = 30;
  double noise_std = 0.1;
  bool normalized = true;
};

struct SweepRow {
  double gamma = 0.0;
  double alpha = 0.0;
  double mean_nre = 0.0;
  double std_nre = 0.0;  // population deviation over trials
  int trials = 0;
  std::uint64_t seed = 0;
};

/// Seed for one trial. Every gamma in an alpha row reuses the same draws, so the
/// trend across gamma is measured on identical (X, r) pairs.
inline std::uint64_t trial_seed(std::uint64_t base_seed, std::size_t alpha_index, std::size_t trial) {
  std::seed_seq seq{static_cast<std::uint32_t>(base_seed), static_cast<std::uint32_t>(base_seed >> 32),
                    static_cast<std::uint32_t>(alpha_index), static_cast<std::uint32_t>(trial)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

/// Rows ordered alpha-major, gamma-minor.
inline std::vector<SweepRow> nre_sweep(const std::vector<double>& gammas, const std::vector<double>& alphas,
                                       int trials, std::uint64_t base_seed, const SweepOptions& opt = {}) {
  if (trials < 1) throw std::invalid_argument("trials must be >= 1");
  std::vector<SweepRow> rows;
  for (std::size_t ai = 0; ai < alphas.size(); ++ai) {
    std::vector<double> sum(gammas.size(), 0.0), sum_sq(gammas.size(), 0.0);
    for (int t = 0; t < trials; ++t) {
      std::mt19937_64 rng(trial_seed(base_seed, ai, static_cast<std::size_t>(t)));
      const ChainMrp chain = ChainMrp::random(opt.n, rng);
      const FeatureMatrix f = generate_features(opt.n, opt.k, alphas[ai], opt.noise_std, rng);
      const Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(f.x);
      for (std::size_t gi = 0; gi < gammas.size(); ++gi) {
        const Eigen::VectorXd v = chain_values(chain, gammas[gi]);
        const double scale = v.norm();
        if (opt.normalized && scale == 0.0) throw ZeroTarget("normalized error of a zero target");
        const double residual = (f.x * cod.solve(v) - v).norm();
        const double e = opt.normalized ? residual / scale : residual;
        sum[gi] += e;
        sum_sq[gi] += e * e;
      }
    }
    for (std::size_t gi = 0; gi < gammas.size(); ++gi) {
      SweepRow row;
      row.gamma = gammas[gi];
      row.alpha = alphas[ai];
      row.trials = trials;
      row.seed = base_seed;
      row.mean_nre = sum[gi] / trials;
      row.std_nre = std::sqrt(std::max(0.0, sum_sq[gi] / trials - row.mean_nre * row.mean_nre));
      rows.push_back(row);
    }
  }
  return rows;
}

}  // namespace gammalab::repr
