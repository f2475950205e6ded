#pragma once

// Exact dynamic programming on finite MDPs with an absorbing state.
//
// Rewards follow the state convention R_{t+1} = r(S_t). Every linear system is
// solved by dense LU over the non-absorbing states S+ = S \ {s_inf}.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace gammalab::mdp {

class SingularSystem : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidMdp : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr double kProbTolerance = 1e-12;

struct FiniteMdp {
  int n_states = 0;
  int n_actions = 0;
  // Row-major (s, a, s') tensor; use p() for indexed access.
  std::vector<double> transition;
  Eigen::VectorXd reward;
  Eigen::VectorXd initial_dist;
  int absorbing_state = 0;

  FiniteMdp() = default;
  FiniteMdp(int states, int actions, int absorbing)
      : n_states(states),
        n_actions(actions),
        transition(static_cast<std::size_t>(states) * actions * states, 0.0),
        reward(Eigen::VectorXd::Zero(states)),
        initial_dist(Eigen::VectorXd::Zero(states)),
        absorbing_state(absorbing) {
    for (int a = 0; a < actions; ++a) p(absorbing, a, absorbing) = 1.0;
  }

  double& p(int s, int a, int next) {
    return transition[(static_cast<std::size_t>(s) * n_actions + a) * n_states + next];
  }
  double p(int s, int a, int next) const {
    return transition[(static_cast<std::size_t>(s) * n_actions + a) * n_states + next];
  }

  /// Throws InvalidMdp naming the first violated invariant.
  void validate() const {
    if (n_states < 1 || n_actions < 1) throw InvalidMdp("mdp needs at least one state and action");
    if (absorbing_state < 0 || absorbing_state >= n_states)
      throw InvalidMdp("absorbing_state out of range");
    if (transition.size() != static_cast<std::size_t>(n_states) * n_actions * n_states)
      throw InvalidMdp("transition tensor has wrong size");
    if (reward.size() != n_states || initial_dist.size() != n_states)
      throw InvalidMdp("reward/initial_dist length must equal n_states");
    for (int s = 0; s < n_states; ++s) {
      for (int a = 0; a < n_actions; ++a) {
        double total = 0.0;
        for (int n = 0; n < n_states; ++n) {
          if (p(s, a, n) < 0.0) throw InvalidMdp("negative transition probability");
          total += p(s, a, n);
        }
        if (std::abs(total - 1.0) > kProbTolerance)
          throw InvalidMdp("transition row (" + std::to_string(s) + "," + std::to_string(a) +
                           ") does not sum to 1");
      }
    }
    if (reward[absorbing_state] != 0.0) throw InvalidMdp("reward of the absorbing state must be 0");
    for (int a = 0; a < n_actions; ++a)
      if (p(absorbing_state, a, absorbing_state) != 1.0)
        throw InvalidMdp("absorbing state must self-loop with probability 1");
    if ((initial_dist.array() < 0.0).any()) throw InvalidMdp("negative initial probability");
    if (std::abs(initial_dist.sum() - 1.0) > kProbTolerance)
      throw InvalidMdp("initial_dist does not sum to 1");
    if (initial_dist[absorbing_state] != 0.0)
      throw InvalidMdp("initial_dist must place no mass on the absorbing state");
  }

  /// Indices of S+ in increasing order.
  std::vector<int> transient_states() const {
    std::vector<int> out;
    out.reserve(n_states > 0 ? n_states - 1 : 0);
    for (int s = 0; s < n_states; ++s)
      if (s != absorbing_state) out.push_back(s);
    return out;
  }
};

struct TabularPolicy {
  Eigen::MatrixXd probs;  // (state, action)

  static TabularPolicy uniform(int states, int actions) {
    return {Eigen::MatrixXd::Constant(states, actions, 1.0 / actions)};
  }

  static TabularPolicy softmax(const Eigen::MatrixXd& logits) {
    TabularPolicy pi{Eigen::MatrixXd(logits.rows(), logits.cols())};
    for (Eigen::Index s = 0; s < logits.rows(); ++s) {
      const double top = logits.row(s).maxCoeff();
      Eigen::RowVectorXd e = (logits.row(s).array() - top).exp();
      pi.probs.row(s) = e / e.sum();
    }
    return pi;
  }

  void validate(const FiniteMdp& mdp) const {
    if (probs.rows() != mdp.n_states || probs.cols() != mdp.n_actions)
      throw InvalidMdp("policy shape does not match mdp");
    if ((probs.array() < 0.0).any()) throw InvalidMdp("negative action probability");
    for (Eigen::Index s = 0; s < probs.rows(); ++s)
      if (std::abs(probs.row(s).sum() - 1.0) > kProbTolerance)
        throw InvalidMdp("policy row " + std::to_string(s) + " does not sum to 1");
  }
};

struct ValueReport {
  Eigen::VectorXd v;
  Eigen::MatrixXd q;
  Eigen::MatrixXd adv;
  Eigen::VectorXd d;
  double gamma = 1.0;
  double j = 0.0;
  // Max expected hitting time of s_inf under this policy; +inf when some state never absorbs.
  double t_max = std::numeric_limits<double>::infinity();
};

/// State-to-state kernel P_pi(s, s') = sum_a pi(a|s) p(s'|s,a) over all states.
inline Eigen::MatrixXd state_kernel(const FiniteMdp& mdp, const TabularPolicy& pi) {
  Eigen::MatrixXd kernel = Eigen::MatrixXd::Zero(mdp.n_states, mdp.n_states);
  for (int s = 0; s < mdp.n_states; ++s)
    for (int a = 0; a < mdp.n_actions; ++a) {
      const double w = pi.probs(s, a);
      if (w == 0.0) continue;
      for (int n = 0; n < mdp.n_states; ++n) kernel(s, n) += w * mdp.p(s, a, n);
    }
  return kernel;
}

namespace detail {

inline Eigen::MatrixXd restrict(const Eigen::MatrixXd& full, const std::vector<int>& idx) {
  const auto n = static_cast<Eigen::Index>(idx.size());
  Eigen::MatrixXd out(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index k = 0; k < n; ++k) out(i, k) = full(idx[i], idx[k]);
  return out;
}

inline Eigen::VectorXd restrict(const Eigen::VectorXd& full, const std::vector<int>& idx) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out[static_cast<Eigen::Index>(i)] = full[idx[i]];
  return out;
}

// True when every transient state has a positive-probability path to s_inf.
inline bool absorbs_everywhere(const FiniteMdp& mdp, const Eigen::MatrixXd& kernel) {
  std::vector<char> reaches(mdp.n_states, 0);
  reaches[mdp.absorbing_state] = 1;
  bool changed = true;
  while (changed) {
    changed = false;
    for (int s = 0; s < mdp.n_states; ++s) {
      if (reaches[s]) continue;
      for (int n = 0; n < mdp.n_states; ++n)
        if (reaches[n] && kernel(s, n) > 0.0) {
          reaches[s] = 1;
          changed = true;
          break;
        }
    }
  }
  return std::all_of(reaches.begin(), reaches.end(), [](char c) { return c != 0; });
}

}  // namespace detail

/// Fundamental matrix G = (I - P_pi)^{-1} restricted to S+.
struct FundamentalMatrix {
  Eigen::MatrixXd g;
  std::vector<int> states;  // row/column i of g corresponds to states[i]

  // ||G||_inf, i.e. the largest expected number of steps before absorption.
  double max_row_sum() const { return g.rows() == 0 ? 0.0 : g.rowwise().sum().maxCoeff(); }
};

inline FundamentalMatrix fundamental_matrix(const FiniteMdp& mdp, const TabularPolicy& pi) {
  const Eigen::MatrixXd kernel = state_kernel(mdp, pi);
  if (!detail::absorbs_everywhere(mdp, kernel))
    throw SingularSystem("policy never reaches the absorbing state from some state");
  FundamentalMatrix out;
  out.states = mdp.transient_states();
  const Eigen::MatrixXd p_plus = detail::restrict(kernel, out.states);
  const auto n = p_plus.rows();
  Eigen::MatrixXd system = Eigen::MatrixXd::Identity(n, n) - p_plus;
  out.g = system.partialPivLu().solve(Eigen::MatrixXd::Identity(n, n));
  return out;
}

/// Exact v, q, Adv, d, J and T_max for `pi` at discount `gamma`.
inline ValueReport solve_values(const FiniteMdp& mdp, const TabularPolicy& pi, double gamma) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("gamma must lie in [0, 1]");
  const Eigen::MatrixXd kernel = state_kernel(mdp, pi);
  const bool absorbing = detail::absorbs_everywhere(mdp, kernel);
  if (gamma == 1.0 && !absorbing)
    throw SingularSystem("I - P_pi is singular: policy never reaches the absorbing state");

  const std::vector<int> plus = mdp.transient_states();
  const auto n = static_cast<Eigen::Index>(plus.size());
  const Eigen::MatrixXd p_plus = detail::restrict(kernel, plus);
  const Eigen::MatrixXd system = Eigen::MatrixXd::Identity(n, n) - gamma * p_plus;
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(system);

  ValueReport out;
  out.gamma = gamma;
  out.v = Eigen::VectorXd::Zero(mdp.n_states);
  const Eigen::VectorXd v_plus = lu.solve(detail::restrict(mdp.reward, plus));
  for (Eigen::Index i = 0; i < n; ++i) out.v[plus[i]] = v_plus[i];

  out.q.resize(mdp.n_states, mdp.n_actions);
  for (int s = 0; s < mdp.n_states; ++s)
    for (int a = 0; a < mdp.n_actions; ++a) {
      double next = 0.0;
      for (int k = 0; k < mdp.n_states; ++k) next += mdp.p(s, a, k) * out.v[k];
      out.q(s, a) = mdp.reward[s] + gamma * next;
    }
  out.adv = out.q.colwise() - out.v;

  // d^T (I - gamma P) = mu0^T on S+; the absorbing entry follows from total mass.
  const Eigen::VectorXd d_plus =
      lu.transpose().solve(detail::restrict(mdp.initial_dist, plus));
  out.d = Eigen::VectorXd::Zero(mdp.n_states);
  for (Eigen::Index i = 0; i < n; ++i) out.d[plus[i]] = d_plus[i];
  if (gamma < 1.0) {
    out.d[mdp.absorbing_state] = 1.0 / (1.0 - gamma) - d_plus.sum();
  } else {
    out.d[mdp.absorbing_state] = 1.0;  // s_inf is occupied exactly once, at t = T
  }

  out.j = mdp.initial_dist.dot(out.v);

  if (absorbing) {
    const Eigen::MatrixXd hit_system = Eigen::MatrixXd::Identity(n, n) - p_plus;
    const Eigen::VectorXd hitting =
        hit_system.partialPivLu().solve(Eigen::VectorXd::Ones(n));
    out.t_max = n == 0 ? 0.0 : hitting.maxCoeff();
  }
  return out;
}

/// Gradient of J_gamma w.r.t. per-(s,a) softmax logits:
/// sum_s d(s) sum_a q(s,a) dpi(a|s)/dlogit(s,b).
inline Eigen::MatrixXd exact_policy_gradient(const FiniteMdp& mdp, const Eigen::MatrixXd& logits,
                                             double gamma) {
  const TabularPolicy pi = TabularPolicy::softmax(logits);
  const ValueReport rep = solve_values(mdp, pi, gamma);
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(mdp.n_states, mdp.n_actions);
  for (int s = 0; s < mdp.n_states; ++s) {
    for (int b = 0; b < mdp.n_actions; ++b) {
      // softmax Jacobian: dpi(a)/dlogit(b) = pi(a) (delta_ab - pi(b))
      double acc = 0.0;
      for (int a = 0; a < mdp.n_actions; ++a) {
        const double jac = pi.probs(s, a) * ((a == b ? 1.0 : 0.0) - pi.probs(s, b));
        acc += rep.q(s, a) * jac;
      }
      grad(s, b) = rep.d[s] * acc;
    }
  }
  return grad;
}

/// Rows v^0 .. v^h of the fixed-horizon values; v^0 = 0.
inline Eigen::MatrixXd fixed_horizon_values(const FiniteMdp& mdp, const TabularPolicy& pi, int h) {
  if (h < 0) throw std::invalid_argument("horizon must be non-negative");
  const Eigen::MatrixXd kernel = state_kernel(mdp, pi);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(h + 1, mdp.n_states);
  for (int i = 1; i <= h; ++i)
    out.row(i) = (mdp.reward + kernel * out.row(i - 1).transpose()).transpose();
  return out;
}

/// Longest number of steps any trajectory can take before absorbing, or nullopt
/// when the support graph of P_pi has a cycle among transient states.
inline std::optional<int> absorption_horizon(const FiniteMdp& mdp, const TabularPolicy& pi) {
  const Eigen::MatrixXd kernel = state_kernel(mdp, pi);
  // Longest path via DFS with colouring; a back edge means an unbounded horizon.
  std::vector<int> depth(mdp.n_states, -1);
  std::vector<char> colour(mdp.n_states, 0);
  bool cyclic = false;
  auto visit = [&](auto&& self, int s) -> int {
    if (s == mdp.absorbing_state) return 0;
    if (colour[s] == 2) return depth[s];
    if (colour[s] == 1) {
      cyclic = true;
      return 0;
    }
    colour[s] = 1;
    int best = 0;
    for (int n = 0; n < mdp.n_states; ++n)
      if (kernel(s, n) > 0.0) best = std::max(best, self(self, n));
    colour[s] = 2;
    depth[s] = best + 1;
    return depth[s];
  };
  int horizon = 0;
  for (int s = 0; s < mdp.n_states; ++s) horizon = std::max(horizon, visit(visit, s));
  if (cyclic) return std::nullopt;
  return horizon;
}

/// max over S+ of KL(pi(.|s) || pi'(.|s)); +inf if pi' drops support of pi.
inline double max_kl(const FiniteMdp& mdp, const TabularPolicy& pi, const TabularPolicy& pi_prime) {
  double worst = 0.0;
  for (int s : mdp.transient_states()) {
    double kl = 0.0;
    for (int a = 0; a < mdp.n_actions; ++a) {
      const double p = pi.probs(s, a);
      if (p == 0.0) continue;
      const double q = pi_prime.probs(s, a);
      if (q == 0.0) return std::numeric_limits<double>::infinity();
      kl += p * std::log(p / q);
    }
    worst = std::max(worst, kl);
  }
  return worst;
}

struct LemmaBound {
  double lhs = 0.0;        // J(pi')
  double rhs = 0.0;        // J(pi) + surrogate - penalty
  double kl_max = 0.0;
  double adv_max = 0.0;
  double surrogate = 0.0;  // sum_s d_pi(s) sum_a pi'(a|s) Adv_pi(s,a)
  double penalty = 0.0;
  double t_max = 0.0;      // only meaningful for gamma = 1

  bool holds(double slack = 1e-10) const { return lhs >= rhs - slack; }
};

/// Performance-improvement bound for the pair (pi, pi'). gamma < 1 uses the
/// 4 adv_max gamma kl / (1-gamma)^2 penalty; gamma = 1 uses 4 adv_max T_max^2 kl
/// with T_max the larger of the two policies' expected absorption times.
inline LemmaBound lemma_bound(const FiniteMdp& mdp, const TabularPolicy& pi,
                              const TabularPolicy& pi_prime, double gamma) {
  const ValueReport base = solve_values(mdp, pi, gamma);
  const ValueReport next = solve_values(mdp, pi_prime, gamma);
  LemmaBound out;
  out.lhs = next.j;
  out.adv_max = base.adv.cwiseAbs().maxCoeff();
  for (int s = 0; s < mdp.n_states; ++s)
    out.surrogate += base.d[s] * pi_prime.probs.row(s).dot(base.adv.row(s));
  out.kl_max = max_kl(mdp, pi, pi_prime);
  if (std::isinf(out.kl_max)) {
    out.penalty = std::numeric_limits<double>::infinity();
    out.rhs = -std::numeric_limits<double>::infinity();
    return out;
  }
  if (gamma < 1.0) {
    out.penalty = 4.0 * out.adv_max * gamma * out.kl_max / ((1.0 - gamma) * (1.0 - gamma));
  } else {
    out.t_max = std::max(base.t_max, next.t_max);
    out.penalty = 4.0 * out.adv_max * out.t_max * out.t_max * out.kl_max;
  }
  out.rhs = base.j + out.surrogate - out.penalty;
  return out;
}

/// Componentwise max of |v - (r + gamma P_pi v)|.
inline double bellman_residual(const FiniteMdp& mdp, const TabularPolicy& pi, const ValueReport& rep) {
  const Eigen::MatrixXd kernel = state_kernel(mdp, pi);
  const Eigen::VectorXd backup = mdp.reward + rep.gamma * kernel * rep.v;
  return (rep.v - backup).cwiseAbs().maxCoeff();
}

// ---------------------------------------------------------------------------
// Fuzzing

/// Random absorbing MDP over `transient` + 1 states (absorbing state last).
/// Each (s, a) row sends at least `leak` mass to the absorbing state.
inline FiniteMdp random_absorbing_mdp(std::mt19937_64& rng, int transient, int actions, double leak = 0.1) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  FiniteMdp m(transient + 1, actions, transient);
  for (int s = 0; s < transient; ++s) {
    m.reward[s] = 2.0 * unit(rng) - 1.0;
    m.initial_dist[s] = unit(rng) + 1e-3;
    for (int a = 0; a < actions; ++a) {
      double total = 0.0;
      for (int n = 0; n <= transient; ++n) total += m.p(s, a, n) = unit(rng);
      for (int n = 0; n <= transient; ++n) m.p(s, a, n) *= (1.0 - leak) / total;
      m.p(s, a, transient) += leak;
    }
  }
  m.initial_dist /= m.initial_dist.sum();
  return m;
}

struct FuzzReport {
  long draws = 0;
  long violations = 0;
  double worst_gap = std::numeric_limits<double>::infinity();  // min over draws of lhs - rhs
};

/// Lemma-bound fuzz: MDPs with up to `max_states` states and `max_actions`
/// actions, softmax policy pairs (pi' a perturbation of pi of random size),
/// gamma cycled through `gammas`.
inline FuzzReport fuzz_lemma(long draws, std::uint64_t seed, const std::vector<double>& gammas,
                             int max_states = 6, int max_actions = 3, double slack = 1e-10) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_int_distribution<int> states(1, max_states - 1), acts(1, max_actions);
  std::uniform_real_distribution<double> log_step(-4.0, 0.5);
  FuzzReport out;
  for (long i = 0; i < draws; ++i) {
    const int n = states(rng), k = acts(rng);
    const FiniteMdp m = random_absorbing_mdp(rng, n, k);
    Eigen::MatrixXd logits(n + 1, k), step(n + 1, k);
    for (int s = 0; s <= n; ++s)
      for (int a = 0; a < k; ++a) logits(s, a) = g(rng), step(s, a) = g(rng);
    const double scale = std::pow(10.0, log_step(rng));
    const LemmaBound b = lemma_bound(m, TabularPolicy::softmax(logits),
                                     TabularPolicy::softmax(logits + scale * step), gammas[i % gammas.size()]);
    ++out.draws;
    if (!b.holds(slack)) ++out.violations;
    out.worst_gap = std::min(out.worst_gap, b.lhs - b.rhs);
  }
  return out;
}

}  // namespace gammalab::mdp
