#pragma once

// Time-limited environments with time-augmented observations.
//
// Every environment is a pure transition function over an explicit EnvState
// (which carries the clock), so the live episode and the generative model share
// one code path. Observations always end with t / t_max.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "gammalab/exact_mdp.hpp"

namespace gammalab::env {

using Rng = std::mt19937_64;

class SteppedAfterDone : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};
class UnknownEnv : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};
class InvalidGamma : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};
class UnsupportedSnapshot : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct ActionSpec {
  enum class Kind { Continuous, Discrete };
  Kind kind = Kind::Continuous;
  int dim = 1;     // width of the action vector the agent emits
  int choices = 0; // number of discrete actions (Discrete only)
};

struct EnvState {
  std::vector<double> x;
  int t = 0;
  bool done = false;

  bool operator==(const EnvState&) const = default;
};

/// Outcome of the underlying (un-timed) dynamics from one state.
struct CoreStep {
  double reward = 0.0;
  std::vector<double> next;
  bool terminal = false;
};

struct Transition {
  double reward = 0.0;
  EnvState next;
  bool terminal = false;
  bool truncated = false;  // clock hit t_max without a terminal state
};

struct StepResult {
  double reward = 0.0;
  Eigen::VectorXd obs;
  bool done = false;
  bool truncated_by_limit = false;
};

/// Index of the discrete action selected by a scalar Gaussian action: the
/// standard normal CDF split into equal bins, so N(0, 1) actions are uniform.
inline int discrete_action(double a, int choices) {
  const double u = 0.5 * std::erfc(-a / std::numbers::sqrt2);
  const int idx = static_cast<int>(std::floor(u * choices));
  return std::clamp(idx, 0, choices - 1);
}

class Env {
 public:
  Env(int t_max, std::uint64_t seed) : t_max_(t_max), rng_(seed) {
    if (t_max < 1) throw std::invalid_argument("t_max must be >= 1");
  }
  virtual ~Env() = default;

  virtual std::string name() const = 0;
  virtual int feature_dim() const = 0;
  virtual ActionSpec action_spec() const = 0;
  virtual std::vector<double> initial_state(Rng& rng) const = 0;
  /// Reward r(x, t) for leaving x at time t, and the successor.
  virtual CoreStep dynamics(const std::vector<double>& x, int t, const Eigen::VectorXd& action,
                            Rng& rng) const = 0;
  virtual Eigen::VectorXd features(const std::vector<double>& x) const = 0;
  virtual std::unique_ptr<Env> clone() const = 0;
  virtual bool supports_snapshot() const { return true; }

  int obs_dim() const { return feature_dim() + 1; }
  int t_max() const { return t_max_; }
  int t() const { return state_.t; }
  bool done() const { return state_.done; }
  bool started() const { return started_; }
  const Rng& rng_state() const { return rng_; }

  Eigen::VectorXd observe(const EnvState& s) const {
    Eigen::VectorXd obs(obs_dim());
    obs.head(feature_dim()) = features(s.x);
    obs[feature_dim()] = static_cast<double>(s.t) / t_max_;
    return obs;
  }

  Eigen::VectorXd reset() {
    state_ = EnvState{initial_state(rng_), 0, false};
    started_ = true;
    return observe(state_);
  }

  /// Generative model: one transition from s without touching the live episode.
  Transition sample(const EnvState& s, const Eigen::VectorXd& action, Rng& rng) const {
    if (s.done) throw SteppedAfterDone("cannot step from a finished state");
    CoreStep core = dynamics(s.x, s.t, action, rng);
    Transition out;
    out.reward = core.reward;
    out.terminal = core.terminal;
    out.next.x = std::move(core.next);
    out.next.t = s.t + 1;
    out.truncated = !core.terminal && out.next.t >= t_max_;
    out.next.done = out.terminal || out.truncated;
    return out;
  }

  StepResult step(const Eigen::VectorXd& action) {
    if (!started_ || state_.done) throw SteppedAfterDone("step() called on a finished episode; reset first");
    Transition tr = sample(state_, action, rng_);
    state_ = std::move(tr.next);
    return {tr.reward, observe(state_), state_.done, tr.truncated};
  }

  EnvState snapshot() const {
    if (!supports_snapshot()) throw UnsupportedSnapshot(name() + " does not expose its state");
    return state_;
  }
  void restore(const EnvState& s) {
    if (!supports_snapshot()) throw UnsupportedSnapshot(name() + " does not expose its state");
    state_ = s;
    started_ = true;
  }

 protected:
  int t_max_;
  Rng rng_;
  EnvState state_;
  bool started_ = false;
};

/// (reward, next state, terminal) drawn from the environment's transition law.
inline Transition generative_sample(const Env& model, const EnvState& state, const Eigen::VectorXd& action,
                                    Rng& rng) {
  if (!model.supports_snapshot()) throw UnsupportedSnapshot(model.name() + " has no generative model");
  return model.sample(state, action, rng);
}

// ---------------------------------------------------------------------------
// LineWorld: 1-d point mass driven towards a goal.

struct LineWorldParams {
  double goal = 1.0;
  double dt = 0.1;
  double max_accel = 1.0;
  double max_speed = 2.0;
  double goal_tolerance = 0.05;
  bool terminate_at_goal = true;
  double velocity_noise = 0.0;
};

class LineWorld : public Env {
 public:
  LineWorld(int t_max, std::uint64_t seed, LineWorldParams p = {}, std::string label = "lineworld")
      : Env(t_max, seed), p_(p), label_(std::move(label)) {}

  std::string name() const override { return label_; }
  int feature_dim() const override { return 2; }
  ActionSpec action_spec() const override { return {ActionSpec::Kind::Continuous, 1, 0}; }
  const LineWorldParams& params() const { return p_; }

  std::vector<double> initial_state(Rng&) const override { return {0.0, 0.0}; }

  CoreStep dynamics(const std::vector<double>& x, int, const Eigen::VectorXd& action, Rng& rng) const override {
    const double accel = std::clamp(action[0], -1.0, 1.0) * p_.max_accel;
    double vel = std::clamp(x[1] + accel * p_.dt, -p_.max_speed, p_.max_speed);
    if (p_.velocity_noise > 0.0) vel += std::normal_distribution<double>(0.0, p_.velocity_noise)(rng);
    const double pos = x[0] + vel * p_.dt;
    CoreStep out;
    out.reward = -std::abs(x[0] - p_.goal);
    out.next = {pos, vel};
    out.terminal = p_.terminate_at_goal && std::abs(pos - p_.goal) < p_.goal_tolerance;
    return out;
  }

  Eigen::VectorXd features(const std::vector<double>& x) const override {
    return Eigen::Vector2d(x[0], x[1]);
  }

  std::unique_ptr<Env> clone() const override { return std::make_unique<LineWorld>(*this); }

 private:
  LineWorldParams p_;
  std::string label_;
};

// ---------------------------------------------------------------------------
// Tabular environments backed by an exact FiniteMdp.

class TabularEnv : public Env {
 public:
  TabularEnv(mdp::FiniteMdp model, int t_max, std::uint64_t seed, std::string label)
      : Env(t_max, seed), mdp_(std::move(model)), label_(std::move(label)) {
    mdp_.validate();
    int k = 0;
    slot_.assign(mdp_.n_states, -1);
    for (int s = 0; s < mdp_.n_states; ++s)
      if (s != mdp_.absorbing_state) slot_[s] = k++;
  }

  std::string name() const override { return label_; }
  int feature_dim() const override { return mdp_.n_states - 1; }
  ActionSpec action_spec() const override { return {ActionSpec::Kind::Discrete, 1, mdp_.n_actions}; }
  const mdp::FiniteMdp& exact_mdp() const { return mdp_; }
  int state_index(const EnvState& s) const { return static_cast<int>(s.x[0]); }

  std::vector<double> initial_state(Rng& rng) const override {
    return {static_cast<double>(draw(mdp_.initial_dist, rng))};
  }

  CoreStep dynamics(const std::vector<double>& x, int, const Eigen::VectorXd& action, Rng& rng) const override {
    const int s = static_cast<int>(x[0]);
    const int a = mdp_.n_actions == 1 ? 0 : discrete_action(action[0], mdp_.n_actions);
    Eigen::VectorXd row(mdp_.n_states);
    for (int n = 0; n < mdp_.n_states; ++n) row[n] = mdp_.p(s, a, n);
    const int next = draw(row, rng);
    return {mdp_.reward[s], {static_cast<double>(next)}, next == mdp_.absorbing_state};
  }

  /// One-hot over the transient states; the absorbing state maps to all zeros.
  Eigen::VectorXd features(const std::vector<double>& x) const override {
    Eigen::VectorXd f = Eigen::VectorXd::Zero(feature_dim());
    const int slot = slot_[static_cast<int>(x[0])];
    if (slot >= 0) f[slot] = 1.0;
    return f;
  }

  std::unique_ptr<Env> clone() const override { return std::make_unique<TabularEnv>(*this); }

 private:
  static int draw(const Eigen::VectorXd& probs, Rng& rng) {
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    double acc = 0.0;
    int last = 0;
    for (Eigen::Index i = 0; i < probs.size(); ++i) {
      if (probs[i] <= 0.0) continue;
      acc += probs[i];
      last = static_cast<int>(i);
      if (u < acc) return last;
    }
    return last;
  }

  mdp::FiniteMdp mdp_;
  std::string label_;
  std::vector<int> slot_;
};

/// Chain s_1 -> ... -> s_n -> absorbing with rewards uniform in [0, 1].
inline mdp::FiniteMdp chain_mdp(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  mdp::FiniteMdp m(n + 1, 1, n);
  for (int i = 0; i < n; ++i) {
    m.p(i, 0, i + 1) = 1.0;
    m.reward[i] = unit(rng);
  }
  m.initial_dist[0] = 1.0;
  return m;
}

/// 3x3 grid, goal in the bottom-right corner. Actions up/right/down/left move
/// as intended with probability 1 - slip and uniformly at random otherwise;
/// moves off the grid stay put. Reward -0.1 per step, +1 on leaving the goal
/// (which always leads to the absorbing state). Start uniform over the grid.
inline mdp::FiniteMdp gridworld_mdp(double slip = 0.2) {
  constexpr int side = 3;
  constexpr int cells = side * side;
  constexpr int goal = cells - 1;
  constexpr int absorbing = cells;
  mdp::FiniteMdp m(cells + 1, 4, absorbing);
  const int dr[4] = {-1, 0, 1, 0};
  const int dc[4] = {0, 1, 0, -1};
  auto move = [&](int s, int dir) {
    const int r = s / side + dr[dir];
    const int c = s % side + dc[dir];
    if (r < 0 || r >= side || c < 0 || c >= side) return s;
    return r * side + c;
  };
  for (int s = 0; s < cells; ++s) {
    m.reward[s] = s == goal ? 1.0 : -0.1;
    m.initial_dist[s] = 1.0 / cells;
    for (int a = 0; a < 4; ++a) {
      if (s == goal) {
        m.p(s, a, absorbing) = 1.0;
        continue;
      }
      m.p(s, a, move(s, a)) += 1.0 - slip;
      for (int d = 0; d < 4; ++d) m.p(s, a, move(s, d)) += slip / 4.0;
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Reward flipping.

/// t0 = min{t : gamma^t < 0.05}.
inline int flip_t0(double gamma) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw InvalidGamma("flip time needs 0 < gamma < 1");
  int t = 0;
  while (std::pow(gamma, t) >= 0.05) ++t;
  return t;
}

/// r'(s, t) = r(s) for t <= t0 and -r(s) afterwards; dynamics unchanged.
class FlipReward : public Env {
 public:
  FlipReward(std::unique_ptr<Env> base, int t0)
      : Env(base->t_max(), 0), base_(std::move(base)), t0_(t0) {
    rng_ = base_->rng_state();
  }

  FlipReward(const FlipReward& other)
      : Env(other), base_(other.base_->clone()), t0_(other.t0_) {}

  std::string name() const override { return base_->name() + "+flip" + std::to_string(t0_); }
  int feature_dim() const override { return base_->feature_dim(); }
  ActionSpec action_spec() const override { return base_->action_spec(); }
  std::vector<double> initial_state(Rng& rng) const override { return base_->initial_state(rng); }
  CoreStep dynamics(const std::vector<double>& x, int t, const Eigen::VectorXd& action, Rng& rng) const override {
    CoreStep out = base_->dynamics(x, t, action, rng);
    if (t > t0_) out.reward = -out.reward;
    return out;
  }
  Eigen::VectorXd features(const std::vector<double>& x) const override { return base_->features(x); }
  bool supports_snapshot() const override { return base_->supports_snapshot(); }
  std::unique_ptr<Env> clone() const override { return std::make_unique<FlipReward>(*this); }

  int t0() const { return t0_; }
  const Env& base() const { return *base_; }

 private:
  std::unique_ptr<Env> base_;
  int t0_;
};

inline std::unique_ptr<Env> flip_wrap(std::unique_ptr<Env> base, double gamma) {
  const int t0 = flip_t0(gamma);
  return std::make_unique<FlipReward>(std::move(base), t0);
}

// ---------------------------------------------------------------------------

struct EnvOptions {
  LineWorldParams lineworld{};
  double noisy_velocity_std = 0.05;
  int chain_length = 10;
  double grid_slip = 0.2;
};

inline std::unique_ptr<Env> make_env(const std::string& name, int t_max, std::uint64_t seed,
                                     const EnvOptions& opt = {}) {
  if (name == "lineworld") return std::make_unique<LineWorld>(t_max, seed, opt.lineworld);
  if (name == "noisy-lineworld") {
    LineWorldParams p = opt.lineworld;
    p.velocity_noise = opt.noisy_velocity_std;
    return std::make_unique<LineWorld>(t_max, seed, p, "noisy-lineworld");
  }
  if (name == "tabular-chain")
    return std::make_unique<TabularEnv>(chain_mdp(opt.chain_length, seed), t_max, seed, name);
  if (name == "tabular-gridworld")
    return std::make_unique<TabularEnv>(gridworld_mdp(opt.grid_slip), t_max, seed, name);
  throw UnknownEnv("unknown environment: " + name);
}

}  // namespace gammalab::env
