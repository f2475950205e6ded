#pragma once

// PPO family sharing one rollout / advantage / update pipeline:
//
//   Ppo      Monte-Carlo critic targets with a bootstrapped tail
//   PpoTd    one-step TD critic targets recomputed per minibatch
//   PpoTdEx  PpoTd with N extra generative transitions averaged into the target
//   PpoFhtd  fixed-horizon TD critic with one head per horizon
//   DisPpo   Ppo with gamma_A^t weighting on each actor term
//   AuxPpo   Ppo with a second actor head trained on the (1 - gamma^t) residual
//
// No GAE: the actor's advantage is always a one-step TD error.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gammalab/env_suite.hpp"
#include "gammalab/tensor_nn.hpp"

namespace gammalab::agent {

using Rng = std::mt19937_64;

class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class GenerativeUnavailable : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};
class HExceedsHeads : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};
class InvalidConfig : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Algorithm { Ppo, PpoTd, PpoTdEx, PpoFhtd, DisPpo, AuxPpo };
enum class FhtdParameterization { ExactH, Full };

inline std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::Ppo: return "ppo";
    case Algorithm::PpoTd: return "ppo-td";
    case Algorithm::PpoTdEx: return "ppo-td-ex";
    case Algorithm::PpoFhtd: return "ppo-fhtd";
    case Algorithm::DisPpo: return "dis-ppo";
    case Algorithm::AuxPpo: return "aux-ppo";
  }
  return "?";
}

inline Algorithm algorithm_from_string(const std::string& s) {
  for (auto a : {Algorithm::Ppo, Algorithm::PpoTd, Algorithm::PpoTdEx, Algorithm::PpoFhtd, Algorithm::DisPpo,
                 Algorithm::AuxPpo})
    if (to_string(a) == s) return a;
  throw InvalidConfig("unknown algorithm: " + s);
}

struct AgentConfig {
  Algorithm algorithm = Algorithm::Ppo;
  double gamma_actor = 1.0;
  double gamma_critic = 0.99;
  int horizon = 0;  // PpoFhtd only
  FhtdParameterization parameterization = FhtdParameterization::ExactH;
  int full_heads = 0;  // Full parameterization; 0 means t_max + 24
  int extra_transitions = 0;  // PpoTdEx only
  double clip = 0.2;
  double kl_target = 0.01;
  int rollout = 512;
  int opt_iters = 80;  // minibatch updates per rollout
  int minibatch = 64;
  double actor_lr = 3e-4;
  double critic_lr = 9e-4;
  int hidden = 64;
  bool train_actor = true;
  double metric_gamma = -1.0;  // discount for the logged discounted return; < 0 means gamma_critic

  void validate() const {
    auto in_unit = [](double g) { return g >= 0.0 && g <= 1.0; };
    if (!in_unit(gamma_actor) || !in_unit(gamma_critic)) throw InvalidConfig("discounts must lie in [0, 1]");
    if (rollout < 1 || minibatch < 1 || minibatch > rollout)
      throw InvalidConfig("need 1 <= minibatch <= rollout");
    if (opt_iters < 0) throw InvalidConfig("opt_iters must be non-negative");
    if (clip <= 0.0 || kl_target <= 0.0) throw InvalidConfig("clip and kl_target must be positive");
    if (hidden < 1) throw InvalidConfig("hidden width must be positive");
    if (algorithm == Algorithm::PpoFhtd) {
      if (horizon < 1) throw InvalidConfig("ppo-fhtd needs horizon >= 1");
    } else if (horizon != 0) {
      throw InvalidConfig("horizon is only meaningful for ppo-fhtd");
    }
    if (algorithm == Algorithm::PpoTdEx) {
      if (extra_transitions < 0) throw InvalidConfig("extra_transitions must be >= 0");
    } else if (extra_transitions != 0) {
      throw InvalidConfig("extra_transitions is only meaningful for ppo-td-ex");
    }
  }

  double metric_discount() const { return metric_gamma < 0.0 ? gamma_critic : metric_gamma; }
};

struct HeadPlan {
  int heads = 1;       // critic outputs trained
  int actor_head = 0;  // 0-based index of the head read for advantages (horizon H -> H - 1)
};

/// Critic head layout. ExactH trains heads 1..H; Full trains a fixed bank of
/// heads (t_max + 24 unless configured) and reads head H.
inline HeadPlan fhtd_heads(const AgentConfig& cfg, int t_max) {
  if (cfg.algorithm != Algorithm::PpoFhtd) return {1, 0};
  if (cfg.horizon < 1) throw HExceedsHeads("horizon must be >= 1");
  if (cfg.parameterization == FhtdParameterization::ExactH) return {cfg.horizon, cfg.horizon - 1};
  const int bank = cfg.full_heads > 0 ? cfg.full_heads : t_max + 24;
  if (cfg.horizon > bank)
    throw HExceedsHeads("horizon " + std::to_string(cfg.horizon) + " exceeds " + std::to_string(bank) + " heads");
  return {bank, cfg.horizon - 1};
}

/// gamma^t q grad log pi split into the discounted control term and the
/// (1 - gamma^t) auxiliary term.
struct Decomposition {
  Eigen::VectorXd main_term;
  Eigen::VectorXd aux_term;
};

inline Decomposition aux_decomposition_check(double q_value, const Eigen::VectorXd& grad_logpi, double gamma,
                                             int t) {
  const double w = std::pow(gamma, t);
  const Eigen::VectorXd full = q_value * grad_logpi;
  Decomposition d;
  d.main_term = w * full;
  d.aux_term = (1.0 - w) * full;
  return d;
}

struct RolloutBuffer {
  int size = 0;
  Eigen::MatrixXd obs;       // obs_dim x K
  Eigen::MatrixXd next_obs;  // successor observation (pre-reset)
  Eigen::MatrixXd actions;   // act_dim x K
  Eigen::VectorXd rewards;
  Eigen::VectorXd masks;     // 0 where the transition ended an episode
  std::vector<int> time;     // within-episode time of obs
  Eigen::VectorXd returns;   // Monte-Carlo targets (Ppo, DisPpo, AuxPpo)
  Eigen::VectorXd adv;
  Eigen::VectorXd old_log_prob;
  Eigen::VectorXd bootstrap_obs;  // S_K

  // Generative extras j = 1..N for PpoTdEx; j = 0 is the main transition above.
  std::vector<Eigen::MatrixXd> extra_actions;
  std::vector<Eigen::VectorXd> extra_rewards;
  std::vector<Eigen::MatrixXd> extra_next_obs;
  std::vector<Eigen::VectorXd> extra_masks;

  int transitions_per_index() const { return 1 + static_cast<int>(extra_rewards.size()); }
};

struct EpisodeRecord {
  long env_steps = 0;  // cumulative environment steps at episode end
  double return_raw = 0.0;
  double return_discounted = 0.0;
  int length = 0;
  int kl_stop_epoch = -1;
  double actor_loss = 0.0;
  double critic_loss = 0.0;
};

struct UpdateStats {
  int epochs_run = 0;
  int kl_stop_epoch = -1;  // first minibatch iteration where KL >= target, or -1
  double actor_loss = 0.0;
  double critic_loss = 0.0;
  int actor_updates = 0;
};

/// Per-sample PPO objective min{ratio adv, clip(ratio) adv} and its derivative
/// with respect to log pi (ratio adv on the unclipped branch, 0 when clipped).
struct Surrogate {
  double value = 0.0;
  double slope = 0.0;
};

inline Surrogate clipped_surrogate(double ratio, double adv, double clip) {
  const double unclipped = ratio * adv;
  const double clipped = std::clamp(ratio, 1.0 - clip, 1.0 + clip) * adv;
  if (unclipped <= clipped) return {unclipped, unclipped};
  return {clipped, 0.0};
}

/// Standardizes in place unless the population std is <= 1e-8.
inline void normalize_advantages(Eigen::VectorXd& adv) {
  if (adv.size() == 0) return;
  const double mean = adv.mean();
  const double var = (adv.array() - mean).square().mean();
  const double sd = std::sqrt(var);
  if (sd <= 1e-8) return;
  adv = (adv.array() - mean) / sd;
}

class Agent {
 public:
  Agent(AgentConfig cfg, std::unique_ptr<env::Env> environment, std::uint64_t seed)
      : cfg_(cfg), env_(std::move(environment)), rng_(seed), gen_rng_(seed ^ 0x9e3779b97f4a7c15ULL) {
    cfg_.validate();
    plan_ = fhtd_heads(cfg_, env_->t_max());
    const int obs_dim = env_->obs_dim();
    const int act_dim = env_->action_spec().dim;
    actor_ = nn::GaussianPolicy(obs_dim, act_dim, cfg_.hidden, cfg_.algorithm == Algorithm::AuxPpo ? 2 : 1);
    actor_.init(rng_);
    critic_ = nn::MultiHeadCritic(obs_dim, cfg_.hidden, plan_.heads);
    critic_.init(rng_);
    actor_opt_ = nn::Adam{cfg_.actor_lr};
    critic_opt_ = nn::Adam{cfg_.critic_lr};
  }

  const AgentConfig& config() const { return cfg_; }
  const HeadPlan& head_plan() const { return plan_; }
  nn::GaussianPolicy& actor() { return actor_; }
  const nn::GaussianPolicy& actor() const { return actor_; }
  nn::MultiHeadCritic& critic() { return critic_; }
  const nn::MultiHeadCritic& critic() const { return critic_; }
  env::Env& environment() { return *env_; }
  long env_steps() const { return env_steps_; }
  const std::vector<EpisodeRecord>& episodes() const { return episodes_; }

  /// K transitions under the current policy, auto-resetting at episode ends.
  RolloutBuffer collect_rollout() {
    const int k = cfg_.rollout;
    const int n_extra = cfg_.algorithm == Algorithm::PpoTdEx ? cfg_.extra_transitions : 0;
    if (n_extra > 0 && !env_->supports_snapshot())
      throw GenerativeUnavailable(env_->name() + " cannot provide extra transitions");
    if (cfg_.algorithm == Algorithm::AuxPpo) actor_.sync_heads();
    if (!env_->started() || env_->done()) begin_episode();

    RolloutBuffer buf;
    buf.size = k;
    const int obs_dim = env_->obs_dim();
    const int act_dim = actor_.act_dim();
    buf.obs.resize(obs_dim, k);
    buf.next_obs.resize(obs_dim, k);
    buf.actions.resize(act_dim, k);
    buf.rewards.resize(k);
    buf.masks.resize(k);
    buf.time.resize(k);
    for (int j = 0; j < n_extra; ++j) {
      buf.extra_actions.emplace_back(act_dim, k);
      buf.extra_rewards.emplace_back(k);
      buf.extra_next_obs.emplace_back(obs_dim, k);
      buf.extra_masks.emplace_back(k);
    }

    for (int i = 0; i < k; ++i) {
      buf.obs.col(i) = obs_;
      buf.time[i] = env_->t();
      const Eigen::MatrixXd here = buf.obs.col(i);
      const Eigen::VectorXd action = actor_.sample(here, rng_).col(0);
      buf.actions.col(i) = action;
      if (n_extra > 0) {
        const env::EnvState snap = env_->snapshot();
        for (int j = 0; j < n_extra; ++j) {
          const Eigen::VectorXd a_j = actor_.sample(here, rng_).col(0);
          const env::Transition tr = env::generative_sample(*env_, snap, a_j, gen_rng_);
          buf.extra_actions[j].col(i) = a_j;
          buf.extra_rewards[j][i] = tr.reward;
          buf.extra_next_obs[j].col(i) = env_->observe(tr.next);
          buf.extra_masks[j][i] = tr.next.done ? 0.0 : 1.0;
        }
      }
      const env::StepResult res = env_->step(action);
      ++env_steps_;
      buf.rewards[i] = res.reward;
      buf.next_obs.col(i) = res.obs;
      buf.masks[i] = res.done ? 0.0 : 1.0;
      ep_return_ += res.reward;
      ep_discounted_ += ep_weight_ * res.reward;
      ep_weight_ *= cfg_.metric_discount();
      ++ep_len_;
      if (res.done) {
        pending_.push_back({env_steps_, ep_return_, ep_discounted_, ep_len_, -1, 0.0, 0.0});
        begin_episode();
      } else {
        obs_ = res.obs;
      }
    }
    buf.bootstrap_obs = obs_;
    buf.old_log_prob = actor_.evaluate(buf.obs, buf.actions).log_prob.row(0).transpose();
    return buf;
  }

  /// Returns and normalized advantages from the current critic.
  void compute_targets(RolloutBuffer& buf) const {
    const int k = buf.size;
    const Eigen::MatrixXd v_now = critic_.forward(buf.obs);
    const Eigen::MatrixXd v_next = critic_.forward(buf.next_obs);
    const int head = plan_.actor_head;
    const double gc = cfg_.gamma_critic;
    buf.adv.resize(k);
    buf.returns = Eigen::VectorXd::Zero(k);
    switch (cfg_.algorithm) {
      case Algorithm::Ppo:
      case Algorithm::DisPpo:
      case Algorithm::AuxPpo: {
        double g = critic_.forward(Eigen::MatrixXd(buf.bootstrap_obs))(0, 0);
        for (int i = k - 1; i >= 0; --i) {
          g = buf.rewards[i] + gc * buf.masks[i] * g;
          buf.returns[i] = g;
        }
        [[fallthrough]];
      }
      case Algorithm::PpoTd:
        for (int i = 0; i < k; ++i)
          buf.adv[i] = buf.rewards[i] + gc * buf.masks[i] * v_next(0, i) - v_now(0, i);
        break;
      case Algorithm::PpoTdEx:
      case Algorithm::PpoFhtd:
        // Coefficient 1 on the bootstrap regardless of gamma_C.
        for (int i = 0; i < k; ++i)
          buf.adv[i] = buf.rewards[i] + buf.masks[i] * v_next(head, i) - v_now(head, i);
        break;
    }
    normalize_advantages(buf.adv);
  }

  /// Critic regression targets (heads x B) for the minibatch `idx`, using the
  /// current critic for bootstrapped variants.
  Eigen::MatrixXd critic_targets(const RolloutBuffer& buf, const std::vector<Eigen::Index>& idx) const {
    const auto b = static_cast<Eigen::Index>(idx.size());
    const double gc = cfg_.gamma_critic;
    Eigen::MatrixXd y(plan_.heads, b);
    switch (cfg_.algorithm) {
      case Algorithm::Ppo:
      case Algorithm::DisPpo:
      case Algorithm::AuxPpo:
        for (Eigen::Index c = 0; c < b; ++c) y(0, c) = buf.returns[idx[c]];
        break;
      case Algorithm::PpoTd: {
        const Eigen::MatrixXd v = critic_.forward(buf.next_obs(Eigen::all, idx));
        for (Eigen::Index c = 0; c < b; ++c)
          y(0, c) = buf.rewards[idx[c]] + gc * buf.masks[idx[c]] * v(0, c);
        break;
      }
      case Algorithm::PpoTdEx: {
        const Eigen::MatrixXd v = critic_.forward(buf.next_obs(Eigen::all, idx));
        for (Eigen::Index c = 0; c < b; ++c)
          y(0, c) = buf.rewards[idx[c]] + gc * buf.masks[idx[c]] * v(0, c);
        for (std::size_t j = 0; j < buf.extra_rewards.size(); ++j) {
          const Eigen::MatrixXd vj = critic_.forward(buf.extra_next_obs[j](Eigen::all, idx));
          for (Eigen::Index c = 0; c < b; ++c)
            y(0, c) += buf.extra_rewards[j][idx[c]] + gc * buf.extra_masks[j][idx[c]] * vj(0, c);
        }
        y /= static_cast<double>(buf.transitions_per_index());
        break;
      }
      case Algorithm::PpoFhtd: {
        const Eigen::MatrixXd v = critic_.forward(buf.next_obs(Eigen::all, idx));
        for (Eigen::Index c = 0; c < b; ++c) {
          const double r = buf.rewards[idx[c]];
          const double m = buf.masks[idx[c]];
          y(0, c) = r;  // v^0 = 0
          for (int h = 1; h < plan_.heads; ++h) y(h, c) = r + m * v(h - 1, c);
        }
        break;
      }
    }
    return y;
  }

  /// Per-sample weights on the control head and (AuxPpo only) the auxiliary head.
  std::pair<double, double> actor_weights(int t) const {
    switch (cfg_.algorithm) {
      case Algorithm::DisPpo: return {std::pow(cfg_.gamma_actor, t), 0.0};
      case Algorithm::AuxPpo: {
        const double w = std::pow(cfg_.gamma_critic, t);
        return {w, 1.0 - w};
      }
      default: return {1.0, 0.0};
    }
  }

  /// K_opt minibatch iterations over the buffer. Minibatches walk a shuffled
  /// permutation and reshuffle once it is exhausted. Actor updates stop for the
  /// rest of the phase once the sampled KL estimate reaches kl_target.
  UpdateStats update(const RolloutBuffer& buf) {
    UpdateStats stats;
    const int k = buf.size;
    const int b = cfg_.minibatch;
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(k));
    std::iota(perm.begin(), perm.end(), Eigen::Index{0});
    int pos = k;  // forces a shuffle on the first iteration
    bool actor_active = cfg_.train_actor;
    double actor_loss_sum = 0.0;
    double critic_loss_sum = 0.0;

    for (int o = 0; o < cfg_.opt_iters; ++o) {
      if (pos + b > k) {
        std::shuffle(perm.begin(), perm.end(), rng_);
        pos = 0;
      }
      const std::vector<Eigen::Index> idx(perm.begin() + pos, perm.begin() + pos + b);
      pos += b;
      ++stats.epochs_run;

      // Critic: (1/2B) sum (v - y)^2 with targets held fixed.
      const Eigen::MatrixXd y = critic_targets(buf, idx);
      nn::Mlp::Cache cache;
      const Eigen::MatrixXd v = critic_.forward(buf.obs(Eigen::all, idx), &cache);
      const Eigen::MatrixXd diff = v - y;
      const double critic_loss = 0.5 * diff.squaredNorm() / b;
      if (!std::isfinite(critic_loss)) throw NonFiniteLoss(diagnostic("critic", o, critic_loss));
      Eigen::VectorXd critic_grad = Eigen::VectorXd::Zero(critic_.net().parameter_count());
      critic_.backward(cache, diff / static_cast<double>(b), critic_grad);
      critic_opt_.step(critic_.net().params(), critic_grad);
      critic_loss_sum += critic_loss;

      if (actor_active) actor_step(buf, idx, o, stats, actor_active, actor_loss_sum);
      if (iteration_hook_) iteration_hook_(o);
    }
    stats.critic_loss = stats.epochs_run > 0 ? critic_loss_sum / stats.epochs_run : 0.0;
    stats.actor_loss = stats.actor_updates > 0 ? actor_loss_sum / stats.actor_updates : 0.0;
    return stats;
  }

  /// One collect / target / update cycle; finished episodes are tagged with the
  /// statistics of the update that followed them.
  UpdateStats iterate() {
    RolloutBuffer buf = collect_rollout();
    compute_targets(buf);
    const UpdateStats stats = update(buf);
    for (auto& ep : pending_) {
      ep.kl_stop_epoch = stats.kl_stop_epoch;
      ep.actor_loss = stats.actor_loss;
      ep.critic_loss = stats.critic_loss;
      episodes_.push_back(ep);
    }
    pending_.clear();
    return stats;
  }

  /// Trains until at least total_steps environment steps have been taken.
  const std::vector<EpisodeRecord>& train(long total_steps,
                                          const std::function<void(const UpdateStats&)>& on_update = {}) {
    while (env_steps_ < total_steps) {
      const UpdateStats stats = iterate();
      if (on_update) on_update(stats);
    }
    return episodes_;
  }

  /// Called after every minibatch iteration of update() with its index.
  void set_iteration_hook(std::function<void(int)> hook) { iteration_hook_ = std::move(hook); }

 private:
  // One clipped-surrogate step on the minibatch, or a permanent stop once the
  // sampled KL reaches the target.
  void actor_step(const RolloutBuffer& buf, const std::vector<Eigen::Index>& idx, int o, UpdateStats& stats,
                bool& actor_active, double& actor_loss_sum) {
    const auto b = static_cast<Eigen::Index>(idx.size());
    const Eigen::MatrixXd obs_b = buf.obs(Eigen::all, idx);
    const Eigen::MatrixXd act_b = buf.actions(Eigen::all, idx);
    const auto eval = actor_.evaluate(obs_b, act_b);
    double kl = 0.0;
    for (Eigen::Index c = 0; c < b; ++c) kl += buf.old_log_prob[idx[c]] - eval.log_prob(0, c);
    kl /= b;
    if (kl >= cfg_.kl_target) {
      actor_active = false;
      stats.kl_stop_epoch = o;
      return;
    }
    Eigen::MatrixXd d_logp = Eigen::MatrixXd::Zero(actor_.head_count(), b);
    double objective = 0.0;
    for (Eigen::Index c = 0; c < b; ++c) {
      const auto i = idx[c];
      const double adv = buf.adv[i];
      const auto [w_main, w_aux] = actor_weights(buf.time[i]);
      for (int h = 0; h < actor_.head_count(); ++h) {
        const double w = h == 0 ? w_main : w_aux;
        const double ratio = std::exp(eval.log_prob(h, c) - buf.old_log_prob[i]);
        const Surrogate sur = clipped_surrogate(ratio, adv, cfg_.clip);
        objective += w * sur.value;
        d_logp(h, c) = -w * sur.slope / b;
      }
    }
    objective /= b;
    if (!std::isfinite(objective)) throw NonFiniteLoss(diagnostic("actor", o, objective));
    const Eigen::VectorXd actor_grad = actor_.backward(eval, d_logp);
    Eigen::VectorXd theta = actor_.get_params();
    actor_opt_.step(theta, actor_grad);
    actor_.set_params(theta);
    actor_loss_sum += -objective;
    ++stats.actor_updates;
  }

  void begin_episode() {
    obs_ = env_->reset();
    ep_return_ = 0.0;
    ep_discounted_ = 0.0;
    ep_weight_ = 1.0;
    ep_len_ = 0;
  }

  std::string diagnostic(const char* which, int iteration, double value) const {
    std::ostringstream os;
    os << which << " loss is " << value << " at minibatch " << iteration << " after " << env_steps_
       << " env steps (" << to_string(cfg_.algorithm) << ", actor_lr=" << cfg_.actor_lr
       << ", critic_lr=" << cfg_.critic_lr << ")";
    return os.str();
  }

  AgentConfig cfg_;
  HeadPlan plan_;
  std::unique_ptr<env::Env> env_;
  Rng rng_;
  Rng gen_rng_;
  nn::GaussianPolicy actor_;
  nn::MultiHeadCritic critic_;
  nn::Adam actor_opt_;
  nn::Adam critic_opt_;

  Eigen::VectorXd obs_;
  long env_steps_ = 0;
  double ep_return_ = 0.0;
  double ep_discounted_ = 0.0;
  double ep_weight_ = 1.0;
  int ep_len_ = 0;
  std::vector<EpisodeRecord> pending_;
  std::vector<EpisodeRecord> episodes_;
  std::function<void(int)> iteration_hook_;
};

}  // namespace gammalab::agent
