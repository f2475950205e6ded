#include <gtest/gtest.h>

#include "gammalab/actor_critic.hpp"

using namespace gammalab;
using agent::Agent;
using agent::AgentConfig;
using agent::Algorithm;

namespace {

AgentConfig small(Algorithm alg) {
  AgentConfig c;
  c.algorithm = alg;
  c.rollout = 64;
  c.minibatch = 16;
  c.opt_iters = 12;
  c.hidden = 16;
  if (alg == Algorithm::PpoFhtd) c.horizon = 3;
  return c;
}

std::unique_ptr<env::Env> chain_env(int length, int t_max = 100) {
  return std::make_unique<env::TabularEnv>(env::chain_mdp(length, 5), t_max, 1, "chain");
}

class Opaque : public env::LineWorld {
 public:
  using LineWorld::LineWorld;
  bool supports_snapshot() const override { return false; }
};

struct Trace {
  std::vector<agent::EpisodeRecord> episodes;
  Eigen::VectorXd actor;
  Eigen::VectorXd critic;
};

Trace train(AgentConfig cfg, std::unique_ptr<env::Env> e, std::uint64_t seed, long steps) {
  Agent a(cfg, std::move(e), seed);
  a.train(steps);
  return {a.episodes(), a.actor().get_params(), a.critic().net().params()};
}

void expect_same_curves(const Trace& x, const Trace& y) {
  ASSERT_EQ(x.episodes.size(), y.episodes.size());
  for (std::size_t i = 0; i < x.episodes.size(); ++i) {
    EXPECT_EQ(x.episodes[i].env_steps, y.episodes[i].env_steps);
    EXPECT_EQ(x.episodes[i].return_raw, y.episodes[i].return_raw);
    EXPECT_EQ(x.episodes[i].actor_loss, y.episodes[i].actor_loss);
    EXPECT_EQ(x.episodes[i].critic_loss, y.episodes[i].critic_loss);
  }
}

}  // namespace

TEST(Config, Validation) {
  AgentConfig c;
  EXPECT_NO_THROW(c.validate());
  c.gamma_critic = 1.5;
  EXPECT_THROW(c.validate(), agent::InvalidConfig);
  c = {};
  c.horizon = 3;  // only for FHTD
  EXPECT_THROW(c.validate(), agent::InvalidConfig);
  c = {};
  c.algorithm = Algorithm::PpoFhtd;
  EXPECT_THROW(c.validate(), agent::InvalidConfig);
  c.horizon = 2;
  EXPECT_NO_THROW(c.validate());
  c = {};
  c.minibatch = 1000;
  EXPECT_THROW(c.validate(), agent::InvalidConfig);
  c = {};
  c.extra_transitions = 2;
  EXPECT_THROW(c.validate(), agent::InvalidConfig);
  EXPECT_EQ(agent::algorithm_from_string("aux-ppo"), Algorithm::AuxPpo);
  EXPECT_THROW(agent::algorithm_from_string("a2c"), agent::InvalidConfig);
}

TEST(Rollout, MasksAndTimesOnTwoStepEpisodes) {
  auto cfg = small(Algorithm::Ppo);
  cfg.rollout = 4;
  cfg.minibatch = 4;
  Agent a(cfg, chain_env(2), 1);
  const auto buf = a.collect_rollout();
  EXPECT_EQ(buf.masks, Eigen::Vector4d(1, 0, 1, 0));
  EXPECT_EQ(buf.time, (std::vector<int>{0, 1, 0, 1}));
}

TEST(Rollout, OneStepEpisodesAlwaysStartAtZero) {
  auto cfg = small(Algorithm::Ppo);
  Agent a(cfg, chain_env(1), 1);
  const auto buf = a.collect_rollout();
  for (int t : buf.time) EXPECT_EQ(t, 0);
  EXPECT_TRUE(buf.masks.isZero());
}

TEST(Rollout, TimeLimitZeroesTheMask) {
  auto cfg = small(Algorithm::Ppo);
  cfg.rollout = 10;
  cfg.minibatch = 5;
  Agent a(cfg, env::make_env("lineworld", 5, 1), 1);
  auto buf = a.collect_rollout();
  // The point mass cannot reach the goal in 5 steps from rest.
  EXPECT_EQ(buf.masks[4], 0.0);
  EXPECT_EQ(buf.masks[9], 0.0);
  EXPECT_EQ(buf.masks.sum(), 8.0);
}

TEST(Rollout, ExtraTransitionsPerIndex) {
  auto cfg = small(Algorithm::PpoTdEx);
  cfg.extra_transitions = 2;
  Agent a(cfg, env::make_env("noisy-lineworld", 100, 1), 1);
  const auto buf = a.collect_rollout();
  EXPECT_EQ(buf.transitions_per_index(), 3);
  ASSERT_EQ(buf.extra_rewards.size(), 2u);
  EXPECT_EQ(buf.extra_rewards[1].size(), cfg.rollout);
  // Rewards depend only on the source state, so every sample at an index agrees.
  EXPECT_EQ(buf.extra_rewards[0], buf.rewards);
  EXPECT_FALSE(buf.extra_next_obs[0] == buf.next_obs);

  Agent opaque(cfg, std::make_unique<Opaque>(100, 1), 1);
  EXPECT_THROW(opaque.collect_rollout(), agent::GenerativeUnavailable);
}

TEST(Targets, MonteCarloReturnsOnOneEpisode) {
  auto cfg = small(Algorithm::Ppo);
  cfg.gamma_critic = 1.0;
  cfg.rollout = 6;
  cfg.minibatch = 6;
  Agent a(cfg, chain_env(6), 1);
  auto buf = a.collect_rollout();
  a.compute_targets(buf);
  double tail = 0.0;
  for (int i = 5; i >= 0; --i) {
    tail += buf.rewards[i];
    EXPECT_NEAR(buf.returns[i], tail, 1e-15);
  }
}

TEST(Targets, BootstrapTailWhenRolloutEndsMidEpisode) {
  auto cfg = small(Algorithm::Ppo);
  cfg.gamma_critic = 0.9;
  cfg.rollout = 3;
  cfg.minibatch = 3;
  Agent a(cfg, chain_env(6), 1);
  auto buf = a.collect_rollout();
  a.compute_targets(buf);
  const double tail = a.critic().forward(Eigen::MatrixXd(buf.bootstrap_obs))(0, 0);
  EXPECT_NEAR(buf.returns[2], buf.rewards[2] + 0.9 * tail, 1e-14);
}

TEST(Targets, AdvantagesAreStandardized) {
  for (auto alg : {Algorithm::Ppo, Algorithm::PpoTd, Algorithm::PpoFhtd}) {
    Agent a(small(alg), env::make_env("lineworld", 100, 2), 2);
    auto buf = a.collect_rollout();
    a.compute_targets(buf);
    const double mean = buf.adv.mean();
    const double sd = std::sqrt((buf.adv.array() - mean).square().mean());
    EXPECT_LT(std::abs(mean), 1e-6);
    EXPECT_NEAR(sd, 1.0, 1e-6);
  }
  Eigen::VectorXd flat = Eigen::VectorXd::Constant(5, 0.3);
  agent::normalize_advantages(flat);
  EXPECT_EQ(flat, Eigen::VectorXd::Constant(5, 0.3));
}

TEST(Targets, AdvantageCoefficientDependsOnAlgorithm) {
  // TD error with gamma_C for PPO-TD; coefficient 1 on the bootstrap for PPO-TD-Ex.
  for (auto alg : {Algorithm::PpoTd, Algorithm::PpoTdEx}) {
    auto cfg = small(alg);
    cfg.gamma_critic = 0.5;
    Agent a(cfg, env::make_env("lineworld", 100, 3), 3);
    auto buf = a.collect_rollout();
    const Eigen::MatrixXd v = a.critic().forward(buf.obs);
    const Eigen::MatrixXd vn = a.critic().forward(buf.next_obs);
    const double coef = alg == Algorithm::PpoTd ? 0.5 : 1.0;
    Eigen::VectorXd raw(buf.size);
    for (int i = 0; i < buf.size; ++i) raw[i] = buf.rewards[i] + coef * buf.masks[i] * vn(0, i) - v(0, i);
    agent::normalize_advantages(raw);
    a.compute_targets(buf);
    EXPECT_LT((raw - buf.adv).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Targets, FirstFhtdHeadRegressesOnReward) {
  auto cfg = small(Algorithm::PpoFhtd);
  cfg.horizon = 4;
  Agent a(cfg, env::make_env("lineworld", 100, 3), 3);
  auto buf = a.collect_rollout();
  std::vector<Eigen::Index> idx{0, 5, 9};
  const Eigen::MatrixXd y = a.critic_targets(buf, idx);
  ASSERT_EQ(y.rows(), 4);
  const Eigen::MatrixXd vn = a.critic().forward(buf.next_obs(Eigen::all, idx));
  for (int c = 0; c < 3; ++c) {
    EXPECT_EQ(y(0, c), buf.rewards[idx[c]]);
    for (int h = 1; h < 4; ++h) EXPECT_EQ(y(h, c), buf.rewards[idx[c]] + buf.masks[idx[c]] * vn(h - 1, c));
  }
}

TEST(Targets, SingleExtraSampleOnDeterministicEnvMatchesTd) {
  auto ex = small(Algorithm::PpoTdEx);
  ex.extra_transitions = 1;
  Agent a(ex, chain_env(8), 4);
  Agent b(small(Algorithm::PpoTd), chain_env(8), 4);
  b.critic().net().params() = a.critic().net().params();
  auto buf = a.collect_rollout();
  std::vector<Eigen::Index> idx(buf.size);
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  EXPECT_EQ(a.critic_targets(buf, idx), b.critic_targets(buf, idx));
}

TEST(Surrogate, ClipArithmetic) {
  auto s = agent::clipped_surrogate(1.5, 2.0, 0.2);
  EXPECT_DOUBLE_EQ(s.value, 1.2 * 2.0);
  EXPECT_EQ(s.slope, 0.0);
  s = agent::clipped_surrogate(1.5, -2.0, 0.2);
  EXPECT_DOUBLE_EQ(s.value, -3.0);
  EXPECT_DOUBLE_EQ(s.slope, -3.0);
  s = agent::clipped_surrogate(1.0, 0.7, 0.2);
  EXPECT_EQ(s.value, 0.7);
  EXPECT_EQ(s.slope, 0.7);  // vanilla policy-gradient weight at ratio 1
  s = agent::clipped_surrogate(0.5, 1.0, 0.2);
  EXPECT_EQ(s.value, 0.5);
}

TEST(Update, FirstIterationAlwaysMovesTheActor) {
  Agent a(small(Algorithm::Ppo), env::make_env("lineworld", 100, 1), 1);
  auto buf = a.collect_rollout();
  a.compute_targets(buf);
  const auto before = a.actor().get_params();
  const auto stats = a.update(buf);
  EXPECT_EQ(stats.epochs_run, 12);
  EXPECT_GE(stats.actor_updates, 1);
  EXPECT_FALSE(a.actor().get_params() == before);
}

TEST(Update, KlStopFreezesTheActorButNotTheCritic) {
  auto cfg = small(Algorithm::Ppo);
  cfg.kl_target = 1e-9;
  cfg.actor_lr = 1e-2;
  Agent a(cfg, env::make_env("lineworld", 100, 1), 1);
  auto buf = a.collect_rollout();
  a.compute_targets(buf);
  std::vector<Eigen::VectorXd> actor, critic;
  a.set_iteration_hook([&](int) {
    actor.push_back(a.actor().get_params());
    critic.push_back(a.critic().net().params());
  });
  const auto stats = a.update(buf);
  ASSERT_GE(stats.kl_stop_epoch, 1);
  EXPECT_EQ(stats.actor_updates, stats.kl_stop_epoch);
  for (std::size_t o = stats.kl_stop_epoch; o < actor.size(); ++o) EXPECT_TRUE(actor[o] == actor[stats.kl_stop_epoch - 1]);
  EXPECT_FALSE(critic.back() == critic[stats.kl_stop_epoch - 1]);
}

TEST(Update, AuxHeadIsResyncedEveryRollout) {
  auto cfg = small(Algorithm::AuxPpo);
  cfg.gamma_critic = 0.5;
  Agent a(cfg, env::make_env("lineworld", 100, 1), 1);
  a.iterate();
  EXPECT_FALSE(a.actor().head(1).params() == a.actor().head(0).params());
  a.collect_rollout();
  EXPECT_TRUE(a.actor().head(1).params() == a.actor().head(0).params());
  EXPECT_TRUE(a.actor().log_std(1) == a.actor().log_std(0));
}

TEST(Update, NonFiniteLossAborts) {
  Agent a(small(Algorithm::PpoTd), env::make_env("lineworld", 100, 1), 1);
  auto buf = a.collect_rollout();
  a.compute_targets(buf);
  buf.rewards[3] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(a.update(buf), agent::NonFiniteLoss);
}

TEST(HeadPlan, Layouts) {
  auto cfg = small(Algorithm::PpoFhtd);
  cfg.horizon = 8;
  auto plan = agent::fhtd_heads(cfg, 100);
  EXPECT_EQ(plan.heads, 8);
  EXPECT_EQ(plan.actor_head, 7);
  cfg.horizon = 1;
  EXPECT_EQ(agent::fhtd_heads(cfg, 100).heads, 1);
  cfg.parameterization = agent::FhtdParameterization::Full;
  cfg.horizon = 50;
  plan = agent::fhtd_heads(cfg, 100);
  EXPECT_EQ(plan.heads, 124);
  EXPECT_EQ(plan.actor_head, 49);
  cfg.full_heads = 40;
  EXPECT_THROW(agent::fhtd_heads(cfg, 100), agent::HExceedsHeads);
  EXPECT_EQ(agent::fhtd_heads(small(Algorithm::Ppo), 100).heads, 1);
}

TEST(Decomposition, Identity) {
  const Eigen::Vector3d g(0.3, -1.2, 2.5);
  auto d = agent::aux_decomposition_check(1.7, g, 0.9, 0);
  EXPECT_TRUE(d.aux_term.isZero());
  EXPECT_EQ(d.main_term, 1.7 * g);
  d = agent::aux_decomposition_check(1.7, g, 0.9, 299);
  EXPECT_LT(std::pow(0.9, 299), 0.05);
  EXPECT_GT(d.aux_term.norm() / (1.7 * g).norm(), 0.95);

  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 10000; ++trial) {
    Eigen::VectorXd grad(4);
    for (auto& e : grad) e = n(rng);
    const double q = 10 * n(rng);
    const auto dd = agent::aux_decomposition_check(q, grad, u(rng), trial % 400);
    const Eigen::VectorXd full = q * grad;
    for (int i = 0; i < 4; ++i)
      EXPECT_LE(std::abs(dd.main_term[i] + dd.aux_term[i] - full[i]),
                2 * std::numeric_limits<double>::epsilon() * std::abs(full[i]));
  }
}

TEST(Equivalence, DisPpoWithUnitDiscountIsPpo) {
  auto ppo = small(Algorithm::Ppo);
  auto dis = small(Algorithm::DisPpo);
  dis.gamma_actor = 1.0;
  const auto x = train(ppo, env::make_env("lineworld", 50, 7), 7, 2000);
  const auto y = train(dis, env::make_env("lineworld", 50, 7), 7, 2000);
  expect_same_curves(x, y);
  EXPECT_TRUE(x.actor == y.actor);
}

TEST(Equivalence, TdExWithoutExtrasIsTd) {
  auto td = small(Algorithm::PpoTd);
  auto ex = small(Algorithm::PpoTdEx);
  td.gamma_critic = ex.gamma_critic = 1.0;
  const auto x = train(td, env::make_env("lineworld", 50, 8), 8, 2000);
  const auto y = train(ex, env::make_env("lineworld", 50, 8), 8, 2000);
  expect_same_curves(x, y);
  EXPECT_TRUE(x.critic == y.critic);
}

TEST(Equivalence, AuxPpoControlHeadWithUnitDiscountIsDisPpo) {
  auto dis = small(Algorithm::DisPpo);
  auto aux = small(Algorithm::AuxPpo);
  dis.gamma_actor = 1.0;
  dis.gamma_critic = aux.gamma_critic = 1.0;
  Agent a(dis, env::make_env("lineworld", 50, 9), 9);
  Agent b(aux, env::make_env("lineworld", 50, 9), 9);
  a.train(2000);
  b.train(2000);
  ASSERT_EQ(a.episodes().size(), b.episodes().size());
  for (std::size_t i = 0; i < a.episodes().size(); ++i)
    EXPECT_EQ(a.episodes()[i].return_raw, b.episodes()[i].return_raw);
  EXPECT_TRUE(a.actor().trunk().params() == b.actor().trunk().params());
  EXPECT_TRUE(a.actor().head(0).params() == b.actor().head(0).params());
  EXPECT_TRUE(a.actor().log_std(0) == b.actor().log_std(0));
}

TEST(Training, DeterministicPerSeed) {
  const auto x = train(small(Algorithm::PpoFhtd), env::make_env("noisy-lineworld", 50, 1), 1, 1500);
  const auto y = train(small(Algorithm::PpoFhtd), env::make_env("noisy-lineworld", 50, 1), 1, 1500);
  expect_same_curves(x, y);
  const auto z = train(small(Algorithm::PpoFhtd), env::make_env("noisy-lineworld", 50, 1), 2, 1500);
  EXPECT_FALSE(x.actor == z.actor);
}

TEST(Training, EpisodeRecordsAreConsistent) {
  auto cfg = small(Algorithm::Ppo);
  cfg.metric_gamma = 0.5;
  Agent a(cfg, chain_env(4), 1);
  a.train(640);
  const auto& m = dynamic_cast<env::TabularEnv&>(a.environment()).exact_mdp();
  double raw = 0.0, disc = 0.0, w = 1.0;
  for (int i = 0; i < 4; ++i, w *= 0.5) {
    raw += m.reward[i];
    disc += w * m.reward[i];
  }
  ASSERT_EQ(a.episodes().size(), 160u);
  long last = 0;
  for (const auto& ep : a.episodes()) {
    EXPECT_EQ(ep.length, 4);
    EXPECT_NEAR(ep.return_raw, raw, 1e-12);
    EXPECT_NEAR(ep.return_discounted, disc, 1e-12);
    EXPECT_EQ(ep.env_steps, last + 4);
    last = ep.env_steps;
  }
}

TEST(Fhtd, FullBankHeadTracksUndiscountedValues) {
  // Control-free chain: head H >= episode length estimates the undiscounted return.
  auto cfg = small(Algorithm::PpoFhtd);
  cfg.parameterization = agent::FhtdParameterization::Full;
  cfg.horizon = 8;
  cfg.full_heads = 8;
  cfg.hidden = 32;
  cfg.critic_lr = 1e-3;
  Agent a(cfg, chain_env(6, 20), 1);
  a.train(60000);
  auto& e = dynamic_cast<env::TabularEnv&>(a.environment());
  const auto& m = e.exact_mdp();
  const auto v = mdp::solve_values(m, mdp::TabularPolicy::uniform(m.n_states, 1), 1.0).v;
  for (int s = 0; s < 6; ++s) {
    const Eigen::MatrixXd obs = e.observe({{double(s)}, s, false});
    EXPECT_NEAR(a.critic().forward(obs)(7, 0), v[s], 0.05 * std::max(1.0, std::abs(v[s]))) << "state " << s;
  }
}
