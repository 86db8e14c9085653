#include "recall/agent.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "recall/env.hpp"
#include "support.hpp"

namespace recall::agent {
namespace {

AcConfig small_config() {
  AcConfig cfg;
  cfg.hidden = {8, 8};
  return cfg;
}

// Hand-built trajectory in the four-room grid; rewards/done as given.
Trajectory fabricated_trajectory(const FourRoomEnv& env,
                                 const std::vector<double>& rewards) {
  Trajectory traj;
  State s = env.start_state();
  for (std::size_t t = 0; t < rewards.size(); ++t) {
    Transition tr;
    tr.s = s;
    tr.a = Action::discrete(int(t) % 4);
    tr.s_next = env.apply_move(s, int(t) % 4);
    tr.r = rewards[t];
    tr.done = t + 1 == rewards.size();
    s = tr.s_next;
    traj.steps.push_back(tr);
  }
  return traj;
}

TEST(PolicyCritic, ZeroedOutputLayerGivesUniformPolicy) {
  FourRoomEnv env(11);
  PolicyCritic pc(env, small_config(), 7);
  pc.policy_net().zero_output_layer();
  nn::CategoricalHead head = pc.policy_head(env.start_state());
  for (double p : head.probs()) EXPECT_DOUBLE_EQ(p, 0.25);

  Rng rng(3);
  auto [a, lp] = pc.act(env.start_state(), rng);
  EXPECT_GE(a.index, 0);
  EXPECT_LT(a.index, 4);
  EXPECT_DOUBLE_EQ(lp, std::log(0.25));
}

TEST(PolicyCritic, ActFrequenciesMatchPolicy) {
  FourRoomEnv env(11);
  PolicyCritic pc(env, small_config(), 21);
  State s = env.start_state();
  std::vector<double> probs = pc.policy_head(s).probs();

  Rng rng(4);
  const int n = 20000;
  std::vector<int> counts(4, 0);
  for (int i = 0; i < n; ++i) ++counts[std::size_t(pc.act(s, rng).first.index)];
  for (int k = 0; k < 4; ++k) {
    double sigma = std::sqrt(probs[std::size_t(k)] * (1 - probs[std::size_t(k)]) / n);
    EXPECT_NEAR(counts[std::size_t(k)] / double(n), probs[std::size_t(k)], 4 * sigma);
  }
}

TEST(PolicyCritic, GaeTelescopesWithFullLambda) {
  FourRoomEnv env(11);
  AcConfig cfg = small_config();
  cfg.gamma = 1.0;
  cfg.lambda = 1.0;
  PolicyCritic pc(env, cfg, 9);
  pc.value_net().zero_output_layer();  // V == 0 everywhere
  Trajectory traj = fabricated_trajectory(env, {0.0, 0.0, 1.0});
  std::vector<double> adv = pc.gae_advantages(traj);
  ASSERT_EQ(adv.size(), 3u);
  for (double a : adv) EXPECT_NEAR(a, 1.0, 1e-12);
}

TEST(PolicyCritic, GaeLambdaZeroIsOneStepTd) {
  FourRoomEnv env(11);
  AcConfig cfg = small_config();
  cfg.gamma = 1.0;
  cfg.lambda = 0.0;
  PolicyCritic pc(env, cfg, 9);
  pc.value_net().zero_output_layer();
  std::vector<double> adv = pc.gae_advantages(fabricated_trajectory(env, {0.0, 0.0, 1.0}));
  EXPECT_NEAR(adv[0], 0.0, 1e-12);
  EXPECT_NEAR(adv[1], 0.0, 1e-12);
  EXPECT_NEAR(adv[2], 1.0, 1e-12);
}

TEST(PolicyCritic, GaeMatchesBruteForceSum) {
  FourRoomEnv env(11);
  AcConfig cfg = small_config();
  cfg.gamma = 0.9;
  cfg.lambda = 0.7;
  PolicyCritic pc(env, cfg, 31);
  Trajectory traj = fabricated_trajectory(env, {0.3, -0.2, 0.0, 0.8, 0.1});

  std::vector<double> adv = pc.gae_advantages(traj);
  const std::size_t n = traj.size();
  std::vector<double> delta(n);
  for (std::size_t t = 0; t < n; ++t) {
    const Transition& tr = traj.steps[t];
    double vnext = tr.done ? 0.0 : pc.value(tr.s_next);
    delta[t] = tr.r + cfg.gamma * vnext - pc.value(tr.s);
  }
  for (std::size_t t = 0; t < n; ++t) {
    double sum = 0.0, w = 1.0;
    for (std::size_t l = t; l < n; ++l) {
      sum += w * delta[l];
      if (traj.steps[l].done) break;
      w *= cfg.gamma * cfg.lambda;
    }
    EXPECT_NEAR(adv[t], sum, 1e-10) << "t=" << t;
  }
}

TEST(PolicyCritic, GaeFullLambdaEqualsReturnMinusBaseline) {
  FourRoomEnv env(11);
  AcConfig cfg = small_config();
  cfg.gamma = 0.93;
  cfg.lambda = 1.0;
  PolicyCritic pc(env, cfg, 13);
  Trajectory traj = fabricated_trajectory(env, {0.1, 0.0, -0.4, 1.0});

  std::vector<double> adv = pc.gae_advantages(traj);
  for (std::size_t t = 0; t < traj.size(); ++t) {
    double g = 0.0, w = 1.0;
    for (std::size_t l = t; l < traj.size(); ++l) {
      g += w * traj.steps[l].r;
      w *= cfg.gamma;
    }
    EXPECT_NEAR(adv[t], g - pc.value(traj.steps[t].s), 1e-9);
  }
}

TEST(PolicyCritic, AcUpdateWithZeroAdvantagesLeavesParamsAlone) {
  FourRoomEnv env(11);
  AcConfig cfg = small_config();
  cfg.entropy_coef = 0.0;
  PolicyCritic pc(env, cfg, 17);
  pc.value_net().zero_output_layer();
  Trajectory traj = fabricated_trajectory(env, {0.0, 0.0, 0.0});

  std::vector<double> policy_before = pc.policy_net().flat_params();
  std::vector<double> value_before = pc.value_net().flat_params();
  pc.ac_update({traj});
  EXPECT_EQ(pc.policy_net().flat_params(), policy_before);
  EXPECT_EQ(pc.value_net().flat_params(), value_before);
}

TEST(PolicyCritic, PositiveAdvantageRaisesActionLogProb) {
  FourRoomEnv env(11);
  AcConfig cfg = small_config();
  cfg.entropy_coef = 0.0;
  cfg.alpha = 1e-3;
  PolicyCritic pc(env, cfg, 19);
  pc.value_net().zero_output_layer();
  Trajectory traj = fabricated_trajectory(env, {1.0});

  double before = pc.log_prob(traj.steps[0].s, traj.steps[0].a);
  pc.ac_update({traj});
  EXPECT_GT(pc.log_prob(traj.steps[0].s, traj.steps[0].a), before);
}

TEST(PolicyCritic, BanditConvergesToRewardedArm) {
  ChainMDP chain = make_bandit_chain();
  AcConfig cfg = small_config();
  cfg.alpha = 0.05;
  PolicyCritic pc(chain, cfg, 23);
  Rng rng(5);
  for (int episode = 0; episode < 500; ++episode) {
    State s = chain.reset(std::uint64_t(episode));
    auto [a, lp] = pc.act(s, rng);
    (void)lp;
    Trajectory traj;
    traj.steps.push_back(chain.step(s, a));
    pc.ac_update({traj});
  }
  State s0 = chain.reset(0);
  EXPECT_GT(pc.policy_head(s0).probs()[1], 0.95);
}

TEST(PolicyCritic, PerUpdateReportsPreUpdateTdErrors) {
  FourRoomEnv env(11);
  PolicyCritic pc(env, small_config(), 29);
  Trajectory traj = fabricated_trajectory(env, {0.0, 1.0, 0.0, 0.5});

  std::vector<double> expected;
  for (const Transition& t : traj.steps) {
    double vnext = t.done ? 0.0 : pc.value(t.s_next);
    expected.push_back(t.r + pc.config().gamma * vnext - pc.value(t.s));
  }
  std::vector<const Transition*> ptrs;
  for (const Transition& t : traj.steps) ptrs.push_back(&t);
  std::vector<double> weights(ptrs.size(), 1.0);
  std::vector<double> deltas;
  pc.per_update(ptrs, weights, &deltas);
  ASSERT_EQ(deltas.size(), expected.size());
  for (std::size_t i = 0; i < deltas.size(); ++i) EXPECT_DOUBLE_EQ(deltas[i], expected[i]);
}

TEST(PolicyCritic, ImitationUpdateLeavesValueNetUntouched) {
  FourRoomEnv env(11);
  PolicyCritic pc(env, small_config(), 37);
  std::vector<std::pair<State, Action>> pairs{
      {env.start_state(), Action::discrete(0)},
      {env.cell_state(2, 1), Action::discrete(3)},
  };
  std::vector<double> value_before = pc.value_net().flat_params();
  std::vector<double> policy_before = pc.policy_net().flat_params();
  double before_lp = pc.log_prob(pairs[0].first, pairs[0].second) +
                     pc.log_prob(pairs[1].first, pairs[1].second);
  double reported = pc.imitation_update(pairs, 1e-2);
  EXPECT_NEAR(reported, before_lp, 1e-12);
  EXPECT_EQ(pc.value_net().flat_params(), value_before);
  EXPECT_NE(pc.policy_net().flat_params(), policy_before);
  double after_lp = pc.log_prob(pairs[0].first, pairs[0].second) +
                    pc.log_prob(pairs[1].first, pairs[1].second);
  EXPECT_GT(after_lp, before_lp);
}

TEST(PolicyCritic, ContinuousPolicyPathIsFinite) {
  PointMassEnv env;
  AcConfig cfg = small_config();
  PolicyCritic pc(env, cfg, 41);
  Rng rng(6);
  Trajectory traj = testsupport::rollout(env, pc, rng, 0);
  ASSERT_FALSE(traj.empty());
  AcLosses losses = pc.ac_update({traj});
  EXPECT_TRUE(std::isfinite(losses.policy_loss));
  EXPECT_TRUE(std::isfinite(losses.value_loss));
  EXPECT_TRUE(std::isfinite(pc.log_std()[0]));

  auto [a, lp] = pc.act(env.reset(1), rng);
  EXPECT_EQ(a.vec.size(), 2u);
  EXPECT_TRUE(std::isfinite(lp));
}

TEST(PolicyCritic, UpdateGradientsMatchFiniteDifferences) {
  EXPECT_EQ(testsupport::agent_gradient_failures(4, 1e-4), 0);
}

TEST(PolicyCritic, HeadAccessorsEnforceActionKind) {
  FourRoomEnv grid(11);
  PointMassEnv point;
  PolicyCritic discrete_pc(grid, small_config(), 1);
  PolicyCritic continuous_pc(point, small_config(), 2);
  EXPECT_THROW(discrete_pc.policy_gaussian(grid.start_state()), std::logic_error);
  EXPECT_THROW(continuous_pc.policy_head(point.reset(0)), std::logic_error);
}

TEST(PolicyCritic, EmptyBatchesAreRejected) {
  FourRoomEnv env(11);
  PolicyCritic pc(env, small_config(), 3);
  EXPECT_THROW(pc.ac_update({}), std::invalid_argument);
  EXPECT_THROW(pc.imitation_update({}, 1e-2), std::invalid_argument);
  EXPECT_THROW(pc.per_update({}, {}, nullptr), std::invalid_argument);
}

}  // namespace
}  // namespace recall::agent
