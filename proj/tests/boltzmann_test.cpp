#include "recall/boltzmann.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "recall/util.hpp"

namespace recall::boltzmann {
namespace {

BoltzmannTask one_context(std::vector<double> rewards, double temperature) {
  BoltzmannTask task;
  task.context_probs = {1.0};
  task.rewards = {std::move(rewards)};
  task.temperature = temperature;
  return task;
}

double entropy_of(const std::vector<double>& probs) {
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

// ---------------------------------------------------------------------------
// Target distribution

TEST(BoltzmannTargetTest, MatchesTheSoftmaxOracle) {
  TargetDist t = boltzmann_target(one_context({0.0, 1.0, 2.0}, 1.0), 0);
  ASSERT_EQ(t.probs.size(), 3u);
  EXPECT_NEAR(t.probs[0], 0.09003057317038046, 1e-15);
  EXPECT_NEAR(t.probs[1], 0.24472847105479764, 1e-15);
  EXPECT_NEAR(t.probs[2], 0.6652409557748219, 1e-15);
  EXPECT_NEAR(t.log_z, std::log(1.0 + std::exp(1.0) + std::exp(2.0)), 1e-12);

  // Doubling the temperature is halving the logits.
  TargetDist half = boltzmann_target(one_context({0.0, 1.0, 2.0}, 2.0), 0);
  TargetDist same = boltzmann_target(one_context({0.0, 0.5, 1.0}, 1.0), 0);
  for (std::size_t a = 0; a < 3; ++a) {
    EXPECT_NEAR(half.probs[a], same.probs[a], 1e-15);
  }
}

TEST(BoltzmannTargetTest, RewardShiftsLeaveProbabilitiesAlone) {
  const double temp = 0.7, shift = 5.0;
  TargetDist base = boltzmann_target(one_context({0.3, -0.2, 0.7}, temp), 0);
  TargetDist moved =
      boltzmann_target(one_context({5.3, 4.8, 5.7}, temp), 0);
  for (std::size_t a = 0; a < 3; ++a) {
    EXPECT_NEAR(moved.probs[a], base.probs[a], 1e-12);
  }
  EXPECT_NEAR(moved.log_z - base.log_z, shift / temp, 1e-9);

  // Better actions always get more mass.
  EXPECT_GT(base.probs[2], base.probs[0]);
  EXPECT_GT(base.probs[0], base.probs[1]);
}

TEST(BoltzmannTargetTest, TemperatureLimitsAreUniformAndGreedy) {
  TargetDist hot = boltzmann_target(one_context({0.0, 1.0, 2.0}, 1e9), 0);
  for (double p : hot.probs) EXPECT_NEAR(p, 1.0 / 3.0, 1e-6);

  TargetDist cold = boltzmann_target(one_context({0.0, 1.0, 2.0}, 1e-6), 0);
  EXPECT_GT(cold.probs[2], 0.999999);

  BoltzmannTask frozen = one_context({0.0, 1.0}, 0.0);
  EXPECT_THROW(boltzmann_target(frozen, 0), std::invalid_argument);
  EXPECT_THROW(boltzmann_target(one_context({0.0}, 1.0), 3),
               std::invalid_argument);
}

TEST(BoltzmannTargetTest, EntropySharpensAsTemperatureDrops) {
  double prev = std::log(3.0) + 1e-12;
  for (double temp : {10.0, 3.0, 1.0, 0.3, 0.1, 0.03}) {
    double h = entropy_of(
        boltzmann_target(one_context({0.2, -0.4, 0.9}, temp), 0).probs);
    EXPECT_LE(h, prev + 1e-12) << "T " << temp;
    prev = h;
  }
}

TEST(BoltzmannTargetTest, TaskValidationCatchesBadInputs) {
  auto expect_bad = [](BoltzmannTask task) {
    EXPECT_THROW(task.validate(), std::invalid_argument);
  };
  expect_bad(BoltzmannTask{});
  expect_bad({{0.5, 0.5}, {{1.0, 2.0}}, 1.0});          // ragged vs contexts
  expect_bad({{0.7, 0.7}, {{1.0}, {2.0}}, 1.0});        // probs sum to 1.4
  expect_bad({{1.5, -0.5}, {{1.0}, {2.0}}, 1.0});       // negative prob
  expect_bad({{1.0}, {{std::nan("")}}, 1.0});           // non-finite reward
  expect_bad({{1.0}, {{1.0, 2.0}}, 0.0});               // frozen temperature
  expect_bad({{1.0}, {{1.0}, {2.0}}, 1.0});             // extra reward row
  expect_bad({{1.0}, {{}}, 1.0});                       // no actions

  Rng rng(7);
  BoltzmannTask task = BoltzmannTask::random(3, 4, rng);
  EXPECT_NO_THROW(task.validate());
  EXPECT_EQ(task.n_contexts(), 3);
  EXPECT_EQ(task.n_actions(), 4);
  EXPECT_THROW(BoltzmannTask::random(0, 4, rng), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Policy scoring

TEST(SoftPolicyTest, UniformInitScoresKnownValues) {
  BoltzmannTask task;
  task.context_probs = {0.4, 0.6};
  task.rewards = {{1.0, 2.0, 3.0}, {0.0, 0.0, 6.0}};
  SoftPolicy policy(2, 3);

  for (double p : policy.probs(0)) EXPECT_NEAR(p, 1.0 / 3.0, 1e-15);
  // Both rows average to 2, so any context mix gives J = 2.
  EXPECT_NEAR(expected_reward(task, policy), 2.0, 1e-15);
  EXPECT_NEAR(policy_entropy(task, policy), std::log(3.0), 1e-12);
}

TEST(SoftPolicyTest, SaturatedLogitsActDeterministically) {
  BoltzmannTask task;
  task.context_probs = {0.4, 0.6};
  task.rewards = {{1.0, 2.0, 3.0}, {5.0, 0.0, 6.0}};
  SoftPolicy policy(2, 3);
  policy.set_logits(0, {1000.0, 0.0, 0.0});
  policy.set_logits(1, {1000.0, 0.0, 0.0});

  EXPECT_EQ(policy.probs(0)[0], 1.0);
  EXPECT_NEAR(expected_reward(task, policy), 0.4 * 1.0 + 0.6 * 5.0, 1e-12);
  EXPECT_NEAR(policy_entropy(task, policy), 0.0, 1e-12);
}

TEST(SoftPolicyTest, ValidatesShapesAndIndices) {
  EXPECT_THROW(SoftPolicy(0, 3), std::invalid_argument);
  EXPECT_THROW(SoftPolicy(2, 0), std::invalid_argument);

  SoftPolicy policy(2, 3);
  EXPECT_THROW(policy.probs(2), std::invalid_argument);
  EXPECT_THROW(policy.set_logits(0, {1.0}), std::invalid_argument);
  EXPECT_THROW(policy.nudge_logits(-1, {1.0, 0.0, 0.0}, 0.1),
               std::invalid_argument);

  double total = 0.0;
  for (double lp : policy.log_probs(1)) total += std::exp(lp);
  EXPECT_NEAR(total, 1.0, 1e-12);
}

// ---------------------------------------------------------------------------
// Free-energy identity KL = -J/T - S + E[log Z]

TEST(FreeEnergyTest, IdentityHoldsOnRandomInstances) {
  Rng rng(101);
  std::uniform_int_distribution<int> n_ctx(1, 4);
  std::uniform_int_distribution<int> n_act(2, 5);
  std::uniform_real_distribution<double> log_temp(std::log(0.05), std::log(20.0));
  std::normal_distribution<double> logit(0.0, 2.0);

  for (int trial = 0; trial < 100; ++trial) {
    BoltzmannTask task = BoltzmannTask::random(n_ctx(rng), n_act(rng), rng);
    task.temperature = std::exp(log_temp(rng));
    SoftPolicy policy(task.n_contexts(), task.n_actions());
    for (int s = 0; s < task.n_contexts(); ++s) {
      std::vector<double> row(std::size_t(task.n_actions()));
      for (double& v : row) v = logit(rng);
      policy.set_logits(s, row);
    }

    FreeEnergyReport rep = free_energy_decomposition(task, policy);
    double rhs = -rep.j_r / task.temperature - rep.entropy + rep.log_z_term;
    EXPECT_NEAR(rep.kl, rhs, 1e-9) << "trial " << trial;
    EXPECT_GE(rep.kl, -1e-12);
  }
}

TEST(FreeEnergyTest, TargetPolicyHasZeroDivergence) {
  Rng rng(11);
  BoltzmannTask task = BoltzmannTask::random(3, 4, rng);
  task.temperature = 0.8;
  SoftPolicy policy(3, 4);
  for (int s = 0; s < 3; ++s) {
    std::vector<double> logits(4);
    for (int a = 0; a < 4; ++a) {
      logits[std::size_t(a)] = task.rewards[std::size_t(s)][std::size_t(a)] / task.temperature;
    }
    policy.set_logits(s, logits);
  }

  FreeEnergyReport rep = free_energy_decomposition(task, policy);
  EXPECT_NEAR(rep.kl, 0.0, 1e-12);
  EXPECT_NEAR(rep.j_r / task.temperature + rep.entropy, rep.log_z_term, 1e-9);
}

TEST(FreeEnergyTest, KlDescentConvergesToTheTarget) {
  BoltzmannTask task;
  task.context_probs = {0.5, 0.3, 0.2};
  task.rewards = {{0.4, -0.6, 0.1, 0.9},
                  {-1.0, 0.2, 0.5, -0.3},
                  {0.0, 0.8, -0.2, 0.3}};
  task.temperature = 0.8;
  SoftPolicy policy(3, 4);

  double prev = free_energy_decomposition(task, policy).kl;
  for (int step = 0; step < 3000; ++step) {
    double reported = kl_descent_step(task, policy, 0.2);
    if (step == 0) EXPECT_NEAR(reported, prev, 1e-12);  // pre-step value
    EXPECT_LE(reported, prev + 1e-9) << "step " << step;
    prev = reported;
  }
  EXPECT_LT(free_energy_decomposition(task, policy).kl, 1e-6);
  for (int s = 0; s < 3; ++s) {
    TargetDist target = boltzmann_target(task, s);
    std::vector<double> pi = policy.probs(s);
    for (int a = 0; a < 4; ++a) {
      EXPECT_NEAR(pi[std::size_t(a)], target.probs[std::size_t(a)], 1e-4);
    }
  }

  EXPECT_THROW(kl_descent_step(task, policy, 0.0), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Temperature schedule and annealed training

TEST(AnnealTest, ScheduleFollowsDecayDownToTheFloor) {
  std::vector<double> sched = temperature_schedule(1000, 1.0, 0.995, 0.01);
  ASSERT_EQ(sched.size(), 1000u);
  EXPECT_DOUBLE_EQ(sched[0], 1.0);
  for (int k : {1, 10, 500}) {
    EXPECT_NEAR(sched[std::size_t(k)], std::pow(0.995, k), 1e-12) << "k " << k;
  }
  EXPECT_DOUBLE_EQ(sched[999], 0.01);  // 0.995^999 is below the floor
  for (std::size_t k = 1; k < sched.size(); ++k) {
    EXPECT_LE(sched[k], sched[k - 1]);
    EXPECT_GT(sched[k], 0.0);
  }

  EXPECT_THROW(temperature_schedule(0), std::invalid_argument);
  EXPECT_THROW(temperature_schedule(10, 0.0), std::invalid_argument);
  EXPECT_THROW(temperature_schedule(10, 1.0, 1.1), std::invalid_argument);
  EXPECT_THROW(temperature_schedule(10, 1.0, 0.995, 0.0), std::invalid_argument);
}

TEST(AnnealTest, TrainingTracksTheScheduleAndSharpens) {
  Rng rng(31);
  BoltzmannTask task = BoltzmannTask::random(2, 3, rng);
  SoftPolicy policy(2, 3);
  std::vector<double> sched = temperature_schedule(500, 1.0, 0.99, 0.05);

  std::vector<AnnealPoint> history = anneal_train(task, policy, sched, 0.5);
  ASSERT_EQ(history.size(), sched.size());
  for (std::size_t k = 0; k < history.size(); ++k) {
    EXPECT_EQ(history[k].step, int(k));
    EXPECT_DOUBLE_EQ(history[k].temperature, sched[k]);
  }
  // One small step away from uniform.
  EXPECT_NEAR(history.front().entropy, std::log(3.0), 0.1);
  // The cooled policy is sharper and better-paid than the uniform start.
  EXPECT_LT(history.back().entropy, history.front().entropy);
  EXPECT_GT(history.back().j_r, history.front().j_r);
  EXPECT_LT(history.back().kl, 0.05);
}

TEST(AnnealTest, FixedLowTemperatureGoesGreedy) {
  BoltzmannTask task;
  task.context_probs = {0.5, 0.5};
  task.rewards = {{0.1, 0.9, 0.5}, {0.7, 0.2, 0.4}};
  SoftPolicy policy(2, 3);
  std::vector<double> sched(2000, 0.01);

  anneal_train(task, policy, sched, 0.5);
  EXPECT_GT(policy.probs(0)[1], 0.99);
  EXPECT_GT(policy.probs(1)[0], 0.99);
}

TEST(AnnealTest, HugeTemperatureKeepsThePolicyUniform) {
  BoltzmannTask task;
  task.context_probs = {1.0};
  task.rewards = {{0.1, 0.9, 0.5}};
  SoftPolicy policy(1, 3);
  std::vector<double> sched(200, 1e6);

  anneal_train(task, policy, sched, 0.5);
  for (double p : policy.probs(0)) EXPECT_NEAR(p, 1.0 / 3.0, 1e-3);
}

TEST(AnnealTest, AnnealingBeatsAFixedHighTemperature) {
  int wins = 0;
  std::vector<double> diffs;
  for (int seed = 0; seed < 5; ++seed) {
    Rng rng(100 + std::uint64_t(seed));
    BoltzmannTask task = BoltzmannTask::random(3, 4, rng);

    SoftPolicy annealed(3, 4);
    anneal_train(task, annealed, temperature_schedule(600, 1.0, 0.99, 0.05), 0.5);
    double j_annealed = expected_reward(task, annealed);

    SoftPolicy fixed(3, 4);
    anneal_train(task, fixed, std::vector<double>(600, 1.0), 0.5);
    double j_fixed = expected_reward(task, fixed);

    diffs.push_back(j_annealed - j_fixed);
    if (j_annealed > j_fixed) ++wins;
  }
  std::sort(diffs.begin(), diffs.end());
  EXPECT_GT(diffs[2], 0.0);  // median of 5
  EXPECT_GE(wins, 4);
}

TEST(AnnealTest, RejectsMalformedSchedules) {
  BoltzmannTask task = one_context({0.1, 0.9}, 1.0);
  SoftPolicy policy(1, 2);
  EXPECT_THROW(anneal_train(task, policy, {}, 0.5), std::invalid_argument);
  EXPECT_THROW(anneal_train(task, policy, {1.0, 2.0}, 0.5),
               std::invalid_argument);
  EXPECT_THROW(anneal_train(task, policy, {1.0, 0.0}, 0.5),
               std::invalid_argument);
}

}  // namespace
}  // namespace recall::boltzmann
