#include "recall/backtrack.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <memory>
#include <numbers>
#include <random>
#include <vector>

#include "support.hpp"

namespace recall::backtrack {
namespace {

Transition make_transition(const FourRoomEnv& env, const State& s, int a) {
  Transition t;
  t.s = s;
  t.a = Action::discrete(a);
  t.s_next = env.apply_move(s, a);
  return t;
}

// A transition from the start cell that actually moves.
Transition moving_transition(const FourRoomEnv& env) {
  State s = env.start_state();
  for (int a = 0; a < 4; ++a) {
    if (env.apply_move(s, a) != s) return make_transition(env, s, a);
  }
  throw std::logic_error("start cell has no open neighbor");
}

TEST(Normalizer, FitRoundTripsWithinTolerance) {
  Rng rng(1);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < 50; ++i) {
    rows.push_back({3.0 + 2.0 * noise(rng), -1.0 + 0.5 * noise(rng)});
  }
  Normalizer n = Normalizer::fit(rows, 2);
  for (const auto& r : rows) {
    std::vector<double> back = n.unnormalize(n.normalize(r));
    EXPECT_NEAR(back[0], r[0], 1e-9);
    EXPECT_NEAR(back[1], r[1], 1e-9);
    std::vector<double> d = n.unscale(n.scale(r));
    EXPECT_NEAR(d[0], r[0], 1e-9);
    EXPECT_NEAR(d[1], r[1], 1e-9);
  }
  // Normalized data has zero mean, unit variance.
  double m0 = 0.0;
  for (const auto& r : rows) m0 += n.normalize(r)[0];
  EXPECT_NEAR(m0 / double(rows.size()), 0.0, 1e-9);
}

TEST(Normalizer, ConstantColumnFloorsStdAndStaysExact) {
  std::vector<std::vector<double>> rows(10, std::vector<double>{4.0});
  Normalizer n = Normalizer::fit(rows, 1);
  EXPECT_DOUBLE_EQ(n.std[0], 1e-6);
  EXPECT_DOUBLE_EQ(n.normalize({4.0})[0], 0.0);
  EXPECT_DOUBLE_EQ(n.unnormalize({0.0})[0], 4.0);
  EXPECT_DOUBLE_EQ(Normalizer::fit({}, 1).std[0], 1.0);  // empty -> identity
}

TEST(BacktrackModel, UniformHeadsScoreByCounting) {
  // Zeroed output layers make both heads exactly uniform: 4 actions and 5
  // candidate predecessor cells give a length-1 loss of log(1/4) + log(1/5).
  FourRoomEnv env(7);
  BacktrackModel model(env, BacktrackConfig{}, 3);
  model.action_net().zero_output_layer();
  model.state_net().zero_output_layer();

  Trajectory traj;
  traj.steps.push_back(moving_transition(env));
  EXPECT_NEAR(model.backtrack_loss(traj), std::log(0.25) + std::log(0.2), 1e-12);
  EXPECT_NEAR(model.backtrack_loss(traj), -2.995732273553991, 1e-12);
}

TEST(BacktrackModel, GaussianHeadsAtMeanScoreTheNormalizingConstant) {
  // Zeroed outputs: action head mean 0 (fixed unit variance), state head
  // mean 0 / log-std 0. A zero action and zero delta land exactly on both
  // means, so each 2-dim head contributes -log(2 pi).
  PointMassEnv env;
  BacktrackModel model(env, BacktrackConfig{}, 4);
  model.action_net().zero_output_layer();
  model.state_net().zero_output_layer();

  Trajectory traj;
  Transition t;
  t.s = {0.2, -0.3};
  t.a = Action::continuous({0.0, 0.0});
  t.s_next = t.s;  // zero delta
  traj.steps.push_back(t);
  EXPECT_NEAR(model.backtrack_loss(traj), -2.0 * std::log(2.0 * std::numbers::pi), 1e-12);
  EXPECT_NEAR(model.backtrack_loss(traj), 4.0 * -0.9189385332046727, 1e-12);
}

TEST(BacktrackModel, LossIsSumOfHeadLogProbs) {
  FourRoomEnv grid(7);
  BacktrackModel discrete(grid, BacktrackConfig{}, 5);
  Trajectory traj;
  State s = grid.start_state();
  for (int a : {FourRoomEnv::kRight, FourRoomEnv::kDown, FourRoomEnv::kRight, FourRoomEnv::kUp}) {
    Transition t = make_transition(grid, s, a);
    s = t.s_next;
    traj.steps.push_back(t);
  }
  double total = 0.0;
  for (const Transition& t : traj.steps) {
    total += discrete.action_log_prob(t.s_next, t.a) +
             discrete.state_log_prob(t.s, t.a, t.s_next);
  }
  EXPECT_NEAR(discrete.backtrack_loss(traj), total, 1e-9);

  PointMassEnv pm;
  BacktrackModel continuous(pm, BacktrackConfig{}, 6);
  Trajectory ctraj;
  Rng rng(7);
  std::normal_distribution<double> noise(0.0, 0.05);
  State cs = {0.1, 0.1};
  for (int i = 0; i < 3; ++i) {
    Transition t;
    t.s = cs;
    t.a = Action::continuous({noise(rng), noise(rng)});
    t.s_next = {cs[0] + t.a.vec[0], cs[1] + t.a.vec[1]};
    cs = t.s_next;
    ctraj.steps.push_back(t);
  }
  double ctotal = 0.0;
  for (const Transition& t : ctraj.steps) {
    ctotal += continuous.action_log_prob(t.s_next, t.a) +
              continuous.state_log_prob(t.s, t.a, t.s_next);
  }
  EXPECT_NEAR(continuous.backtrack_loss(ctraj), ctotal, 1e-9);
}

TEST(BacktrackModel, RejectsBadInputs) {
  FourRoomEnv env(7);
  BacktrackModel model(env, BacktrackConfig{}, 8);
  EXPECT_THROW(model.backtrack_loss(Trajectory{}), std::invalid_argument);
  // A state outside the candidate neighborhood of s_next is a logic error.
  EXPECT_THROW(
      model.state_log_prob(env.goal_state(), Action::discrete(0), env.start_state()),
      std::logic_error);
  Rng rng(9);
  EXPECT_THROW(model.generate_trace(env.start_state(), 0, rng), std::invalid_argument);

  BacktrackConfig true_state;
  true_state.use_true_state_predictor = true;
  PointMassEnv pm;
  EXPECT_THROW(BacktrackModel(pm, true_state, 10), std::invalid_argument);
}

TEST(BacktrackModel, TrainIsNoOpWithoutDataOrSteps) {
  FourRoomEnv env(7);
  BacktrackModel model(env, BacktrackConfig{}, 11);
  std::vector<double> before = model.action_net().flat_params();
  Rng rng(12);
  EXPECT_TRUE(model.train({}, 100, rng).empty());
  std::vector<Transition> data{moving_transition(env)};
  EXPECT_TRUE(model.train(data, 0, rng).empty());
  EXPECT_EQ(model.action_net().flat_params(), before);
}

TEST(BacktrackModel, RepeatedTransitionLossIsNonIncreasing) {
  FourRoomEnv env(7);
  BacktrackConfig cfg;
  cfg.hidden = {8, 8};
  cfg.beta = 0.1;
  cfg.grad_clip = 0.0;
  BacktrackModel model(env, cfg, 13);
  std::vector<Transition> data{moving_transition(env)};
  Rng rng(14);
  std::vector<double> history = model.train(data, 200, rng);
  ASSERT_EQ(history.size(), 200u);
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t w = 0; w + 50 <= history.size(); w += 50) {
    double mean = 0.0;
    for (std::size_t i = w; i < w + 50; ++i) mean += history[i];
    mean /= 50.0;
    EXPECT_LE(mean, prev + 1e-12) << "window at " << w;
    prev = mean;
  }
  EXPECT_LT(history.back(), history.front());
}

TEST(BacktrackModel, TrainingReachesTheCountingEntropyBound) {
  // Deterministic 3-state line; the minimum achievable NLL is the empirical
  // conditional entropy of the backward frequencies, computed by counting.
  ChainMDP chain = make_deterministic_line(3, 10);
  std::vector<Transition> data;
  auto push = [&](int s, int a, int s_next, int copies) {
    for (int c = 0; c < copies; ++c) {
      Transition t;
      t.s = {double(s)};
      t.a = Action::discrete(a);
      t.s_next = {double(s_next)};
      data.push_back(t);
    }
  };
  push(0, 1, 1, 4);
  push(1, 1, 2, 4);
  push(2, 1, 2, 2);  // bump at the right end
  push(1, 0, 0, 3);
  push(0, 0, 0, 2);  // bump at the left end
  push(2, 0, 1, 3);

  std::map<int, double> next_count;
  std::map<std::pair<int, int>, double> next_action_count;
  std::map<std::tuple<int, int, int>, double> full_count;
  for (const Transition& t : data) {
    int s = int(t.s[0]), a = t.a.index, sn = int(t.s_next[0]);
    next_count[sn] += 1.0;
    next_action_count[{sn, a}] += 1.0;
    full_count[{sn, a, s}] += 1.0;
  }
  double bound = 0.0;
  for (const Transition& t : data) {
    int s = int(t.s[0]), a = t.a.index, sn = int(t.s_next[0]);
    bound -= std::log(next_action_count[{sn, a}] / next_count[sn]);
    bound -= std::log(full_count[{sn, a, s}] / next_action_count[{sn, a}]);
  }
  bound /= double(data.size());

  BacktrackConfig cfg;
  cfg.hidden = {8, 8};
  cfg.batch_size = int(data.size());  // full batch: deterministic descent
  cfg.beta = 0.5;
  cfg.grad_clip = 0.0;
  BacktrackModel model(chain, cfg, 15);
  Rng rng(16);
  std::vector<double> history = model.train(data, 2000, rng);
  ASSERT_EQ(history.size(), 2000u);
  EXPECT_NEAR(history.back(), bound, 1e-2);
  EXPECT_GT(history.back(), bound - 1e-9);  // the bound is a true minimum
}

TEST(BacktrackModel, TraceRecursionIsDeterministicWithZeroVariance) {
  // Pin the state head at delta = (-0.1, 0) with ~zero variance: from seed
  // (0.3, 0) the backward walk visits (0.2, 0), (0.1, 0), and the forward
  // ordering chains back up to the seed.
  PointMassEnv env;
  BacktrackModel model(env, BacktrackConfig{}, 17);
  model.state_net().zero_output_layer();
  nn::Mlp& net = model.state_net();
  std::vector<double> p = net.flat_params();
  p[p.size() - 4] = -0.1;   // mean dx
  p[p.size() - 3] = 0.0;    // mean dy
  p[p.size() - 2] = -30.0;  // log-std dx
  p[p.size() - 1] = -30.0;  // log-std dy
  net.load_flat_params(p);

  Rng rng(18);
  Trace trace = model.generate_trace({0.3, 0.0}, 2, rng);
  ASSERT_EQ(trace.length(), 2u);
  EXPECT_FALSE(trace.truncated);
  EXPECT_EQ(trace.seed_state, (State{0.3, 0.0}));
  EXPECT_NEAR(trace.steps[0].first[0], 0.1, 1e-9);
  EXPECT_NEAR(trace.steps[0].first[1], 0.0, 1e-9);
  EXPECT_NEAR(trace.steps[1].first[0], 0.2, 1e-9);
  EXPECT_NEAR(trace.steps[1].first[1], 0.0, 1e-9);
}

TEST(BacktrackModel, TraceClampsToStateBoxAndFlagsTruncation) {
  PointMassEnv env;
  BacktrackModel model(env, BacktrackConfig{}, 19);
  model.state_net().zero_output_layer();
  nn::Mlp& net = model.state_net();
  std::vector<double> p = net.flat_params();
  p[p.size() - 4] = -0.5;
  p[p.size() - 3] = 0.0;
  p[p.size() - 2] = -30.0;
  p[p.size() - 1] = -30.0;
  net.load_flat_params(p);

  Rng rng(20);
  Trace trace = model.generate_trace({-0.8, 0.0}, 2, rng);
  EXPECT_TRUE(trace.truncated);
  for (const auto& [s, a] : trace.steps) {
    EXPECT_GE(s[0], -1.0);
    EXPECT_LE(s[0], 1.0);
  }
  EXPECT_NEAR(trace.steps.back().first[0], -1.0, 1e-9);  // clamped edge
}

TEST(BacktrackModel, TraceLengthOneYieldsOnePair) {
  FourRoomEnv env(7);
  BacktrackModel model(env, BacktrackConfig{}, 21);
  Rng rng(22);
  Trace trace = model.generate_trace(env.goal_state(), 1, rng);
  EXPECT_EQ(trace.length(), 1u);
  EXPECT_EQ(trace.seed_state, env.goal_state());
  // The sampled predecessor must come from the candidate neighborhood.
  std::vector<State> cand = env.backward_candidates(env.goal_state());
  EXPECT_NE(std::find(cand.begin(), cand.end(), trace.steps[0].first), cand.end());
}

TEST(BacktrackModel, RandomModelIsUniformFrozenAndUsesTrueBackwardProbs) {
  FourRoomEnv env(7);
  BacktrackModel model = BacktrackModel::random_model(env, 23);
  EXPECT_TRUE(model.frozen());

  std::vector<double> ap = model.action_probs(env.goal_state());
  for (double p : ap) EXPECT_DOUBLE_EQ(p, 0.25);
  EXPECT_NEAR(model.action_log_prob(env.goal_state(), Action::discrete(2)),
              std::log(0.25), 1e-12);

  State s_next = env.apply_move(env.start_state(), FourRoomEnv::kRight);
  for (int a = 0; a < 4; ++a) {
    std::vector<double> got = model.state_probs(Action::discrete(a), s_next);
    std::vector<double> want = env.true_backward_state_probs(a, s_next);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_DOUBLE_EQ(got[i], want[i]);
  }

  // Frozen: training is a no-op.
  std::vector<Transition> data{moving_transition(env)};
  Rng rng(24);
  std::vector<double> before = model.action_net().flat_params();
  EXPECT_TRUE(model.train(data, 50, rng).empty());
  EXPECT_EQ(model.action_net().flat_params(), before);

  // Same seeds, same trace.
  BacktrackModel twin = BacktrackModel::random_model(env, 23);
  Rng ra(25), rb(25);
  Trace ta = model.generate_trace(env.goal_state(), 5, ra);
  Trace tb = twin.generate_trace(env.goal_state(), 5, rb);
  ASSERT_EQ(ta.length(), tb.length());
  for (std::size_t i = 0; i < ta.steps.size(); ++i) {
    EXPECT_EQ(ta.steps[i].first, tb.steps[i].first);
    EXPECT_EQ(ta.steps[i].second.index, tb.steps[i].second.index);
  }
}

TEST(BacktrackModel, ContinuousRandomModelHasZeroMeanUnitVarianceActions) {
  PointMassEnv env;
  BacktrackModel model = BacktrackModel::random_model(env, 26);
  EXPECT_TRUE(model.frozen());
  EXPECT_NEAR(model.action_log_prob({0.0, 0.0}, Action::continuous({0.0, 0.0})),
              -std::log(2.0 * std::numbers::pi), 1e-12);
}

// Trained once on the full transition set of an 11x11 grid; shared by the
// backward-consistency checks below.
class TrainedGridModel : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    env_ = std::make_unique<FourRoomEnv>(11);
    BacktrackConfig cfg;
    cfg.hidden = {16, 16};
    cfg.batch_size = 4096;  // covers the whole dataset: deterministic descent
    cfg.beta = 0.5;
    cfg.grad_clip = 0.0;
    model_ = std::make_unique<BacktrackModel>(*env_, cfg, 27);
    std::vector<Transition> data;
    for (const State& s : env_->open_states()) {
      for (int a = 0; a < 4; ++a) data.push_back(make_transition(*env_, s, a));
    }
    Rng rng(28);
    model_->train(data, 1500, rng);
  }
  static void TearDownTestSuite() {
    model_.reset();
    env_.reset();
  }

  static std::unique_ptr<FourRoomEnv> env_;
  static std::unique_ptr<BacktrackModel> model_;
};

std::unique_ptr<FourRoomEnv> TrainedGridModel::env_;
std::unique_ptr<BacktrackModel> TrainedGridModel::model_;

TEST_F(TrainedGridModel, GoalNeighborsConcentrateOnConsistentActions) {
  State goal = env_->goal_state();
  int checked = 0;
  for (int a = 0; a < 4; ++a) {
    State adj = env_->apply_move(goal, a);
    if (adj == goal) continue;  // wall direction
    ++checked;
    std::vector<double> probs = model_->action_probs(adj);
    double consistent_mass = 0.0;
    for (int act = 0; act < 4; ++act) {
      if (!env_->predecessors_for_action(act, adj).empty()) consistent_mass += probs[act];
    }
    EXPECT_GT(consistent_mass, 0.9) << "cell (" << adj[0] << "," << adj[1] << ")";
  }
  EXPECT_GE(checked, 2);
}

TEST_F(TrainedGridModel, TracesMostlyFollowForwardDynamics) {
  Rng rng(29);
  int consistent = 0, total = 0;
  for (int k = 0; k < 100; ++k) {
    Trace trace = model_->generate_trace(env_->goal_state(), 5, rng);
    ASSERT_EQ(trace.length(), 5u);
    for (std::size_t i = 0; i < trace.steps.size(); ++i) {
      const State& s = trace.steps[i].first;
      int a = trace.steps[i].second.index;
      const State& target =
          i + 1 < trace.steps.size() ? trace.steps[i + 1].first : trace.seed_state;
      ++total;
      if (env_->apply_move(s, a) == target) ++consistent;
    }
  }
  EXPECT_GE(double(consistent) / double(total), 0.8);
}

TEST(BacktrackModel, TrainingGradientsMatchFiniteDifferences) {
  EXPECT_EQ(testsupport::backtrack_gradient_failures(4, 1e-4), 0);
}

}  // namespace
}  // namespace recall::backtrack
