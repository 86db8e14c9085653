#ifndef RECALL_ENV_HPP
#define RECALL_ENV_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "recall/util.hpp"

namespace recall {

// Raw environment state. Grid/chain states hold exact small integers as
// doubles; continuous states hold coordinates.
using State = std::vector<double>;

struct Action {
  int index = -1;               // discrete action id, -1 when continuous
  std::vector<double> vec;      // continuous action, empty when discrete

  static Action discrete(int i) { return Action{i, {}}; }
  static Action continuous(std::vector<double> v) { return Action{-1, std::move(v)}; }
};

struct Transition {
  State s;
  Action a;
  double r = 0.0;
  State s_next;
  bool done = false;
};

struct Trajectory {
  std::vector<Transition> steps;
  double ret = 0.0;        // total reward, cached when stored
  std::uint64_t id = 0;

  bool empty() const { return steps.empty(); }
  std::size_t size() const { return steps.size(); }
  double total_reward() const;
};

// Network input: either a dense vector or a sparse sum of unit vectors
// (indices in `hot`).
struct Features {
  int dim = 0;
  std::vector<int> hot;
  std::vector<double> dense;

  static Features one_hot(int index, int dim) { return Features{dim, {index}, {}}; }
  static Features from_dense(std::vector<double> v) {
    Features f;
    f.dim = static_cast<int>(v.size());
    f.dense = std::move(v);
    return f;
  }
  bool sparse() const { return !hot.empty(); }
  std::vector<double> to_dense() const;
};

class Env {
 public:
  virtual ~Env() = default;

  virtual State reset(std::uint64_t rng_seed) = 0;
  virtual Transition step(const State& s, const Action& a) = 0;

  virtual bool discrete_actions() const = 0;
  virtual int num_actions() const = 0;   // valid when discrete
  virtual int action_dim() const = 0;    // valid when continuous
  virtual Features featurize(const State& s) const = 0;
  virtual int feature_dim() const = 0;
  virtual int max_steps() const = 0;
  virtual double reward_min() const = 0;
  virtual double reward_max() const = 0;

  // Visitation-count grid used for heatmaps and exploration metrics.
  virtual int visit_rows() const = 0;
  virtual int visit_cols() const = 0;
  virtual int visit_bin(const State& s) const = 0;

  // Discrete-env support for backward models: the fixed-size candidate set
  // of possible predecessor states of s_next, and the true backward
  // distribution over those candidates given the action (uniform prior over
  // predecessors). Continuous envs return empty/0.
  virtual std::vector<State> backward_candidates(const State& s_next) const { return {}; }
  virtual int backward_candidate_count() const { return 0; }
  virtual std::vector<double> true_backward_state_probs(int action, const State& s_next) const {
    return {};
  }

  // Whether s is a reachable state of the MDP. Candidate predecessor sets may
  // contain impossible cells (walls, out of grid); backward sampling masks
  // them with this.
  virtual bool valid_state(const State& s) const { return true; }

  // Axis-aligned bounds for continuous states; empty when unbounded or
  // discrete.
  virtual std::vector<std::pair<double, double>> state_box() const { return {}; }
};

// ---------------------------------------------------------------------------
// Four-room gridworld: odd size, border walls, midline walls with one doorway
// per wall segment. Actions {up, down, left, right}; moving into a wall
// leaves the agent in place. Reward +1 on reaching the goal, else 0.
// ---------------------------------------------------------------------------
class FourRoomEnv final : public Env {
 public:
  enum : int { kUp = 0, kDown = 1, kLeft = 2, kRight = 3 };

  explicit FourRoomEnv(int size, double slip_prob = 0.0, int max_steps = -1);

  State reset(std::uint64_t rng_seed) override;
  Transition step(const State& s, const Action& a) override;

  bool discrete_actions() const override { return true; }
  int num_actions() const override { return 4; }
  int action_dim() const override { return 0; }
  Features featurize(const State& s) const override;
  int feature_dim() const override { return size_ * size_; }
  int max_steps() const override { return max_steps_; }
  double reward_min() const override { return 0.0; }
  double reward_max() const override { return 1.0; }
  int visit_rows() const override { return size_; }
  int visit_cols() const override { return size_; }
  int visit_bin(const State& s) const override { return cell_index(s); }

  int size() const { return size_; }
  bool wall(int row, int col) const;
  bool open(int row, int col) const { return !wall(row, col); }
  int cell_index(int row, int col) const { return row * size_ + col; }
  int cell_index(const State& s) const;
  State cell_state(int row, int col) const { return State{double(row), double(col)}; }
  State start_state() const { return cell_state(1, 1); }
  State goal_state() const { return cell_state(size_ - 2, size_ - 2); }
  bool is_goal(const State& s) const;

  // Deterministic move rule, no slip, no step accounting.
  State apply_move(const State& s, int action) const;

  // All (s, a) pairs whose deterministic move lands in `target`. Ground
  // truth for backward-model tests.
  std::vector<std::pair<State, int>> predecessors(const State& target) const;
  // Predecessor states consistent with landing in `target` under `action`.
  std::vector<State> predecessors_for_action(int action, const State& target) const;

  // Candidate predecessors: the cell itself plus its four grid neighbors.
  std::vector<State> backward_candidates(const State& s_next) const override;
  int backward_candidate_count() const override { return 5; }
  std::vector<double> true_backward_state_probs(int action, const State& s_next) const override;
  bool valid_state(const State& s) const override;

  std::vector<State> open_states() const;

  // ASCII layout dump: '#' wall, '.' open, 'G' goal, 'S' start.
  std::string ascii() const;

 private:
  int size_;
  double slip_prob_;
  int max_steps_;
  std::vector<std::uint8_t> walls_;
  int steps_taken_ = 0;
  Rng rng_;

  void build_walls();
  void check_connectivity() const;
};

// ---------------------------------------------------------------------------
// Point mass in [-B, B]^2 with displacement actions clipped to max norm.
// Sparse reward on reaching the goal ball.
// ---------------------------------------------------------------------------
class PointMassEnv final : public Env {
 public:
  struct Params {
    double box = 1.0;           // B
    double max_step = 0.1;      // largest displacement norm per action
    double eps_goal = 0.05;     // success radius
    double noise_std = 0.0;
    int max_steps = 100;
    State start{-0.9, -0.9};
    State goal{0.9, 0.9};
  };

  PointMassEnv() : PointMassEnv(Params{}) {}
  explicit PointMassEnv(Params p);

  State reset(std::uint64_t rng_seed) override;
  Transition step(const State& s, const Action& a) override;

  bool discrete_actions() const override { return false; }
  int num_actions() const override { return 0; }
  int action_dim() const override { return 2; }
  Features featurize(const State& s) const override { return Features::from_dense(s); }
  int feature_dim() const override { return 2; }
  int max_steps() const override { return params_.max_steps; }
  double reward_min() const override { return 0.0; }
  double reward_max() const override { return 1.0; }
  int visit_rows() const override { return kVisitBins; }
  int visit_cols() const override { return kVisitBins; }
  int visit_bin(const State& s) const override;

  const Params& params() const { return params_; }
  bool at_goal(const State& s) const;
  std::vector<std::pair<double, double>> state_box() const override {
    return {{-params_.box, params_.box}, {-params_.box, params_.box}};
  }

 private:
  static constexpr int kVisitBins = 20;
  Params params_;
  int steps_taken_ = 0;
  Rng rng_;
};

// ---------------------------------------------------------------------------
// Small tabular MDP with exact transition and reward tables. Fixed horizon,
// initial state 0. Substrate for enumeration oracles.
// ---------------------------------------------------------------------------
class ChainMDP final : public Env {
 public:
  ChainMDP(int n_states, int n_actions,
           std::vector<std::vector<std::vector<double>>> transition,  // [s][a][s']
           std::vector<std::vector<double>> reward,                   // [s][a]
           int horizon);

  State reset(std::uint64_t rng_seed) override;
  Transition step(const State& s, const Action& a) override;

  bool discrete_actions() const override { return true; }
  int num_actions() const override { return n_actions_; }
  int action_dim() const override { return 0; }
  Features featurize(const State& s) const override;
  int feature_dim() const override { return n_states_; }
  int max_steps() const override { return horizon_; }
  double reward_min() const override { return r_min_; }
  double reward_max() const override { return r_max_; }
  int visit_rows() const override { return 1; }
  int visit_cols() const override { return n_states_; }
  int visit_bin(const State& s) const override { return state_index(s); }

  int n_states() const { return n_states_; }
  int horizon() const { return horizon_; }
  double transition_prob(int s, int a, int s_next) const { return transition_[s][a][s_next]; }
  double reward(int s, int a) const { return reward_[s][a]; }
  int state_index(const State& s) const;
  // States with nonzero probability of preceding s_next under action a.
  std::vector<int> predecessors_for_action(int a, int s_next) const;

  // Candidates are all states; true backward probs weight by P(s_next|s,a).
  std::vector<State> backward_candidates(const State& s_next) const override;
  int backward_candidate_count() const override { return n_states_; }
  std::vector<double> true_backward_state_probs(int action, const State& s_next) const override;

 private:
  int n_states_;
  int n_actions_;
  std::vector<std::vector<std::vector<double>>> transition_;
  std::vector<std::vector<double>> reward_;
  int horizon_;
  double r_min_ = 0.0, r_max_ = 0.0;
  int steps_taken_ = 0;
  Rng rng_;
};

// A fixed-horizon chain trajectory: states.size() == actions.size() + 1.
struct ChainTrajectory {
  std::vector<int> states;
  std::vector<int> actions;

  auto operator<=>(const ChainTrajectory&) const = default;
};

struct WeightedTrajectory {
  ChainTrajectory traj;
  double prob = 0.0;
  double ret = 0.0;
};

// Exhaustive enumeration of all nonzero-probability trajectories of `chain`
// under a tabular policy [s][a]. Probabilities sum to 1; returns use
// discount `gamma`. Throws if more than `max_count` trajectories exist.
std::vector<WeightedTrajectory> enumerate_trajectories(
    const ChainMDP& chain, const std::vector<std::vector<double>>& policy,
    double gamma, std::size_t max_count = 1000000);

// Chain fixtures shared by the verification suites.
ChainMDP make_verification_chain();   // 4-state stochastic line, horizon 6
ChainMDP make_bandit_chain();         // 1 state, 2 actions, horizon 1
ChainMDP make_deterministic_line(int n_states, int horizon);

}  // namespace recall

#endif
