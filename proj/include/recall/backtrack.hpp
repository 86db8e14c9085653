#ifndef RECALL_BACKTRACK_HPP
#define RECALL_BACKTRACK_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "recall/env.hpp"
#include "recall/nn.hpp"
#include "recall/util.hpp"

namespace recall::backtrack {

// Per-dimension affine scaling for continuous states/actions. std entries
// are floored away from zero so the round trip is exact.
struct Normalizer {
  std::vector<double> mean;
  std::vector<double> std;

  static Normalizer identity(int dim);
  static Normalizer fit(const std::vector<std::vector<double>>& rows, int dim);

  std::vector<double> normalize(const std::vector<double>& x) const;
  std::vector<double> unnormalize(const std::vector<double>& x) const;
  // Scale-only maps for deltas (no mean shift).
  std::vector<double> scale(const std::vector<double>& dx) const;
  std::vector<double> unscale(const std::vector<double>& dx) const;
};

// A backward-sampled excerpt, reversed into forward order: applying the
// step actions in sequence is meant to end at seed_state.
struct Trace {
  std::vector<std::pair<State, Action>> steps;
  State seed_state;
  bool truncated = false;  // continuous sample left the state box

  std::size_t length() const { return steps.size(); }
};

void dump_traces_jsonl(const std::string& path, const std::vector<Trace>& traces);

struct BacktrackConfig {
  double beta = 1e-2;                 // backward learning rate
  int batch_size = 256;
  double grad_clip = 5.0;
  std::vector<int> hidden{128, 128};
  // Discrete only: replace the learned state predictor with the env's true
  // backward distribution.
  bool use_true_state_predictor = false;
};

// Backward model q(s_t, a_t | s_{t+1}) = q(s_t | a_t, s_{t+1}) q(a_t | s_{t+1}).
// Discrete: categorical action head + categorical state head over the env's
// candidate predecessor cells. Continuous: Gaussian action head with fixed
// unit variance + Gaussian head over the normalized state delta with learned
// per-dimension variance.
class BacktrackModel {
 public:
  BacktrackModel(const Env& env, BacktrackConfig cfg, std::uint64_t init_seed);

  // Uniform (untrained, frozen) action predictor plus the true backward
  // state distribution.
  static BacktrackModel random_model(const Env& env, std::uint64_t init_seed);

  bool discrete() const { return discrete_; }
  bool frozen() const { return frozen_; }
  const BacktrackConfig& config() const { return cfg_; }

  double action_log_prob(const State& s_next, const Action& a);
  double state_log_prob(const State& s, const Action& a, const State& s_next);
  // Sum over transitions of both head log-probs (the quantity training
  // maximizes; train() minimizes its negative).
  double backtrack_loss(const Trajectory& traj);

  // Refit input scaling from a dataset (continuous; discrete no-op).
  void fit_normalizer(const std::vector<Transition>& data);
  const Normalizer& state_normalizer() const { return state_norm_; }
  const Normalizer& action_normalizer() const { return action_norm_; }

  // `steps` minibatch SGD steps on the negative log-likelihood; returns the
  // per-step mean NLL history. Empty data or a frozen model: no-op.
  std::vector<double> train(const std::vector<Transition>& data, int steps, Rng& rng);

  Trace generate_trace(const State& seed_state, int length, Rng& rng);

  // Discrete diagnostics.
  std::vector<double> action_probs(const State& s_next);
  std::vector<double> state_probs(const Action& a, const State& s_next);

  nn::Mlp& action_net() { return action_net_; }
  nn::Mlp& state_net() { return state_net_; }

 private:
  const Env* env_;
  BacktrackConfig cfg_;
  bool discrete_;
  bool frozen_ = false;
  int state_dim_ = 0;       // continuous
  int action_dim_ = 0;      // continuous
  int candidates_ = 0;      // discrete
  nn::Mlp action_net_;
  nn::Mlp state_net_;
  Normalizer state_norm_;
  Normalizer action_norm_;

  Features action_input(const State& s_next) const;
  Features state_input(const State& s_next, const Action& a) const;
  int candidate_index(const State& s, const State& s_next) const;
  void train_minibatch(const std::vector<Transition>& data,
                       const std::vector<int>& picks, double* nll);
};

}  // namespace recall::backtrack

#endif
