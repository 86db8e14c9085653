#ifndef RECALL_AGENT_HPP
#define RECALL_AGENT_HPP

#include <cstdint>
#include <utility>
#include <vector>

#include "recall/env.hpp"
#include "recall/nn.hpp"
#include "recall/util.hpp"

namespace recall::agent {

struct AcConfig {
  double gamma = 0.99;
  double lambda = 0.95;          // GAE
  double alpha = 3e-3;           // forward learning rate
  double entropy_coef = 0.01;    // 0 disables the bonus
  double value_coef = 0.5;
  double grad_clip = 5.0;        // per-net gradient norm cap
  std::vector<int> hidden{64, 64};
  nn::Activation activation = nn::Activation::kTanh;
};

struct AcLosses {
  double policy_loss = 0.0;   // -(1/n) sum A_t log pi(a_t|s_t)
  double value_loss = 0.0;    // (1/n) sum (V(s_t) - target_t)^2
  double entropy = 0.0;       // mean policy entropy over the batch
};

// Actor + critic pair over one environment's feature space. Discrete
// policies emit categorical logits; continuous ones emit a Gaussian mean
// with a state-independent learned log-std vector.
class PolicyCritic {
 public:
  PolicyCritic(const Env& env, AcConfig cfg, std::uint64_t init_seed);

  std::pair<Action, double> act(const State& s, Rng& rng);

  nn::CategoricalHead policy_head(const State& s);    // discrete only
  nn::GaussianHead policy_gaussian(const State& s);   // continuous only
  double log_prob(const State& s, const Action& a);
  double value(const State& s);

  // A_t = sum_l (gamma*lambda)^l delta_{t+l}; bootstrap 0 past done.
  std::vector<double> gae_advantages(const Trajectory& traj);

  AcLosses ac_update(const std::vector<Trajectory>& batch);

  // One ascent step on sum log pi(a|s) over the pairs; the critic is
  // untouched. Returns the summed log-likelihood before the step.
  double imitation_update(const std::vector<std::pair<State, Action>>& pairs,
                          double lr);

  // One prioritized-replay step: one-step TD errors act as advantages,
  // scaled per-sample by importance weights; no entropy bonus. Pre-update
  // TD errors are written to *deltas for priority refresh.
  AcLosses per_update(const std::vector<const Transition*>& batch,
                      const std::vector<double>& weights,
                      std::vector<double>* deltas);

  const AcConfig& config() const { return cfg_; }
  bool discrete() const { return discrete_; }
  nn::Mlp& policy_net() { return policy_net_; }
  nn::Mlp& value_net() { return value_net_; }
  std::vector<double>& log_std() { return log_std_; }

 private:
  const Env* env_;
  AcConfig cfg_;
  bool discrete_;
  nn::Mlp policy_net_;
  nn::Mlp value_net_;
  std::vector<double> log_std_;       // continuous only
  std::vector<double> log_std_grad_;  // accumulated alongside policy_net_

  void clip_policy_grads();
  void add_log_prob_grads(const Features& x, const Action& a, double weight);
};

}  // namespace recall::agent

#endif
