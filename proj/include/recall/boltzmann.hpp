#ifndef RECALL_BOLTZMANN_HPP
#define RECALL_BOLTZMANN_HPP

#include <vector>

#include "recall/util.hpp"

namespace recall::boltzmann {

// Contextual bandit with exactly known mean rewards. The temperature is
// part of the task: it defines the target distribution's softness.
struct BoltzmannTask {
  std::vector<double> context_probs;         // p(s), sums to 1
  std::vector<std::vector<double>> rewards;  // mean reward [s][a]
  double temperature = 1.0;

  int n_contexts() const { return int(context_probs.size()); }
  int n_actions() const { return rewards.empty() ? 0 : int(rewards[0].size()); }
  void validate() const;  // throws std::invalid_argument

  static BoltzmannTask random(int n_contexts, int n_actions, Rng& rng);
};

// Target p*(a|s) proportional to exp(reward(s,a)/T): high reward means high
// probability. log_z is the log normalizer at this context.
struct TargetDist {
  std::vector<double> probs;
  double log_z = 0.0;
};
TargetDist boltzmann_target(const BoltzmannTask& task, int s);

// Tabular softmax policy over the task's context/action grid; zero logits
// (uniform) at construction.
class SoftPolicy {
 public:
  SoftPolicy(int n_contexts, int n_actions);

  int n_contexts() const { return n_contexts_; }
  int n_actions() const { return n_actions_; }
  std::vector<double> probs(int s) const;
  std::vector<double> log_probs(int s) const;
  void set_logits(int s, const std::vector<double>& row);
  void nudge_logits(int s, const std::vector<double>& grad, double scale);

 private:
  int n_contexts_, n_actions_;
  std::vector<double> logits_;  // [s][a]
};

// J_r = sum_s p(s) sum_a pi(a|s) reward(s,a), exactly.
double expected_reward(const BoltzmannTask& task, const SoftPolicy& policy);

// Context-averaged policy entropy E_{p(s)} H(pi(.|s)).
double policy_entropy(const BoltzmannTask& task, const SoftPolicy& policy);

// The free-energy identity KL(pi||p*) = -J_r/T - S(pi) + E_{p(s)}[log Z_T],
// each term computed by its own summation path.
struct FreeEnergyReport {
  double kl = 0.0;
  double j_r = 0.0;
  double entropy = 0.0;
  double log_z_term = 0.0;
};
FreeEnergyReport free_energy_decomposition(const BoltzmannTask& task,
                                           const SoftPolicy& policy);

// One exact gradient-descent step on KL(pi||p*) at the task's temperature.
// Returns the pre-step KL.
double kl_descent_step(const BoltzmannTask& task, SoftPolicy& policy, double lr);

// T_k = max(floor, t0 * decay^k).
std::vector<double> temperature_schedule(int steps, double t0 = 1.0,
                                         double decay = 0.995,
                                         double floor = 0.01);

struct AnnealPoint {
  int step = 0;
  double temperature = 0.0;
  double j_r = 0.0;
  double entropy = 0.0;
  double kl = 0.0;  // against the target at this step's temperature
};

// Gradient descent on KL(pi||p*_{T_k}) along the schedule; one step per
// schedule entry, recording post-step measurements. The schedule must be
// positive and non-increasing.
std::vector<AnnealPoint> anneal_train(BoltzmannTask task, SoftPolicy& policy,
                                      const std::vector<double>& schedule,
                                      double lr);

}  // namespace recall::boltzmann

#endif
