#ifndef RECALL_ORCHESTRATOR_HPP
#define RECALL_ORCHESTRATOR_HPP

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "recall/agent.hpp"
#include "recall/backtrack.hpp"
#include "recall/buffer.hpp"
#include "recall/env.hpp"
#include "recall/util.hpp"

namespace recall::orchestrator {

// Knobs of the interleaved training loop. A "cycle" is rl_steps_per_cycle
// episodes of on-policy collection + update, followed by one backward phase
// (model fitting, trace generation, imitation).
struct LoopConfig {
  int n_traces = 5;                   // traces per cycle; 0 disables augmentation
  int trace_length = 5;
  int rl_steps_per_cycle = 5;
  int backward_steps_per_cycle = 100;
  int imitation_updates_per_cycle = 1;
  double curriculum_pct = 10.0;       // top return percentile setting threshold L
  double env_to_trace_ratio = 0.0;    // >0 rewrites the two per-cycle counts
  long total_env_steps = 30000;
  double imitation_lr = 3e-3;
  double seed_temperature = 0.0;      // 0 = argmax-V seed states
  void validate() const;              // throws std::invalid_argument
};

// env_to_trace_ratio r > 0 is the ratio of environment updates to imitation
// updates. Rewrites (rl_steps_per_cycle, imitation_updates_per_cycle) to the
// smallest integer pair (k, 1) or (1, k) realizing r; non-integral ratios
// are rejected. r = 0 leaves the explicit counts alone.
void apply_env_to_trace_ratio(LoopConfig& cfg);

struct EpisodeRow {
  long env_steps = 0;      // cumulative env steps after this episode
  int episode = 0;         // 1-based
  double ret = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  // Backward-phase columns carry the latest cycle's values; NaN before the
  // first cycle (and throughout baseline runs).
  double backward_loss = std::numeric_limits<double>::quiet_NaN();
  double imitation_loss = std::numeric_limits<double>::quiet_NaN();
  long distinct_states = 0;
};

struct RunMetrics {
  std::vector<EpisodeRow> rows;        // one per completed episode
  std::vector<long> visitation;        // per-bin landing counts, row-major
  int visit_rows = 0;
  int visit_cols = 0;
  long env_steps_taken = 0;            // equals sum of visitation
  bool aborted = false;                // a loss went non-finite
  std::string abort_reason;
};

// L = minimum of the top ceil(pct/100 * n) returns; ties at the cutoff are
// kept, so `kept` may exceed that count. Throws on empty input or
// pct outside (0, 100].
struct CurriculumCut {
  double threshold = 0.0;
  std::vector<std::size_t> kept;   // indices into the input
};
CurriculumCut curriculum_threshold(const std::vector<double>& returns, double pct);

// Sum over all (s, a) pairs in all traces of log pi(a|s). Throws on empty.
double imitation_loss(agent::PolicyCritic& pc,
                      const std::vector<backtrack::Trace>& traces);

std::vector<std::pair<State, Action>> trace_pairs(
    const std::vector<backtrack::Trace>& traces);

// The interleaved loop: per episode — collect with pc, actor-critic update,
// store in buf; every rl_steps_per_cycle episodes — train `model` on
// curriculum-filtered top trajectories, pick a high-value seed state,
// sample n_traces backward traces, and run imitation updates on them.
// model == nullptr or n_traces == 0 runs the plain actor-critic baseline
// (bit-identical streams). Non-finite losses abort the run, preserving
// partial metrics.
RunMetrics run_training(Env& env, agent::PolicyCritic& pc,
                        backtrack::BacktrackModel* model,
                        buffer::ReplayBuffer& buf, const LoopConfig& cfg,
                        std::uint64_t run_seed);

// Prioritized-replay baseline: same collection and per-episode actor-critic
// update; every episodes_per_update episodes one importance-weighted replay
// step on a sampled batch, with priority refresh.
struct PerConfig {
  int batch_size = 200;
  int episodes_per_update = 3;    // env updates per replay update
  double per_alpha = 0.8;
  double per_beta = 0.1;
  std::size_t capacity = 100000;
  void validate() const;
};
RunMetrics run_per_training(Env& env, agent::PolicyCritic& pc,
                            const PerConfig& per_cfg, const LoopConfig& cfg,
                            std::uint64_t run_seed);

// ---------------------------------------------------------------------------
// Exact verification machinery over enumerable chains: the bound
// log p(R > L) = ELBO + KL(q(tau) || p(tau | R > L)).
// ---------------------------------------------------------------------------

// Explicit distribution over chain trajectories.
using TrajDist = std::map<ChainTrajectory, double>;

struct ElboReport {
  double log_p = 0.0;      // exact log p(R > L)
  double elbo = 0.0;
  double kl = 0.0;         // KL(q || posterior)
  double threshold = 0.0;  // L
};

// p(tau | R > L) by exhaustive enumeration under a tabular policy [s][a].
// Throws if the event R > L has probability zero.
TrajDist exact_posterior(const ChainMDP& chain,
                         const std::vector<std::vector<double>>& policy,
                         double gamma, double L);

// Computes all three quantities of the bound independently. q must be a
// proper distribution (sum 1 +- 1e-9) supported on trajectories of the
// chain. Impossible events and support mismatches surface as +-infinity in
// the report, never as exceptions.
ElboReport verify_elbo(const ChainMDP& chain,
                       const std::vector<std::vector<double>>& policy,
                       double gamma, const TrajDist& q, double L);

// KL(posterior || q) over the posterior's support; +infinity when q misses
// mass there. log_q maps a trajectory to its log-probability.
using LogProbFn = std::function<double(const ChainTrajectory&)>;
double reverse_kl_check(const TrajDist& posterior, const LogProbFn& log_q);
double reverse_kl_check(const TrajDist& posterior, const TrajDist& q);

// Time-homogeneous backward factorization over fixed-horizon trajectories:
//   q(tau) = q_seed(s_H) * prod_t q_act(a_t | s_{t+1}) q_st(s_t | a_t, s_{t+1})
// All tables start uniform (zero logits). Trained by exact-gradient MLE.
class TabularBackwardQ {
 public:
  TabularBackwardQ(int n_states, int n_actions, int horizon);

  int n_states() const { return n_states_; }
  int n_actions() const { return n_actions_; }
  int horizon() const { return horizon_; }

  double log_prob(const ChainTrajectory& traj) const;
  // One ascent step on the mean log-likelihood of the batch.
  void mle_step(const std::vector<ChainTrajectory>& batch, double lr);

  std::vector<double> seed_probs() const;
  std::vector<double> action_probs(int s_next) const;
  std::vector<double> state_probs(int s_next, int action) const;

 private:
  int n_states_, n_actions_, horizon_;
  std::vector<double> seed_logits_;    // [S]
  std::vector<double> action_logits_;  // [S][A], row = s_next
  std::vector<double> state_logits_;   // [S][A][S], row = (s_next, action)
};

// Forward rollouts under the tabular policy, keeping only those with
// return > L. Throws if max_tries rollouts cannot produce `count` keepers.
std::vector<ChainTrajectory> rejection_sample(
    ChainMDP& chain, const std::vector<std::vector<double>>& policy,
    double gamma, double L, int count, int max_tries, Rng& rng);

}  // namespace recall::orchestrator

#endif
