#include "recall/orchestrator.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "recall/nn.hpp"

namespace recall::orchestrator {

namespace {
constexpr double kNan = std::numeric_limits<double>::quiet_NaN();
constexpr double kInf = std::numeric_limits<double>::infinity();
}  // namespace

void LoopConfig::validate() const {
  if (n_traces < 0) throw std::invalid_argument("LoopConfig: n_traces must be >= 0");
  if (trace_length <= 0 || rl_steps_per_cycle <= 0 || backward_steps_per_cycle <= 0 ||
      imitation_updates_per_cycle <= 0) {
    throw std::invalid_argument("LoopConfig: per-cycle counts must be positive");
  }
  if (!(curriculum_pct > 0.0) || curriculum_pct > 100.0) {
    throw std::invalid_argument("LoopConfig: curriculum_pct must be in (0, 100]");
  }
  if (env_to_trace_ratio < 0.0) {
    throw std::invalid_argument("LoopConfig: env_to_trace_ratio must be >= 0");
  }
  if (total_env_steps <= 0) throw std::invalid_argument("LoopConfig: total_env_steps must be positive");
  if (!(imitation_lr > 0.0)) throw std::invalid_argument("LoopConfig: imitation_lr must be positive");
  if (seed_temperature < 0.0) {
    throw std::invalid_argument("LoopConfig: seed_temperature must be >= 0");
  }
}

void apply_env_to_trace_ratio(LoopConfig& cfg) {
  const double r = cfg.env_to_trace_ratio;
  if (r == 0.0) return;
  auto as_int = [](double x) -> int {
    long long n = std::llround(x);
    if (n >= 1 && std::abs(x - double(n)) < 1e-9) return int(n);
    return 0;
  };
  if (int k = as_int(r); k > 0) {
    cfg.rl_steps_per_cycle = k;
    cfg.imitation_updates_per_cycle = 1;
  } else if (int inv = as_int(1.0 / r); inv > 0) {
    cfg.rl_steps_per_cycle = 1;
    cfg.imitation_updates_per_cycle = inv;
  } else {
    throw std::invalid_argument("env_to_trace_ratio must be k or 1/k for integer k");
  }
}

void PerConfig::validate() const {
  if (batch_size <= 0 || episodes_per_update <= 0 || capacity == 0) {
    throw std::invalid_argument("PerConfig: counts must be positive");
  }
  if (per_alpha < 0.0 || per_beta < 0.0) {
    throw std::invalid_argument("PerConfig: exponents must be >= 0");
  }
}

CurriculumCut curriculum_threshold(const std::vector<double>& returns, double pct) {
  if (returns.empty()) throw std::invalid_argument("curriculum_threshold: no returns");
  if (!(pct > 0.0) || pct > 100.0) {
    throw std::invalid_argument("curriculum_threshold: pct must be in (0, 100]");
  }
  const std::size_t n = returns.size();
  std::size_t k = std::size_t(std::ceil(pct / 100.0 * double(n)));
  k = std::min(std::max<std::size_t>(k, 1), n);
  std::vector<double> sorted = returns;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  CurriculumCut cut;
  cut.threshold = sorted[k - 1];
  for (std::size_t i = 0; i < n; ++i) {
    if (returns[i] >= cut.threshold) cut.kept.push_back(i);
  }
  return cut;
}

std::vector<std::pair<State, Action>> trace_pairs(
    const std::vector<backtrack::Trace>& traces) {
  std::vector<std::pair<State, Action>> pairs;
  for (const backtrack::Trace& tr : traces) {
    pairs.insert(pairs.end(), tr.steps.begin(), tr.steps.end());
  }
  return pairs;
}

double imitation_loss(agent::PolicyCritic& pc,
                      const std::vector<backtrack::Trace>& traces) {
  std::vector<std::pair<State, Action>> pairs = trace_pairs(traces);
  if (pairs.empty()) throw std::invalid_argument("imitation_loss: no trace steps");
  double total = 0.0;
  for (const auto& [s, a] : pairs) total += pc.log_prob(s, a);
  return total;
}

namespace {

// Rolls one episode, counting every step into the metrics. Returns false
// when the step budget ran out mid-episode (the partial trajectory is then
// discarded by the caller).
bool collect_episode(Env& env, agent::PolicyCritic& pc, Rng& act_rng,
                     std::uint64_t env_seed, long budget, RunMetrics& m,
                     std::vector<char>& seen, long& distinct, Trajectory& out) {
  State s = env.reset(env_seed);
  out.steps.clear();
  while (true) {
    if (m.env_steps_taken >= budget) return false;
    auto [a, logp] = pc.act(s, act_rng);
    (void)logp;
    Transition t = env.step(s, a);
    ++m.env_steps_taken;
    int bin = env.visit_bin(t.s_next);
    ++m.visitation[std::size_t(bin)];
    if (!seen[std::size_t(bin)]) {
      seen[std::size_t(bin)] = 1;
      ++distinct;
    }
    s = t.s_next;
    bool done = t.done;
    out.steps.push_back(std::move(t));
    if (done) return true;
  }
}

}  // namespace

RunMetrics run_training(Env& env, agent::PolicyCritic& pc,
                        backtrack::BacktrackModel* model,
                        buffer::ReplayBuffer& buf, const LoopConfig& cfg_in,
                        std::uint64_t run_seed) {
  LoopConfig cfg = cfg_in;
  cfg.validate();
  apply_env_to_trace_ratio(cfg);

  RunMetrics m;
  m.visit_rows = env.visit_rows();
  m.visit_cols = env.visit_cols();
  m.visitation.assign(std::size_t(m.visit_rows) * m.visit_cols, 0);

  Rng act_rng(derive_seed(run_seed, "act"));
  Rng backward_rng(derive_seed(run_seed, "backward"));
  Rng trace_rng(derive_seed(run_seed, "trace"));
  Rng seedsel_rng(derive_seed(run_seed, "seedsel"));

  const bool augment = model != nullptr && cfg.n_traces > 0;
  buffer::ValueFn value_fn = [&pc](const State& s) { return pc.value(s); };

  std::vector<char> seen(m.visitation.size(), 0);
  long distinct = 0;
  double backward_loss = kNan;
  double imit_loss = kNan;
  int episode = 0;

  try {
    while (m.env_steps_taken < cfg.total_env_steps) {
      Trajectory traj;
      if (!collect_episode(env, pc, act_rng, derive_seed(run_seed, "env", episode),
                           cfg.total_env_steps, m, seen, distinct, traj)) {
        break;
      }
      ++episode;
      agent::AcLosses losses = pc.ac_update({traj});
      double ep_ret = traj.total_reward();
      buf.add_trajectory(std::move(traj));

      if (augment && episode % cfg.rl_steps_per_cycle == 0) {
        std::vector<double> rets = buf.returns();
        CurriculumCut cut = curriculum_threshold(rets, cfg.curriculum_pct);
        std::vector<Transition> data = buf.filtered_transitions(value_fn, cut.threshold);
        std::vector<double> nll =
            model->train(data, cfg.backward_steps_per_cycle, backward_rng);
        if (!nll.empty()) backward_loss = mean(nll);

        // Recall kicks in only once the curriculum separates good episodes
        // from bad ones: traces distilled from undifferentiated rollouts are
        // noise, and imitating them early can lock in a bad policy.
        double worst = *std::min_element(rets.begin(), rets.end());
        if (cut.threshold > worst) {
          std::vector<State> seeds = buffer::produce_high_value_states(
              buf, value_fn, 1, cfg.seed_temperature, seedsel_rng);
          std::vector<backtrack::Trace> traces;
          traces.reserve(std::size_t(cfg.n_traces));
          for (int i = 0; i < cfg.n_traces; ++i) {
            traces.push_back(model->generate_trace(seeds[0], cfg.trace_length, trace_rng));
          }
          std::vector<std::pair<State, Action>> pairs = trace_pairs(traces);
          if (!pairs.empty()) {
            for (int u = 0; u < cfg.imitation_updates_per_cycle; ++u) {
              imit_loss = pc.imitation_update(pairs, cfg.imitation_lr);
            }
          }
        }
      }

      EpisodeRow row;
      row.env_steps = m.env_steps_taken;
      row.episode = episode;
      row.ret = ep_ret;
      row.policy_loss = losses.policy_loss;
      row.value_loss = losses.value_loss;
      row.backward_loss = backward_loss;
      row.imitation_loss = imit_loss;
      row.distinct_states = distinct;
      m.rows.push_back(row);
    }
  } catch (const std::exception& e) {
    m.aborted = true;
    m.abort_reason = e.what();
  }
  return m;
}

RunMetrics run_per_training(Env& env, agent::PolicyCritic& pc,
                            const PerConfig& per_cfg, const LoopConfig& cfg,
                            std::uint64_t run_seed) {
  cfg.validate();
  per_cfg.validate();

  RunMetrics m;
  m.visit_rows = env.visit_rows();
  m.visit_cols = env.visit_cols();
  m.visitation.assign(std::size_t(m.visit_rows) * m.visit_cols, 0);

  Rng act_rng(derive_seed(run_seed, "act"));
  Rng per_rng(derive_seed(run_seed, "per"));
  buffer::PerBuffer per(per_cfg.capacity, per_cfg.per_alpha, per_cfg.per_beta);

  std::vector<char> seen(m.visitation.size(), 0);
  long distinct = 0;
  const double gamma = pc.config().gamma;
  int episode = 0;

  try {
    while (m.env_steps_taken < cfg.total_env_steps) {
      Trajectory traj;
      if (!collect_episode(env, pc, act_rng, derive_seed(run_seed, "env", episode),
                           cfg.total_env_steps, m, seen, distinct, traj)) {
        break;
      }
      ++episode;
      agent::AcLosses losses = pc.ac_update({traj});
      for (const Transition& t : traj.steps) {
        double v_next = t.done ? 0.0 : pc.value(t.s_next);
        double delta = t.r + gamma * v_next - pc.value(t.s);
        per.add(t, delta);
      }
      if (episode % per_cfg.episodes_per_update == 0 &&
          per.size() >= std::size_t(per_cfg.batch_size)) {
        buffer::PerBuffer::Batch batch = per.sample(per_cfg.batch_size, per_rng);
        std::vector<double> deltas;
        pc.per_update(batch.transitions, batch.weights, &deltas);
        per.update_priorities(batch.ids, deltas);
      }

      EpisodeRow row;
      row.env_steps = m.env_steps_taken;
      row.episode = episode;
      row.ret = traj.total_reward();
      row.policy_loss = losses.policy_loss;
      row.value_loss = losses.value_loss;
      row.distinct_states = distinct;
      m.rows.push_back(row);
    }
  } catch (const std::exception& e) {
    m.aborted = true;
    m.abort_reason = e.what();
  }
  return m;
}

// ---------------------------------------------------------------------------
// Enumeration-based verification
// ---------------------------------------------------------------------------

namespace {

// prob and return per trajectory, plus total mass of the event R > L.
struct EventTable {
  std::map<ChainTrajectory, std::pair<double, double>> entries;
  double event_prob = 0.0;
};

EventTable build_event_table(const ChainMDP& chain,
                             const std::vector<std::vector<double>>& policy,
                             double gamma, double L) {
  EventTable table;
  for (const WeightedTrajectory& wt : enumerate_trajectories(chain, policy, gamma)) {
    table.entries[wt.traj] = {wt.prob, wt.ret};
    if (wt.ret > L) table.event_prob += wt.prob;
  }
  return table;
}

}  // namespace

TrajDist exact_posterior(const ChainMDP& chain,
                         const std::vector<std::vector<double>>& policy,
                         double gamma, double L) {
  EventTable table = build_event_table(chain, policy, gamma, L);
  if (table.event_prob <= 0.0) {
    throw std::invalid_argument("exact_posterior: event R > L has probability zero");
  }
  TrajDist out;
  for (const auto& [traj, pr] : table.entries) {
    if (pr.second > L) out[traj] = pr.first / table.event_prob;
  }
  return out;
}

ElboReport verify_elbo(const ChainMDP& chain,
                       const std::vector<std::vector<double>>& policy,
                       double gamma, const TrajDist& q, double L) {
  double qsum = 0.0;
  for (const auto& [traj, qp] : q) {
    (void)traj;
    if (!std::isfinite(qp) || qp < 0.0) {
      throw std::invalid_argument("verify_elbo: q has a negative or non-finite weight");
    }
    qsum += qp;
  }
  if (std::abs(qsum - 1.0) > 1e-9) {
    throw std::invalid_argument("verify_elbo: q must sum to 1");
  }

  EventTable table = build_event_table(chain, policy, gamma, L);
  ElboReport rep;
  rep.threshold = L;
  rep.log_p = table.event_prob > 0.0 ? std::log(table.event_prob) : -kInf;

  bool support_mismatch = false;
  double elbo = 0.0, kl = 0.0;
  for (const auto& [traj, qp] : q) {
    if (qp == 0.0) continue;
    double joint = 0.0;  // p(tau) * 1{R > L}
    if (auto it = table.entries.find(traj); it != table.entries.end()) {
      const auto& [prob, ret] = it->second;
      if (ret > L) joint = prob;
    }
    if (joint <= 0.0) {
      support_mismatch = true;
      break;
    }
    elbo += qp * (std::log(joint) - std::log(qp));
    kl += qp * (std::log(qp) - std::log(joint / table.event_prob));
  }
  if (support_mismatch || table.event_prob <= 0.0) {
    rep.elbo = -kInf;
    rep.kl = kInf;
  } else {
    rep.elbo = elbo;
    rep.kl = kl;
  }
  return rep;
}

double reverse_kl_check(const TrajDist& posterior, const LogProbFn& log_q) {
  if (!log_q) throw std::invalid_argument("reverse_kl_check: empty log_q");
  double kl = 0.0;
  for (const auto& [traj, pp] : posterior) {
    if (pp <= 0.0) continue;
    double lq = log_q(traj);
    if (!(lq > -kInf)) return kInf;
    kl += pp * (std::log(pp) - lq);
  }
  return kl;
}

double reverse_kl_check(const TrajDist& posterior, const TrajDist& q) {
  return reverse_kl_check(posterior, [&q](const ChainTrajectory& traj) {
    auto it = q.find(traj);
    return (it != q.end() && it->second > 0.0) ? std::log(it->second) : -kInf;
  });
}

// ---------------------------------------------------------------------------
// TabularBackwardQ
// ---------------------------------------------------------------------------

TabularBackwardQ::TabularBackwardQ(int n_states, int n_actions, int horizon)
    : n_states_(n_states),
      n_actions_(n_actions),
      horizon_(horizon),
      seed_logits_(std::size_t(n_states), 0.0),
      action_logits_(std::size_t(n_states) * n_actions, 0.0),
      state_logits_(std::size_t(n_states) * n_actions * n_states, 0.0) {
  if (n_states <= 0 || n_actions <= 0 || horizon <= 0) {
    throw std::invalid_argument("TabularBackwardQ: dims must be positive");
  }
}

namespace {

void check_traj(const ChainTrajectory& traj, int S, int A, int H) {
  if (int(traj.actions.size()) != H || traj.states.size() != traj.actions.size() + 1) {
    throw std::invalid_argument("TabularBackwardQ: trajectory has wrong horizon");
  }
  for (int s : traj.states) {
    if (s < 0 || s >= S) throw std::invalid_argument("TabularBackwardQ: state out of range");
  }
  for (int a : traj.actions) {
    if (a < 0 || a >= A) throw std::invalid_argument("TabularBackwardQ: action out of range");
  }
}

}  // namespace

double TabularBackwardQ::log_prob(const ChainTrajectory& traj) const {
  check_traj(traj, n_states_, n_actions_, horizon_);
  auto row_log_prob = [](const double* row, int len, int k) {
    nn::CategoricalHead head{std::vector<double>(row, row + len)};
    return head.log_prob(k);
  };
  double lp = row_log_prob(seed_logits_.data(), n_states_, traj.states[std::size_t(horizon_)]);
  for (int t = 0; t < horizon_; ++t) {
    int s_next = traj.states[std::size_t(t) + 1];
    int a = traj.actions[std::size_t(t)];
    int s_prev = traj.states[std::size_t(t)];
    lp += row_log_prob(action_logits_.data() + std::size_t(s_next) * n_actions_, n_actions_, a);
    lp += row_log_prob(
        state_logits_.data() + (std::size_t(s_next) * n_actions_ + a) * n_states_, n_states_,
        s_prev);
  }
  return lp;
}

void TabularBackwardQ::mle_step(const std::vector<ChainTrajectory>& batch, double lr) {
  if (batch.empty()) throw std::invalid_argument("mle_step: empty batch");
  if (!(lr > 0.0)) throw std::invalid_argument("mle_step: lr must be positive");
  std::vector<double> g_seed(seed_logits_.size(), 0.0);
  std::vector<double> g_action(action_logits_.size(), 0.0);
  std::vector<double> g_state(state_logits_.size(), 0.0);

  auto add_row_grad = [](std::vector<double>& g, std::size_t offset, const double* row, int len,
                         int k) {
    nn::CategoricalHead head{std::vector<double>(row, row + len)};
    std::vector<double> grad = head.log_prob_grad(k);
    for (int i = 0; i < len; ++i) g[offset + std::size_t(i)] += grad[std::size_t(i)];
  };

  for (const ChainTrajectory& traj : batch) {
    check_traj(traj, n_states_, n_actions_, horizon_);
    add_row_grad(g_seed, 0, seed_logits_.data(), n_states_, traj.states[std::size_t(horizon_)]);
    for (int t = 0; t < horizon_; ++t) {
      int s_next = traj.states[std::size_t(t) + 1];
      int a = traj.actions[std::size_t(t)];
      int s_prev = traj.states[std::size_t(t)];
      std::size_t a_off = std::size_t(s_next) * n_actions_;
      add_row_grad(g_action, a_off, action_logits_.data() + a_off, n_actions_, a);
      std::size_t s_off = (std::size_t(s_next) * n_actions_ + a) * n_states_;
      add_row_grad(g_state, s_off, state_logits_.data() + s_off, n_states_, s_prev);
    }
  }

  const double scale = lr / double(batch.size());
  for (std::size_t i = 0; i < seed_logits_.size(); ++i) seed_logits_[i] += scale * g_seed[i];
  for (std::size_t i = 0; i < action_logits_.size(); ++i) action_logits_[i] += scale * g_action[i];
  for (std::size_t i = 0; i < state_logits_.size(); ++i) state_logits_[i] += scale * g_state[i];
}

std::vector<double> TabularBackwardQ::seed_probs() const {
  return nn::CategoricalHead{seed_logits_}.probs();
}

std::vector<double> TabularBackwardQ::action_probs(int s_next) const {
  if (s_next < 0 || s_next >= n_states_) throw std::invalid_argument("action_probs: bad state");
  auto begin = action_logits_.begin() + std::size_t(s_next) * n_actions_;
  return nn::CategoricalHead{std::vector<double>(begin, begin + n_actions_)}.probs();
}

std::vector<double> TabularBackwardQ::state_probs(int s_next, int action) const {
  if (s_next < 0 || s_next >= n_states_ || action < 0 || action >= n_actions_) {
    throw std::invalid_argument("state_probs: bad indices");
  }
  auto begin = state_logits_.begin() + (std::size_t(s_next) * n_actions_ + action) * n_states_;
  return nn::CategoricalHead{std::vector<double>(begin, begin + n_states_)}.probs();
}

std::vector<ChainTrajectory> rejection_sample(
    ChainMDP& chain, const std::vector<std::vector<double>>& policy,
    double gamma, double L, int count, int max_tries, Rng& rng) {
  if (count <= 0) throw std::invalid_argument("rejection_sample: count must be positive");
  if (int(policy.size()) != chain.n_states()) {
    throw std::invalid_argument("rejection_sample: policy row per state required");
  }
  std::vector<ChainTrajectory> out;
  out.reserve(std::size_t(count));
  for (int attempt = 0; attempt < max_tries && int(out.size()) < count; ++attempt) {
    State s = chain.reset(rng());
    ChainTrajectory traj;
    traj.states.push_back(chain.state_index(s));
    double ret = 0.0, disc = 1.0;
    while (true) {
      int si = chain.state_index(s);
      int a = sample_weighted(policy[std::size_t(si)], rng);
      Transition t = chain.step(s, Action::discrete(a));
      traj.actions.push_back(a);
      traj.states.push_back(chain.state_index(t.s_next));
      ret += disc * t.r;
      disc *= gamma;
      s = t.s_next;
      if (t.done) break;
    }
    if (ret > L) out.push_back(std::move(traj));
  }
  if (int(out.size()) < count) {
    throw std::runtime_error("rejection_sample: max_tries exhausted before count accepted");
  }
  return out;
}

}  // namespace recall::orchestrator
