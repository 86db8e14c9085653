#include "recall/backtrack.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace recall::backtrack {

Normalizer Normalizer::identity(int dim) {
  Normalizer n;
  n.mean.assign(dim, 0.0);
  n.std.assign(dim, 1.0);
  return n;
}

Normalizer Normalizer::fit(const std::vector<std::vector<double>>& rows, int dim) {
  if (rows.empty()) return identity(dim);
  Normalizer n;
  n.mean.assign(dim, 0.0);
  n.std.assign(dim, 0.0);
  for (const auto& r : rows) {
    for (int i = 0; i < dim; ++i) n.mean[i] += r[i];
  }
  for (double& m : n.mean) m /= double(rows.size());
  for (const auto& r : rows) {
    for (int i = 0; i < dim; ++i) {
      double d = r[i] - n.mean[i];
      n.std[i] += d * d;
    }
  }
  for (double& s : n.std) s = std::max(std::sqrt(s / double(rows.size())), 1e-6);
  return n;
}

std::vector<double> Normalizer::normalize(const std::vector<double>& x) const {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean[i]) / std[i];
  return out;
}

std::vector<double> Normalizer::unnormalize(const std::vector<double>& x) const {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * std[i] + mean[i];
  return out;
}

std::vector<double> Normalizer::scale(const std::vector<double>& dx) const {
  std::vector<double> out(dx.size());
  for (std::size_t i = 0; i < dx.size(); ++i) out[i] = dx[i] / std[i];
  return out;
}

std::vector<double> Normalizer::unscale(const std::vector<double>& dx) const {
  std::vector<double> out(dx.size());
  for (std::size_t i = 0; i < dx.size(); ++i) out[i] = dx[i] * std[i];
  return out;
}

void dump_traces_jsonl(const std::string& path, const std::vector<Trace>& traces) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("dump_traces_jsonl: cannot open " + path);
  for (const Trace& tr : traces) {
    nlohmann::json j;
    j["seed_state"] = tr.seed_state;
    j["truncated"] = tr.truncated;
    j["steps"] = nlohmann::json::array();
    for (const auto& [s, a] : tr.steps) {
      nlohmann::json step;
      step["s"] = s;
      if (a.index >= 0) {
        step["a"] = a.index;
      } else {
        step["a"] = a.vec;
      }
      j["steps"].push_back(step);
    }
    out << j.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------

static int action_head_dim(const Env& env) {
  return env.discrete_actions() ? env.num_actions() : env.action_dim();
}

static int state_net_in_dim(const Env& env) {
  if (env.discrete_actions()) return env.feature_dim() + env.num_actions();
  return env.feature_dim() + env.action_dim();
}

static int state_net_out_dim(const Env& env) {
  if (env.discrete_actions()) return env.backward_candidate_count();
  return 2 * env.feature_dim();  // mean and log-std per state dimension
}

BacktrackModel::BacktrackModel(const Env& env, BacktrackConfig cfg, std::uint64_t init_seed)
    : env_(&env),
      cfg_(std::move(cfg)),
      discrete_(env.discrete_actions()),
      action_net_(nn::Mlp::make(env.feature_dim(), cfg_.hidden, action_head_dim(env),
                                nn::Activation::kTanh,
                                derive_seed(init_seed, "backtrack_action"))),
      state_net_(nn::Mlp::make(state_net_in_dim(env), cfg_.hidden, state_net_out_dim(env),
                               nn::Activation::kRelu,
                               derive_seed(init_seed, "backtrack_state"))),
      state_norm_(Normalizer::identity(env.feature_dim())),
      action_norm_(Normalizer::identity(env.discrete_actions() ? 0 : env.action_dim())) {
  if (discrete_) {
    candidates_ = env.backward_candidate_count();
    if (candidates_ <= 0) {
      throw std::invalid_argument("BacktrackModel: env exposes no predecessor candidates");
    }
    if (cfg_.use_true_state_predictor) state_net_.zero_output_layer();
  } else {
    state_dim_ = env.feature_dim();
    action_dim_ = env.action_dim();
    if (cfg_.use_true_state_predictor) {
      throw std::invalid_argument("BacktrackModel: true state predictor is discrete-only");
    }
  }
}

BacktrackModel BacktrackModel::random_model(const Env& env, std::uint64_t init_seed) {
  BacktrackConfig cfg;
  cfg.use_true_state_predictor = env.discrete_actions();
  BacktrackModel m(env, cfg, init_seed);
  m.action_net_.zero_output_layer();  // exactly uniform / zero-mean
  m.state_net_.zero_output_layer();
  m.frozen_ = true;
  return m;
}

Features BacktrackModel::action_input(const State& s_next) const {
  if (discrete_) return env_->featurize(s_next);
  return Features::from_dense(state_norm_.normalize(s_next));
}

Features BacktrackModel::state_input(const State& s_next, const Action& a) const {
  Features f = env_->featurize(s_next);
  if (discrete_) {
    if (f.sparse()) {
      Features out;
      out.dim = f.dim + env_->num_actions();
      out.hot = f.hot;
      out.hot.push_back(f.dim + a.index);
      return out;
    }
    std::vector<double> dense = f.to_dense();
    dense.resize(f.dim + env_->num_actions(), 0.0);
    dense[f.dim + a.index] = 1.0;
    return Features::from_dense(std::move(dense));
  }
  std::vector<double> dense = state_norm_.normalize(s_next);
  std::vector<double> an = action_norm_.normalize(a.vec);
  dense.insert(dense.end(), an.begin(), an.end());
  return Features::from_dense(std::move(dense));
}

int BacktrackModel::candidate_index(const State& s, const State& s_next) const {
  std::vector<State> cand = env_->backward_candidates(s_next);
  for (std::size_t i = 0; i < cand.size(); ++i) {
    if (cand[i] == s) return int(i);
  }
  throw std::logic_error("BacktrackModel: predecessor outside candidate set");
}

double BacktrackModel::action_log_prob(const State& s_next, const Action& a) {
  if (discrete_) {
    nn::CategoricalHead head{action_net_.forward(action_input(s_next))};
    return head.log_prob(a.index);
  }
  nn::GaussianHead head{action_net_.forward(action_input(s_next)),
                        std::vector<double>(action_dim_, 0.0)};
  return head.log_prob(action_norm_.normalize(a.vec));
}

double BacktrackModel::state_log_prob(const State& s, const Action& a, const State& s_next) {
  if (discrete_) {
    int idx = candidate_index(s, s_next);
    if (cfg_.use_true_state_predictor) {
      double p = env_->true_backward_state_probs(a.index, s_next)[idx];
      return std::log(p);
    }
    nn::CategoricalHead head{state_net_.forward(state_input(s_next, a))};
    return head.log_prob(idx);
  }
  const std::vector<double>& out = state_net_.forward(state_input(s_next, a));
  std::vector<double> mean(out.begin(), out.begin() + state_dim_);
  std::vector<double> log_std(out.begin() + state_dim_, out.end());
  nn::GaussianHead head{std::move(mean), std::move(log_std)};
  std::vector<double> delta(state_dim_);
  for (int i = 0; i < state_dim_; ++i) delta[i] = s[i] - s_next[i];
  return head.log_prob(state_norm_.scale(delta));
}

double BacktrackModel::backtrack_loss(const Trajectory& traj) {
  if (traj.empty()) throw std::invalid_argument("backtrack_loss: empty trajectory");
  double total = 0.0;
  for (const Transition& t : traj.steps) {
    total += action_log_prob(t.s_next, t.a) + state_log_prob(t.s, t.a, t.s_next);
  }
  if (std::isnan(total)) throw std::runtime_error("backtrack_loss: NaN log-likelihood");
  return total;
}

void BacktrackModel::fit_normalizer(const std::vector<Transition>& data) {
  if (discrete_ || data.empty()) return;
  std::vector<std::vector<double>> states, actions;
  for (const Transition& t : data) {
    states.push_back(t.s);
    states.push_back(t.s_next);
    actions.push_back(t.a.vec);
  }
  state_norm_ = Normalizer::fit(states, state_dim_);
  action_norm_ = Normalizer::fit(actions, action_dim_);
}

void BacktrackModel::train_minibatch(const std::vector<Transition>& data,
                                     const std::vector<int>& picks, double* nll) {
  action_net_.zero_grad();
  state_net_.zero_grad();
  double total = 0.0;
  for (int pick : picks) {
    const Transition& t = data[pick];
    if (discrete_) {
      nn::CategoricalHead ha{action_net_.forward(action_input(t.s_next))};
      total -= ha.log_prob(t.a.index);
      std::vector<double> ga = ha.log_prob_grad(t.a.index);
      for (double& e : ga) e = -e;
      action_net_.backward(ga);

      int idx = candidate_index(t.s, t.s_next);
      if (cfg_.use_true_state_predictor) {
        total -= state_log_prob(t.s, t.a, t.s_next);  // constant w.r.t. params
      } else {
        nn::CategoricalHead hs{state_net_.forward(state_input(t.s_next, t.a))};
        total -= hs.log_prob(idx);
        std::vector<double> gs = hs.log_prob_grad(idx);
        for (double& e : gs) e = -e;
        state_net_.backward(gs);
      }
    } else {
      std::vector<double> an = action_norm_.normalize(t.a.vec);
      nn::GaussianHead ha{action_net_.forward(action_input(t.s_next)),
                          std::vector<double>(action_dim_, 0.0)};
      total -= ha.log_prob(an);
      std::vector<double> ga = ha.log_prob_grad_mean(an);
      for (double& e : ga) e = -e;
      action_net_.backward(ga);

      const std::vector<double>& out = state_net_.forward(state_input(t.s_next, t.a));
      std::vector<double> mean(out.begin(), out.begin() + state_dim_);
      std::vector<double> log_std(out.begin() + state_dim_, out.end());
      nn::GaussianHead hs{mean, log_std};
      std::vector<double> delta(state_dim_);
      for (int i = 0; i < state_dim_; ++i) delta[i] = t.s[i] - t.s_next[i];
      std::vector<double> dn = state_norm_.scale(delta);
      total -= hs.log_prob(dn);
      std::vector<double> gm = hs.log_prob_grad_mean(dn);
      std::vector<double> gs = hs.log_prob_grad_log_std(dn);
      std::vector<double> g(2 * state_dim_);
      for (int i = 0; i < state_dim_; ++i) {
        g[i] = -gm[i];
        g[state_dim_ + i] = -gs[i];
      }
      state_net_.backward(g);
    }
  }
  *nll = total / double(picks.size());
}

std::vector<double> BacktrackModel::train(const std::vector<Transition>& data, int steps,
                                          Rng& rng) {
  if (frozen_ || data.empty() || steps <= 0) return {};
  fit_normalizer(data);
  // Full-batch (deterministic) when the data fits in one minibatch.
  const bool full_batch = int(data.size()) <= cfg_.batch_size;
  const int batch = full_batch ? int(data.size()) : cfg_.batch_size;
  std::uniform_int_distribution<int> pick(0, int(data.size()) - 1);
  std::vector<double> history;
  history.reserve(steps);
  std::vector<int> picks(batch);
  if (full_batch) {
    for (int i = 0; i < batch; ++i) picks[std::size_t(i)] = i;
  }
  for (int step = 0; step < steps; ++step) {
    if (!full_batch) {
      for (int& p : picks) p = pick(rng);
    }
    double nll = 0.0;
    train_minibatch(data, picks, &nll);
    if (!std::isfinite(nll)) {
      std::ostringstream msg;
      msg << "BacktrackModel::train: non-finite loss at step " << step;
      throw std::runtime_error(msg.str());
    }
    double inv = 1.0 / double(batch);
    action_net_.scale_grads(inv);
    state_net_.scale_grads(inv);
    if (cfg_.grad_clip > 0.0) {
      for (nn::Mlp* net : {&action_net_, &state_net_}) {
        double norm = std::sqrt(net->grad_norm_sq());
        if (norm > cfg_.grad_clip) net->scale_grads(cfg_.grad_clip / norm);
      }
    }
    action_net_.sgd_step(cfg_.beta);
    if (!cfg_.use_true_state_predictor) state_net_.sgd_step(cfg_.beta);
    history.push_back(nll);
  }
  return history;
}

std::vector<double> BacktrackModel::action_probs(const State& s_next) {
  if (!discrete_) throw std::logic_error("action_probs: continuous model");
  return nn::CategoricalHead{action_net_.forward(action_input(s_next))}.probs();
}

std::vector<double> BacktrackModel::state_probs(const Action& a, const State& s_next) {
  if (!discrete_) throw std::logic_error("state_probs: continuous model");
  if (cfg_.use_true_state_predictor) return env_->true_backward_state_probs(a.index, s_next);
  return nn::CategoricalHead{state_net_.forward(state_input(s_next, a))}.probs();
}

Trace BacktrackModel::generate_trace(const State& seed_state, int length, Rng& rng) {
  if (length < 1) throw std::invalid_argument("generate_trace: length must be >= 1");
  Trace trace;
  trace.seed_state = seed_state;
  std::vector<std::pair<State, Action>> rev;
  rev.reserve(length);
  State cur = seed_state;
  for (int i = 0; i < length; ++i) {
    if (discrete_) {
      nn::CategoricalHead ha{action_net_.forward(action_input(cur))};
      int a = ha.sample(rng);
      std::vector<double> probs = state_probs(Action::discrete(a), cur);
      // Mask candidate cells that are not states of the MDP (walls, out of
      // grid); when nothing valid remains, stay put (candidate 0 is cur).
      std::vector<State> cand = env_->backward_candidates(cur);
      double total = 0.0;
      for (std::size_t c = 0; c < cand.size(); ++c) {
        if (!env_->valid_state(cand[c])) probs[c] = 0.0;
        total += probs[c];
      }
      int idx = total > 0.0 ? sample_weighted(probs, rng) : 0;
      rev.emplace_back(std::move(cand[idx]), Action::discrete(a));
    } else {
      nn::GaussianHead ha{action_net_.forward(action_input(cur)),
                          std::vector<double>(action_dim_, 0.0)};
      Action a = Action::continuous(action_norm_.unnormalize(ha.sample(rng)));
      const std::vector<double>& out = state_net_.forward(state_input(cur, a));
      std::vector<double> mean(out.begin(), out.begin() + state_dim_);
      std::vector<double> log_std(out.begin() + state_dim_, out.end());
      nn::GaussianHead hs{std::move(mean), std::move(log_std)};
      std::vector<double> delta = state_norm_.unscale(hs.sample(rng));
      State prev(state_dim_);
      for (int d = 0; d < state_dim_; ++d) prev[d] = cur[d] + delta[d];
      std::vector<std::pair<double, double>> box = env_->state_box();
      for (std::size_t d = 0; d < box.size(); ++d) {
        if (prev[d] < box[d].first || prev[d] > box[d].second) {
          prev[d] = std::clamp(prev[d], box[d].first, box[d].second);
          trace.truncated = true;
        }
      }
      rev.emplace_back(std::move(prev), std::move(a));
    }
    cur = rev.back().first;
  }
  trace.steps.assign(rev.rbegin(), rev.rend());
  return trace;
}

}  // namespace recall::backtrack
