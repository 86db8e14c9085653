#include "recall/agent.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace recall::agent {

PolicyCritic::PolicyCritic(const Env& env, AcConfig cfg, std::uint64_t init_seed)
    : env_(&env),
      cfg_(std::move(cfg)),
      discrete_(env.discrete_actions()),
      policy_net_(nn::Mlp::make(env.feature_dim(), cfg_.hidden,
                                discrete_ ? env.num_actions() : env.action_dim(),
                                cfg_.activation, derive_seed(init_seed, "policy_net"))),
      value_net_(nn::Mlp::make(env.feature_dim(), cfg_.hidden, 1, cfg_.activation,
                               derive_seed(init_seed, "value_net"))) {
  if (!discrete_) {
    log_std_.assign(env.action_dim(), 0.0);
    log_std_grad_.assign(env.action_dim(), 0.0);
  }
}

nn::CategoricalHead PolicyCritic::policy_head(const State& s) {
  if (!discrete_) throw std::logic_error("policy_head: policy is continuous");
  return nn::CategoricalHead{policy_net_.forward(env_->featurize(s))};
}

nn::GaussianHead PolicyCritic::policy_gaussian(const State& s) {
  if (discrete_) throw std::logic_error("policy_gaussian: policy is discrete");
  return nn::GaussianHead{policy_net_.forward(env_->featurize(s)), log_std_};
}

std::pair<Action, double> PolicyCritic::act(const State& s, Rng& rng) {
  if (discrete_) {
    nn::CategoricalHead head = policy_head(s);
    int k = head.sample(rng);
    return {Action::discrete(k), head.log_prob(k)};
  }
  nn::GaussianHead head = policy_gaussian(s);
  std::vector<double> a = head.sample(rng);
  double lp = head.log_prob(a);
  return {Action::continuous(std::move(a)), lp};
}

double PolicyCritic::log_prob(const State& s, const Action& a) {
  if (discrete_) return policy_head(s).log_prob(a.index);
  return policy_gaussian(s).log_prob(a.vec);
}

double PolicyCritic::value(const State& s) {
  return value_net_.forward(env_->featurize(s))[0];
}

std::vector<double> PolicyCritic::gae_advantages(const Trajectory& traj) {
  if (traj.empty()) throw std::invalid_argument("gae_advantages: empty trajectory");
  const std::size_t n = traj.size();
  std::vector<double> v(n + 1);
  for (std::size_t t = 0; t < n; ++t) v[t] = value(traj.steps[t].s);
  v[n] = traj.steps.back().done ? 0.0 : value(traj.steps.back().s_next);

  std::vector<double> adv(n);
  double acc = 0.0;
  for (std::size_t t = n; t-- > 0;) {
    const Transition& tr = traj.steps[t];
    double bootstrap = tr.done ? 0.0 : v[t + 1];
    double delta = tr.r + cfg_.gamma * bootstrap - v[t];
    acc = delta + cfg_.gamma * cfg_.lambda * (tr.done ? 0.0 : acc);
    adv[t] = acc;
  }
  return adv;
}

void PolicyCritic::add_log_prob_grads(const Features& x, const Action& a, double weight) {
  // weight multiplies d log pi / d params, accumulated as a descent grad
  // (caller negates upstream).
  if (discrete_) {
    nn::CategoricalHead head{policy_net_.forward(x)};
    std::vector<double> g = head.log_prob_grad(a.index);
    for (double& e : g) e *= weight;
    policy_net_.backward(g);
    return;
  }
  nn::GaussianHead head{policy_net_.forward(x), log_std_};
  std::vector<double> gm = head.log_prob_grad_mean(a.vec);
  std::vector<double> gs = head.log_prob_grad_log_std(a.vec);
  for (double& e : gm) e *= weight;
  policy_net_.backward(gm);
  for (std::size_t i = 0; i < gs.size(); ++i) log_std_grad_[i] += weight * gs[i];
}

void PolicyCritic::clip_policy_grads() {
  if (cfg_.grad_clip <= 0.0) return;
  double norm_sq = policy_net_.grad_norm_sq();
  for (double g : log_std_grad_) norm_sq += g * g;
  double norm = std::sqrt(norm_sq);
  if (norm > cfg_.grad_clip) {
    double f = cfg_.grad_clip / norm;
    policy_net_.scale_grads(f);
    for (double& g : log_std_grad_) g *= f;
  }
}

AcLosses PolicyCritic::ac_update(const std::vector<Trajectory>& batch) {
  std::size_t n = 0;
  for (const Trajectory& traj : batch) n += traj.size();
  if (n == 0) throw std::invalid_argument("ac_update: empty batch");

  policy_net_.zero_grad();
  value_net_.zero_grad();
  std::fill(log_std_grad_.begin(), log_std_grad_.end(), 0.0);

  AcLosses losses;
  for (const Trajectory& traj : batch) {
    std::vector<double> adv = gae_advantages(traj);
    for (std::size_t t = 0; t < traj.size(); ++t) {
      const Transition& tr = traj.steps[t];
      Features x = env_->featurize(tr.s);
      double target = adv[t] + value(tr.s);

      // critic: descend value_coef * 1/2 (V - target)^2
      double v = value_net_.forward(x)[0];
      double err = v - target;
      std::vector<double> vg{cfg_.value_coef * err};
      value_net_.backward(vg);
      losses.value_loss += err * err;

      // actor: ascend A * log pi + entropy_coef * H
      if (discrete_) {
        nn::CategoricalHead head{policy_net_.forward(x)};
        std::vector<double> g = head.log_prob_grad(tr.a.index);
        double lp = head.log_prob(tr.a.index);
        double h = head.entropy();
        std::vector<double> hg = head.entropy_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
          g[i] = -(adv[t] * g[i] + cfg_.entropy_coef * hg[i]);
        }
        policy_net_.backward(g);
        losses.policy_loss -= adv[t] * lp;
        losses.entropy += h;
      } else {
        nn::GaussianHead head{policy_net_.forward(x), log_std_};
        double lp = head.log_prob(tr.a.vec);
        std::vector<double> gm = head.log_prob_grad_mean(tr.a.vec);
        std::vector<double> gs = head.log_prob_grad_log_std(tr.a.vec);
        for (double& e : gm) e *= -adv[t];
        policy_net_.backward(gm);
        // Gaussian entropy depends on log_std only: dH/dlog_std_i = 1.
        for (std::size_t i = 0; i < gs.size(); ++i) {
          log_std_grad_[i] += -(adv[t] * gs[i] + cfg_.entropy_coef);
        }
        losses.policy_loss -= adv[t] * lp;
        losses.entropy += head.entropy();
      }
    }
  }

  losses.policy_loss /= double(n);
  losses.value_loss /= double(n);
  losses.entropy /= double(n);
  if (!std::isfinite(losses.policy_loss) || !std::isfinite(losses.value_loss)) {
    std::ostringstream msg;
    msg << "ac_update: non-finite loss (policy=" << losses.policy_loss
        << ", value=" << losses.value_loss << ", batch=" << batch.size()
        << ", transitions=" << n << ")";
    throw std::runtime_error(msg.str());
  }

  policy_net_.scale_grads(1.0 / double(n));
  for (double& g : log_std_grad_) g /= double(n);
  value_net_.scale_grads(1.0 / double(n));
  clip_policy_grads();
  if (cfg_.grad_clip > 0.0) {
    double vnorm = std::sqrt(value_net_.grad_norm_sq());
    if (vnorm > cfg_.grad_clip) value_net_.scale_grads(cfg_.grad_clip / vnorm);
  }

  policy_net_.sgd_step(cfg_.alpha);
  for (std::size_t i = 0; i < log_std_.size(); ++i) {
    log_std_[i] -= cfg_.alpha * log_std_grad_[i];
  }
  value_net_.sgd_step(cfg_.alpha);
  return losses;
}

AcLosses PolicyCritic::per_update(const std::vector<const Transition*>& batch,
                                  const std::vector<double>& weights,
                                  std::vector<double>* deltas) {
  if (batch.empty() || batch.size() != weights.size()) {
    throw std::invalid_argument("per_update: bad batch/weights");
  }
  if (deltas) deltas->assign(batch.size(), 0.0);
  policy_net_.zero_grad();
  value_net_.zero_grad();
  std::fill(log_std_grad_.begin(), log_std_grad_.end(), 0.0);

  AcLosses losses;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Transition& t = *batch[i];
    double w = weights[i];
    double v = value(t.s);
    double vnext = t.done ? 0.0 : value(t.s_next);
    double delta = t.r + cfg_.gamma * vnext - v;
    if (deltas) (*deltas)[i] = delta;

    Features x = env_->featurize(t.s);
    value_net_.forward(x);
    std::vector<double> vg{cfg_.value_coef * w * (-delta)};  // V - target = -delta
    value_net_.backward(vg);
    losses.value_loss += delta * delta;

    losses.policy_loss -= w * delta * log_prob(t.s, t.a);
    add_log_prob_grads(x, t.a, -w * delta);
  }
  double n = double(batch.size());
  losses.policy_loss /= n;
  losses.value_loss /= n;
  if (!std::isfinite(losses.policy_loss) || !std::isfinite(losses.value_loss)) {
    throw std::runtime_error("per_update: non-finite loss");
  }
  policy_net_.scale_grads(1.0 / n);
  for (double& g : log_std_grad_) g /= n;
  value_net_.scale_grads(1.0 / n);
  clip_policy_grads();
  if (cfg_.grad_clip > 0.0) {
    double vnorm = std::sqrt(value_net_.grad_norm_sq());
    if (vnorm > cfg_.grad_clip) value_net_.scale_grads(cfg_.grad_clip / vnorm);
  }
  policy_net_.sgd_step(cfg_.alpha);
  for (std::size_t i = 0; i < log_std_.size(); ++i) log_std_[i] -= cfg_.alpha * log_std_grad_[i];
  value_net_.sgd_step(cfg_.alpha);
  return losses;
}

double PolicyCritic::imitation_update(
    const std::vector<std::pair<State, Action>>& pairs, double lr) {
  if (pairs.empty()) throw std::invalid_argument("imitation_update: no pairs");
  policy_net_.zero_grad();
  std::fill(log_std_grad_.begin(), log_std_grad_.end(), 0.0);
  double total = 0.0;
  for (const auto& [s, a] : pairs) {
    total += log_prob(s, a);
    add_log_prob_grads(env_->featurize(s), a, -1.0);  // descend -log pi
  }
  if (!std::isfinite(total)) {
    throw std::runtime_error("imitation_update: non-finite log-likelihood");
  }
  double n = double(pairs.size());
  policy_net_.scale_grads(1.0 / n);
  for (double& g : log_std_grad_) g /= n;
  clip_policy_grads();
  policy_net_.sgd_step(lr);
  for (std::size_t i = 0; i < log_std_.size(); ++i) log_std_[i] -= lr * log_std_grad_[i];
  return total;
}

}  // namespace recall::agent
