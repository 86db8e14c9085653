#include "recall/boltzmann.hpp"

#include <cmath>
#include <stdexcept>

#include "recall/nn.hpp"

namespace recall::boltzmann {

void BoltzmannTask::validate() const {
  if (context_probs.empty() || rewards.size() != context_probs.size()) {
    throw std::invalid_argument("BoltzmannTask: need one reward row per context");
  }
  double total = 0.0;
  for (double p : context_probs) {
    if (!std::isfinite(p) || p < 0.0) {
      throw std::invalid_argument("BoltzmannTask: bad context probability");
    }
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw std::invalid_argument("BoltzmannTask: context probs must sum to 1");
  }
  const std::size_t n_act = rewards[0].size();
  if (n_act == 0) throw std::invalid_argument("BoltzmannTask: no actions");
  for (const auto& row : rewards) {
    if (row.size() != n_act) throw std::invalid_argument("BoltzmannTask: ragged reward table");
    for (double r : row) {
      if (!std::isfinite(r)) throw std::invalid_argument("BoltzmannTask: non-finite reward");
    }
  }
  if (!(temperature > 0.0)) throw std::invalid_argument("BoltzmannTask: temperature must be > 0");
}

BoltzmannTask BoltzmannTask::random(int n_contexts, int n_actions, Rng& rng) {
  if (n_contexts <= 0 || n_actions <= 0) {
    throw std::invalid_argument("BoltzmannTask::random: dims must be positive");
  }
  std::uniform_real_distribution<double> unit(0.05, 1.0);
  std::uniform_real_distribution<double> reward(-1.0, 1.0);
  BoltzmannTask task;
  task.context_probs.resize(std::size_t(n_contexts));
  double total = 0.0;
  for (double& p : task.context_probs) {
    p = unit(rng);
    total += p;
  }
  for (double& p : task.context_probs) p /= total;
  task.rewards.assign(std::size_t(n_contexts), std::vector<double>(std::size_t(n_actions)));
  for (auto& row : task.rewards) {
    for (double& r : row) r = reward(rng);
  }
  return task;
}

TargetDist boltzmann_target(const BoltzmannTask& task, int s) {
  if (s < 0 || s >= task.n_contexts()) throw std::invalid_argument("boltzmann_target: bad context");
  if (!(task.temperature > 0.0)) {
    throw std::invalid_argument("boltzmann_target: temperature must be > 0");
  }
  const auto& row = task.rewards[std::size_t(s)];
  std::vector<double> logits(row.size());
  for (std::size_t a = 0; a < row.size(); ++a) logits[a] = row[a] / task.temperature;
  nn::CategoricalHead head{logits};
  TargetDist out;
  out.probs = head.probs();
  // log Z = lse(r/T); recover it from any member: log p(0) = logit0 - lse.
  out.log_z = logits[0] - head.log_prob(0);
  return out;
}

SoftPolicy::SoftPolicy(int n_contexts, int n_actions)
    : n_contexts_(n_contexts),
      n_actions_(n_actions),
      logits_(std::size_t(n_contexts) * n_actions, 0.0) {
  if (n_contexts <= 0 || n_actions <= 0) {
    throw std::invalid_argument("SoftPolicy: dims must be positive");
  }
}

std::vector<double> SoftPolicy::probs(int s) const {
  if (s < 0 || s >= n_contexts_) throw std::invalid_argument("SoftPolicy::probs: bad context");
  auto begin = logits_.begin() + std::size_t(s) * n_actions_;
  return nn::CategoricalHead{std::vector<double>(begin, begin + n_actions_)}.probs();
}

std::vector<double> SoftPolicy::log_probs(int s) const {
  std::vector<double> p = probs(s);
  for (double& v : p) v = std::log(v);
  return p;
}

void SoftPolicy::set_logits(int s, const std::vector<double>& row) {
  if (s < 0 || s >= n_contexts_ || int(row.size()) != n_actions_) {
    throw std::invalid_argument("SoftPolicy::set_logits: bad shape");
  }
  std::copy(row.begin(), row.end(), logits_.begin() + std::size_t(s) * n_actions_);
}

void SoftPolicy::nudge_logits(int s, const std::vector<double>& grad, double scale) {
  if (s < 0 || s >= n_contexts_ || int(grad.size()) != n_actions_) {
    throw std::invalid_argument("SoftPolicy::nudge_logits: bad shape");
  }
  double* row = logits_.data() + std::size_t(s) * n_actions_;
  for (int a = 0; a < n_actions_; ++a) row[std::size_t(a)] += scale * grad[std::size_t(a)];
}

double expected_reward(const BoltzmannTask& task, const SoftPolicy& policy) {
  task.validate();
  double j = 0.0;
  for (int s = 0; s < task.n_contexts(); ++s) {
    std::vector<double> pi = policy.probs(s);
    const auto& row = task.rewards[std::size_t(s)];
    double inner = 0.0;
    for (std::size_t a = 0; a < row.size(); ++a) inner += pi[a] * row[a];
    j += task.context_probs[std::size_t(s)] * inner;
  }
  return j;
}

double policy_entropy(const BoltzmannTask& task, const SoftPolicy& policy) {
  double h = 0.0;
  for (int s = 0; s < task.n_contexts(); ++s) {
    h += task.context_probs[std::size_t(s)] * nn::CategoricalHead{policy.log_probs(s)}.entropy();
  }
  return h;
}

FreeEnergyReport free_energy_decomposition(const BoltzmannTask& task,
                                           const SoftPolicy& policy) {
  task.validate();
  FreeEnergyReport rep;
  rep.j_r = expected_reward(task, policy);
  rep.entropy = policy_entropy(task, policy);
  for (int s = 0; s < task.n_contexts(); ++s) {
    TargetDist target = boltzmann_target(task, s);
    std::vector<double> pi = policy.probs(s);
    std::vector<double> log_pi = policy.log_probs(s);
    double kl_s = 0.0;
    for (std::size_t a = 0; a < pi.size(); ++a) {
      if (pi[a] > 0.0) kl_s += pi[a] * (log_pi[a] - std::log(target.probs[a]));
    }
    rep.kl += task.context_probs[std::size_t(s)] * kl_s;
    rep.log_z_term += task.context_probs[std::size_t(s)] * target.log_z;
  }
  return rep;
}

double kl_descent_step(const BoltzmannTask& task, SoftPolicy& policy, double lr) {
  task.validate();
  if (!(lr > 0.0)) throw std::invalid_argument("kl_descent_step: lr must be positive");
  double kl_total = 0.0;
  for (int s = 0; s < task.n_contexts(); ++s) {
    TargetDist target = boltzmann_target(task, s);
    std::vector<double> pi = policy.probs(s);
    std::vector<double> log_pi = policy.log_probs(s);
    const int n_act = int(pi.size());

    double kl_s = 0.0;
    std::vector<double> excess(static_cast<std::size_t>(n_act));  // log pi - log p*
    for (int a = 0; a < n_act; ++a) {
      excess[std::size_t(a)] = log_pi[std::size_t(a)] - std::log(target.probs[std::size_t(a)]);
      kl_s += pi[std::size_t(a)] * excess[std::size_t(a)];
    }
    kl_total += task.context_probs[std::size_t(s)] * kl_s;

    // d KL_s / d logit_b = pi_b ((log pi_b - log p*_b) - KL_s); descend.
    std::vector<double> grad(static_cast<std::size_t>(n_act));
    for (int b = 0; b < n_act; ++b) {
      grad[std::size_t(b)] =
          task.context_probs[std::size_t(s)] * pi[std::size_t(b)] * (excess[std::size_t(b)] - kl_s);
    }
    policy.nudge_logits(s, grad, -lr);
  }
  return kl_total;
}

std::vector<double> temperature_schedule(int steps, double t0, double decay, double floor) {
  if (steps <= 0) throw std::invalid_argument("temperature_schedule: steps must be positive");
  if (!(t0 > 0.0) || !(decay > 0.0) || decay > 1.0 || !(floor > 0.0)) {
    throw std::invalid_argument("temperature_schedule: bad parameters");
  }
  std::vector<double> out(static_cast<std::size_t>(steps));
  double t = t0;
  for (int k = 0; k < steps; ++k) {
    out[std::size_t(k)] = std::max(floor, t);
    t *= decay;
  }
  return out;
}

std::vector<AnnealPoint> anneal_train(BoltzmannTask task, SoftPolicy& policy,
                                      const std::vector<double>& schedule,
                                      double lr) {
  if (schedule.empty()) throw std::invalid_argument("anneal_train: empty schedule");
  for (std::size_t k = 0; k < schedule.size(); ++k) {
    if (!(schedule[k] > 0.0)) throw std::invalid_argument("anneal_train: temperatures must be > 0");
    if (k > 0 && schedule[k] > schedule[k - 1] + 1e-12) {
      throw std::invalid_argument("anneal_train: schedule must be non-increasing");
    }
  }
  std::vector<AnnealPoint> history;
  history.reserve(schedule.size());
  for (std::size_t k = 0; k < schedule.size(); ++k) {
    task.temperature = schedule[k];
    kl_descent_step(task, policy, lr);
    FreeEnergyReport rep = free_energy_decomposition(task, policy);
    AnnealPoint pt;
    pt.step = int(k);
    pt.temperature = schedule[k];
    pt.j_r = rep.j_r;
    pt.entropy = rep.entropy;
    pt.kl = rep.kl;
    history.push_back(pt);
  }
  return history;
}

}  // namespace recall::boltzmann
