#ifndef RECALL_FDCHECK_HPP
#define RECALL_FDCHECK_HPP

// Gradient-integrity and rollout helpers shared by the verification CLI,
// the unit tests, and the acceptance suite.

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <random>
#include <vector>

#include "recall/agent.hpp"
#include "recall/backtrack.hpp"
#include "recall/env.hpp"
#include "recall/nn.hpp"
#include "recall/util.hpp"

namespace recall::fdcheck {

inline double rel_err(double fd, double analytic) {
  double denom = std::max({std::abs(fd), std::abs(analytic), 1e-8});
  return std::abs(fd - analytic) / denom;
}

// allclose-style predicate: near-zero gradients sit at the finite-difference
// cancellation floor (the loss is O(1), so f(x±h) differences below ~1e-12
// carry no digits), hence the absolute floor next to the relative tolerance.
inline bool grad_mismatch(double fd, double analytic, double rtol) {
  return std::abs(fd - analytic) >= 1e-7 && rel_err(fd, analytic) >= rtol;
}

// Central difference with a smoothness guard: estimates at h and 2h must
// agree, otherwise the parameter straddles a ReLU kink and the finite
// difference itself is meaningless (reported as NaN, to be skipped).
template <typename F, typename S>
double guarded_central_diff(F&& f, S&& set, double orig, double rtol) {
  const double h = 1e-6;
  auto fd_at = [&](double step) {
    set(orig + step);
    double up = f();
    set(orig - step);
    double down = f();
    set(orig);
    return (up - down) / (2.0 * step);
  };
  double fd1 = fd_at(h);
  double fd2 = fd_at(2.0 * h);
  if (rel_err(fd1, fd2) >= rtol) return std::numeric_limits<double>::quiet_NaN();
  return fd1;
}

// d(v . net(x)) / d theta for every parameter, against central differences.
inline int net_grad_failures(nn::Mlp& net, const std::vector<double>& x,
                             const std::vector<double>& v, double rtol) {
  auto eval = [&]() {
    std::vector<double> y = net.forward(std::span<const double>(x));
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += v[i] * y[i];
    return s;
  };
  net.zero_grad();
  net.forward(std::span<const double>(x));
  net.backward(v);
  int failures = 0;
  for (std::size_t i = 0; i < net.param_count(); ++i) {
    double fd = guarded_central_diff(
        eval, [&](double p) { net.set_param(i, p); }, net.param(i), rtol);
    if (std::isnan(fd)) continue;
    if (grad_mismatch(fd, net.grad(i), rtol)) ++failures;
  }
  return failures;
}

inline int nn_gradient_failures(int instances, double rtol) {
  int failures = 0;
  Rng rng(901);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  for (int k = 0; k < instances; ++k) {
    nn::Activation act = k % 2 == 0 ? nn::Activation::kTanh : nn::Activation::kRelu;
    int in = 2 + k % 4, out = 1 + k % 3;
    nn::Mlp net = nn::Mlp::make(in, {7, 5}, out, act, 1000 + std::uint64_t(k));
    std::vector<double> x(static_cast<std::size_t>(in)), v(static_cast<std::size_t>(out));
    for (double& e : x) e = unif(rng);
    for (double& e : v) e = unif(rng);
    failures += net_grad_failures(net, x, v, rtol);
  }
  return failures;
}

// A full episode under the current policy (used to build realistic batches).
inline Trajectory rollout(Env& env, agent::PolicyCritic& pc, Rng& rng,
                          std::uint64_t env_seed) {
  Trajectory traj;
  State s = env.reset(env_seed);
  while (true) {
    auto [a, lp] = pc.act(s, rng);
    (void)lp;
    Transition t = env.step(s, a);
    s = t.s_next;
    bool done = t.done;
    traj.steps.push_back(std::move(t));
    if (done) return traj;
  }
}

// Parameter access across policy net + value net + log-std vector.
struct AgentParams {
  agent::PolicyCritic* pc;

  std::size_t count() const {
    return pc->policy_net().param_count() + pc->value_net().param_count() +
           pc->log_std().size();
  }
  double get(std::size_t i) const {
    std::size_t np = pc->policy_net().param_count();
    std::size_t nv = pc->value_net().param_count();
    if (i < np) return pc->policy_net().param(i);
    if (i < np + nv) return pc->value_net().param(i - np);
    return pc->log_std()[i - np - nv];
  }
  void set(std::size_t i, double v) const {
    std::size_t np = pc->policy_net().param_count();
    std::size_t nv = pc->value_net().param_count();
    if (i < np) {
      pc->policy_net().set_param(i, v);
    } else if (i < np + nv) {
      pc->value_net().set_param(i - np, v);
    } else {
      pc->log_std()[i - np - nv] = v;
    }
  }
};

// Central-difference check of an update rule: `applied` holds the gradient
// recovered from the parameter step, `f` the frozen-target surrogate whose
// gradient it should be.
template <typename F>
int surrogate_grad_failures(agent::PolicyCritic& pc, const std::vector<double>& applied,
                            F&& f, double rtol) {
  AgentParams params{&pc};
  int failures = 0;
  const double h = 1e-6;
  for (std::size_t i = 0; i < params.count(); ++i) {
    double orig = params.get(i);
    params.set(i, orig + h);
    double up = f();
    params.set(i, orig - h);
    double down = f();
    params.set(i, orig);
    if (grad_mismatch((up - down) / (2.0 * h), applied[i], rtol)) ++failures;
  }
  return failures;
}

inline std::vector<double> applied_gradient(const agent::PolicyCritic& before,
                                            const agent::PolicyCritic& after,
                                            double lr) {
  AgentParams pb{const_cast<agent::PolicyCritic*>(&before)};
  AgentParams pa{const_cast<agent::PolicyCritic*>(&after)};
  std::vector<double> g(pb.count());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = (pb.get(i) - pa.get(i)) / lr;
  return g;
}

// Checks the three agent update rules (actor-critic, imitation, prioritized
// replay) against finite differences of their frozen-target surrogates, on
// alternating discrete/continuous environments.
inline int agent_gradient_failures(int instances, double rtol) {
  int failures = 0;
  for (int inst = 0; inst < instances; ++inst) {
    std::unique_ptr<Env> env;
    if (inst % 2 == 0) {
      env = std::make_unique<FourRoomEnv>(7, 0.0, 10);
    } else {
      PointMassEnv::Params p;
      p.max_steps = 8;
      env = std::make_unique<PointMassEnv>(p);
    }
    agent::AcConfig cfg;
    cfg.hidden = {6, 5};
    cfg.grad_clip = 1e9;  // keep the applied step an unclipped gradient
    cfg.alpha = 1e-3;
    cfg.gamma = 0.95;
    cfg.lambda = 0.9;
    cfg.entropy_coef = 0.01;
    agent::PolicyCritic pc(*env, cfg, 50 + std::uint64_t(inst));
    Rng rng(derive_seed(77, "agent_fd", std::uint64_t(inst)));

    std::vector<Trajectory> batch;
    batch.push_back(rollout(*env, pc, rng, 11 * std::uint64_t(inst) + 1));
    batch.push_back(rollout(*env, pc, rng, 11 * std::uint64_t(inst) + 2));
    std::size_t n = batch[0].size() + batch[1].size();

    // ---- actor-critic update ----
    std::vector<std::vector<double>> advs;
    std::vector<std::vector<double>> targets;
    for (Trajectory& traj : batch) {
      std::vector<double> adv = pc.gae_advantages(traj);
      std::vector<double> tg(adv.size());
      for (std::size_t t = 0; t < adv.size(); ++t) tg[t] = adv[t] + pc.value(traj.steps[t].s);
      advs.push_back(std::move(adv));
      targets.push_back(std::move(tg));
    }
    auto ac_surrogate = [&]() {
      double total = 0.0;
      for (std::size_t b = 0; b < batch.size(); ++b) {
        for (std::size_t t = 0; t < batch[b].size(); ++t) {
          const Transition& tr = batch[b].steps[t];
          double lp = pc.log_prob(tr.s, tr.a);
          double ent = pc.discrete() ? pc.policy_head(tr.s).entropy()
                                     : pc.policy_gaussian(tr.s).entropy();
          double err = pc.value(tr.s) - targets[b][t];
          total += -(advs[b][t] * lp + cfg.entropy_coef * ent) +
                   0.5 * cfg.value_coef * err * err;
        }
      }
      return total / double(n);
    };
    {
      agent::PolicyCritic stepped = pc;
      stepped.ac_update(batch);
      failures += surrogate_grad_failures(pc, applied_gradient(pc, stepped, cfg.alpha),
                                          ac_surrogate, rtol);
    }

    // ---- imitation update ----
    std::vector<std::pair<State, Action>> pairs;
    for (const Transition& tr : batch[0].steps) pairs.emplace_back(tr.s, tr.a);
    auto imitation_surrogate = [&]() {
      double total = 0.0;
      for (const auto& [s, a] : pairs) total += pc.log_prob(s, a);
      return -total / double(pairs.size());
    };
    {
      agent::PolicyCritic stepped = pc;
      stepped.imitation_update(pairs, cfg.alpha);
      failures += surrogate_grad_failures(pc, applied_gradient(pc, stepped, cfg.alpha),
                                          imitation_surrogate, rtol);
    }

    // ---- prioritized replay update ----
    std::vector<const Transition*> ptrs;
    std::vector<double> weights;
    std::uniform_real_distribution<double> wdist(0.5, 1.0);
    for (const Transition& tr : batch[1].steps) {
      ptrs.push_back(&tr);
      weights.push_back(wdist(rng));
    }
    std::vector<double> frozen_delta(ptrs.size());
    std::vector<double> frozen_boot(ptrs.size());
    for (std::size_t i = 0; i < ptrs.size(); ++i) {
      const Transition& tr = *ptrs[i];
      double vnext = tr.done ? 0.0 : pc.value(tr.s_next);
      frozen_boot[i] = tr.r + cfg.gamma * vnext;
      frozen_delta[i] = frozen_boot[i] - pc.value(tr.s);
    }
    auto per_surrogate = [&]() {
      double total = 0.0;
      for (std::size_t i = 0; i < ptrs.size(); ++i) {
        const Transition& tr = *ptrs[i];
        double err = pc.value(tr.s) - frozen_boot[i];
        total += -weights[i] * frozen_delta[i] * pc.log_prob(tr.s, tr.a) +
                 0.5 * cfg.value_coef * weights[i] * err * err;
      }
      return total / double(ptrs.size());
    };
    {
      agent::PolicyCritic stepped = pc;
      stepped.per_update(ptrs, weights, nullptr);
      failures += surrogate_grad_failures(pc, applied_gradient(pc, stepped, cfg.alpha),
                                          per_surrogate, rtol);
    }
  }
  return failures;
}

// Backtracking-model training gradient against finite differences of the
// mean negative log-likelihood, using the deterministic full-batch path.
inline int backtrack_gradient_failures(int instances, double rtol) {
  int failures = 0;
  for (int inst = 0; inst < instances; ++inst) {
    std::unique_ptr<Env> env;
    if (inst % 2 == 0) {
      env = std::make_unique<FourRoomEnv>(7, 0.0, 12);
    } else {
      PointMassEnv::Params p;
      p.max_steps = 10;
      env = std::make_unique<PointMassEnv>(p);
    }
    Rng rng(derive_seed(99, "bt_fd", std::uint64_t(inst)));

    // A handful of random-walk transitions as training data.
    std::vector<Transition> data;
    State s = env->reset(std::uint64_t(inst) + 5);
    std::uniform_real_distribution<double> adist(-0.1, 0.1);
    for (int i = 0; i < 5; ++i) {
      Action a = env->discrete_actions()
                     ? Action::discrete(int(rng() % std::uint64_t(env->num_actions())))
                     : Action::continuous({adist(rng), adist(rng)});
      Transition t = env->step(s, a);
      s = t.s_next;
      bool done = t.done;
      data.push_back(std::move(t));
      if (done) s = env->reset(std::uint64_t(inst) + 50 + std::uint64_t(i));
    }

    backtrack::BacktrackConfig cfg;
    cfg.hidden = {6, 5};
    cfg.batch_size = int(data.size());  // full batch: deterministic picks
    cfg.grad_clip = 1e9;
    cfg.beta = 1e-3;
    backtrack::BacktrackModel model(*env, cfg, 800 + std::uint64_t(inst));
    model.fit_normalizer(data);

    Trajectory all;
    all.steps = data;
    auto nll = [&]() { return -model.backtrack_loss(all) / double(data.size()); };

    backtrack::BacktrackModel stepped = model;
    Rng train_rng(1);
    stepped.train(data, 1, train_rng);

    auto check_net = [&](nn::Mlp& net, nn::Mlp& net_after) {
      for (std::size_t i = 0; i < net.param_count(); ++i) {
        double applied = (net.param(i) - net_after.param(i)) / cfg.beta;
        double fd = guarded_central_diff(
            nll, [&](double p) { net.set_param(i, p); }, net.param(i), rtol);
        if (std::isnan(fd)) continue;
        if (grad_mismatch(fd, applied, rtol)) ++failures;
      }
    };
    check_net(model.action_net(), stepped.action_net());
    check_net(model.state_net(), stepped.state_net());
  }
  return failures;
}

}  // namespace recall::fdcheck

#endif
