#include "recall/buffer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

#include <json.hpp>

namespace recall::buffer {

ReplayBuffer::ReplayBuffer(std::size_t capacity, int k_traj, double k_pct)
    : capacity_(capacity), k_traj_(k_traj), k_pct_(k_pct) {
  if (capacity == 0 || k_traj <= 0 || k_pct <= 0.0 || k_pct > 100.0) {
    throw std::invalid_argument("ReplayBuffer: bad capacity/k_traj/k_pct");
  }
}

void ReplayBuffer::add_trajectory(Trajectory traj) {
  if (traj.empty()) throw std::invalid_argument("add_trajectory: empty trajectory");
  traj.ret = traj.total_reward();
  traj.id = next_id_++;
  transition_count_ += traj.size();
  trajectories_.push_back(std::move(traj));
  while (transition_count_ > capacity_ && trajectories_.size() > 1) {
    transition_count_ -= trajectories_.front().size();
    trajectories_.pop_front();
  }
}

std::vector<double> ReplayBuffer::returns() const {
  std::vector<double> out;
  out.reserve(trajectories_.size());
  for (const Trajectory& t : trajectories_) out.push_back(t.ret);
  return out;
}

std::vector<const Trajectory*> ReplayBuffer::top_trajectories(int k) const {
  std::vector<const Trajectory*> out;
  out.reserve(trajectories_.size());
  for (const Trajectory& t : trajectories_) out.push_back(&t);
  std::sort(out.begin(), out.end(), [](const Trajectory* a, const Trajectory* b) {
    if (a->ret != b->ret) return a->ret > b->ret;
    return a->id > b->id;  // newer first on ties
  });
  if (int(out.size()) > k) out.resize(k);
  return out;
}

std::vector<Transition> ReplayBuffer::filtered_transitions(const ValueFn& value_fn,
                                                           double min_return) const {
  std::vector<Transition> data;
  for (const Trajectory* traj : top_trajectories(k_traj_)) {
    if (traj->ret < min_return) continue;
    data.insert(data.end(), traj->steps.begin(), traj->steps.end());
  }
  if (!value_fn || data.empty()) return data;

  std::vector<double> scores(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) scores[i] = value_fn(data[i].s_next);
  std::vector<double> sorted = scores;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  std::size_t keep = std::size_t(std::ceil(k_pct_ / 100.0 * double(data.size())));
  keep = std::min(std::max<std::size_t>(keep, 1), data.size());
  double cutoff = sorted[keep - 1];

  std::vector<Transition> out;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (scores[i] >= cutoff) out.push_back(data[i]);
  }
  return out;
}

std::vector<State> ReplayBuffer::select_high_value_states(
    const ValueFn& value_fn, int n, double seed_temperature, Rng& rng,
    bool* clipped) const {
  if (trajectories_.empty()) throw std::logic_error("select_high_value_states: empty buffer");
  if (n <= 0) throw std::invalid_argument("select_high_value_states: n must be positive");
  if (seed_temperature < 0.0) {
    throw std::invalid_argument("select_high_value_states: negative temperature");
  }

  // Distinct states with scores; std::map keys keep iteration deterministic.
  std::map<State, double> score;
  for (const Trajectory& traj : trajectories_) {
    for (const Transition& t : traj.steps) {
      if (value_fn) {
        score.try_emplace(t.s, value_fn(t.s));
        score.try_emplace(t.s_next, value_fn(t.s_next));
      } else {
        // Best immediate reward seen on entry; origin states enter at 0.
        score.try_emplace(t.s, 0.0);
        auto [it, fresh] = score.try_emplace(t.s_next, t.r);
        if (!fresh) it->second = std::max(it->second, t.r);
      }
    }
  }

  std::vector<std::pair<State, double>> ranked(score.begin(), score.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  if (clipped) *clipped = false;
  if (std::size_t(n) >= ranked.size()) {
    if (std::size_t(n) > ranked.size() && clipped) *clipped = true;
    std::vector<State> all;
    for (auto& [s, v] : ranked) all.push_back(s);
    return all;
  }

  if (seed_temperature == 0.0) {
    std::vector<State> out;
    for (int i = 0; i < n; ++i) out.push_back(ranked[i].first);
    return out;
  }

  // Boltzmann sampling without replacement over the top k_pct% states.
  std::size_t pool = std::size_t(std::ceil(k_pct_ / 100.0 * double(ranked.size())));
  pool = std::min(std::max<std::size_t>(pool, std::size_t(n)), ranked.size());
  double vmax = ranked.front().second;
  std::vector<double> w(pool);
  for (std::size_t i = 0; i < pool; ++i) {
    w[i] = std::exp((ranked[i].second - vmax) / seed_temperature);
  }
  std::vector<State> out;
  for (int k = 0; k < n; ++k) {
    int idx = sample_weighted(w, rng);
    out.push_back(ranked[idx].first);
    w[idx] = 0.0;
  }
  return out;
}

std::vector<State> produce_high_value_states(const ReplayBuffer& buf,
                                             const ValueFn& value_fn, int n,
                                             double seed_temperature, Rng& rng,
                                             bool gen_state, bool* clipped) {
  if (gen_state) {
    throw std::logic_error("produce_high_value_states: generative branch not implemented");
  }
  return buf.select_high_value_states(value_fn, n, seed_temperature, rng, clipped);
}

void ReplayBuffer::dump_jsonl(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("dump_jsonl: cannot open " + path);
  for (const Trajectory& traj : trajectories_) {
    for (const Transition& t : traj.steps) {
      nlohmann::json j;
      j["traj"] = traj.id;
      j["ret"] = traj.ret;
      j["s"] = t.s;
      if (t.a.index >= 0) {
        j["a"] = t.a.index;
      } else {
        j["a"] = t.a.vec;
      }
      j["r"] = t.r;
      j["s_next"] = t.s_next;
      j["done"] = t.done;
      out << j.dump() << '\n';
    }
  }
}

// ---------------------------------------------------------------------------

PerBuffer::PerBuffer(std::size_t capacity, double alpha, double beta, double eps)
    : capacity_(capacity), alpha_(alpha), beta_(beta), eps_(eps) {
  if (capacity == 0) throw std::invalid_argument("PerBuffer: zero capacity");
  items_.reserve(std::min<std::size_t>(capacity, 4096));
}

double PerBuffer::to_priority(double delta) const {
  double mag = std::abs(delta);
  if (!std::isfinite(mag)) return kMaxPriority;
  return std::min(std::pow(mag + eps_, alpha_), kMaxPriority);
}

std::size_t PerBuffer::slot_of(std::uint64_t id) const { return id % capacity_; }

std::uint64_t PerBuffer::add(Transition t, double delta) {
  std::uint64_t id = next_id_++;
  Item item{id, std::move(t), to_priority(delta)};
  if (items_.size() < capacity_) {
    items_.push_back(std::move(item));
  } else {
    items_[slot_of(id)] = std::move(item);
  }
  return id;
}

PerBuffer::Batch PerBuffer::sample(int batch, Rng& rng) {
  if (batch <= 0 || std::size_t(batch) > items_.size()) {
    throw std::invalid_argument("PerBuffer::sample: bad batch size");
  }
  std::vector<double> prios(items_.size());
  double total = 0.0, pmin = items_[0].priority;
  for (std::size_t i = 0; i < items_.size(); ++i) {
    prios[i] = items_[i].priority;
    total += prios[i];
    pmin = std::min(pmin, prios[i]);
  }
  const double n = double(items_.size());
  // Max weight belongs to the lowest-priority item.
  double wmax = std::pow(n * (pmin / total), -beta_);

  Batch out;
  for (int k = 0; k < batch; ++k) {
    int idx = sample_weighted(prios, rng);
    const Item& item = items_[idx];
    out.ids.push_back(item.id);
    out.transitions.push_back(&item.t);
    double w = std::pow(n * (item.priority / total), -beta_);
    out.weights.push_back(w / wmax);
  }
  return out;
}

void PerBuffer::update_priorities(const std::vector<std::uint64_t>& ids,
                                  const std::vector<double>& deltas) {
  if (ids.size() != deltas.size()) {
    throw std::invalid_argument("update_priorities: size mismatch");
  }
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::size_t slot = slot_of(ids[i]);
    if (slot >= items_.size() || items_[slot].id != ids[i]) {
      throw std::out_of_range("update_priorities: unknown id");
    }
    items_[slot].priority = to_priority(deltas[i]);
  }
}

std::vector<double> PerBuffer::probabilities() const {
  std::vector<double> p(items_.size());
  double total = 0.0;
  for (std::size_t i = 0; i < items_.size(); ++i) {
    p[i] = items_[i].priority;
    total += p[i];
  }
  for (double& e : p) e /= total;
  return p;
}

double PerBuffer::priority_of(std::uint64_t id) const {
  std::size_t slot = slot_of(id);
  if (slot >= items_.size() || items_[slot].id != id) {
    throw std::out_of_range("priority_of: unknown id");
  }
  return items_[slot].priority;
}

}  // namespace recall::buffer
