#ifndef RECALL_BUFFER_HPP
#define RECALL_BUFFER_HPP

#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "recall/env.hpp"
#include "recall/util.hpp"

namespace recall::buffer {

using ValueFn = std::function<double(const State&)>;

// Trajectory store with return-based filtering: the top k_traj trajectories
// by return feed backward-model training; the top k_pct percent of their
// states by value act as training/seed material.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 100000, int k_traj = 10,
                        double k_pct = 10.0);

  // Caches the undiscounted return; evicts oldest trajectories beyond the
  // transition capacity.
  void add_trajectory(Trajectory traj);

  // Sorted by return descending; equal returns rank the newer one first.
  std::vector<const Trajectory*> top_trajectories(int k) const;

  // Transitions of the top-k_traj trajectories with return >= min_return;
  // with a critic, only those in the top k_pct percent by V(s_next) (ties
  // at the cutoff kept).
  std::vector<Transition> filtered_transitions(
      const ValueFn& value_fn,
      double min_return = -std::numeric_limits<double>::infinity()) const;

  // Cached returns of all stored trajectories, oldest first.
  std::vector<double> returns() const;

  // Highest-scoring distinct states: critic score V(s) when given, else the
  // best immediate reward observed on entry to s. seed_temperature 0 picks
  // the top n; positive T samples n without replacement with weights
  // exp(score/T) over the top-k_pct% states. Asking for more states than
  // exist returns them all and sets *clipped.
  std::vector<State> select_high_value_states(const ValueFn& value_fn, int n,
                                              double seed_temperature, Rng& rng,
                                              bool* clipped = nullptr) const;

  std::size_t size() const { return transition_count_; }
  std::size_t n_trajectories() const { return trajectories_.size(); }
  bool empty() const { return trajectories_.empty(); }
  int k_traj() const { return k_traj_; }
  double k_pct() const { return k_pct_; }

  void dump_jsonl(const std::string& path) const;  // debugging format

 private:
  std::size_t capacity_;
  int k_traj_;
  double k_pct_;
  std::deque<Trajectory> trajectories_;
  std::size_t transition_count_ = 0;
  std::uint64_t next_id_ = 0;
};

// Seed-state production with the two dispatch branches: gen_state=false
// selects stored high-value states; gen_state=true (a generative goal model)
// is out of scope and errors.
std::vector<State> produce_high_value_states(const ReplayBuffer& buf,
                                             const ValueFn& value_fn, int n,
                                             double seed_temperature, Rng& rng,
                                             bool gen_state = false,
                                             bool* clipped = nullptr);

// Flat prioritized replay over single transitions: p_i = (|delta|+eps)^alpha,
// sampled by linear scan, importance weights (N P(i))^-beta / max w.
class PerBuffer {
 public:
  explicit PerBuffer(std::size_t capacity = 100000, double alpha = 0.8,
                     double beta = 0.1, double eps = 1e-6);

  std::uint64_t add(Transition t, double delta);

  struct Batch {
    std::vector<std::uint64_t> ids;
    std::vector<const Transition*> transitions;
    std::vector<double> weights;
  };
  Batch sample(int batch, Rng& rng);

  void update_priorities(const std::vector<std::uint64_t>& ids,
                         const std::vector<double>& deltas);

  std::size_t size() const { return items_.size(); }
  std::vector<double> probabilities() const;
  double priority_of(std::uint64_t id) const;

  static constexpr double kMaxPriority = 1e3;

 private:
  struct Item {
    std::uint64_t id;
    Transition t;
    double priority;
  };
  std::size_t capacity_;
  double alpha_, beta_, eps_;
  std::vector<Item> items_;   // ring, slot = id % capacity
  std::uint64_t next_id_ = 0;

  double to_priority(double delta) const;
  std::size_t slot_of(std::uint64_t id) const;
};

}  // namespace recall::buffer

#endif
