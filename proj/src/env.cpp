#include "recall/env.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <stdexcept>

namespace recall {

double Trajectory::total_reward() const {
  double s = 0.0;
  for (const auto& t : steps) s += t.r;
  return s;
}

std::vector<double> Features::to_dense() const {
  if (!sparse()) return dense;
  std::vector<double> out(dim, 0.0);
  for (int i : hot) out[i] += 1.0;
  return out;
}

// ---------------------------------------------------------------------------
// FourRoomEnv
// ---------------------------------------------------------------------------

FourRoomEnv::FourRoomEnv(int size, double slip_prob, int max_steps)
    : size_(size), slip_prob_(slip_prob) {
  if (size < 7 || size % 2 == 0) {
    throw std::invalid_argument("FourRoomEnv: size must be odd and >= 7");
  }
  if (slip_prob < 0.0 || slip_prob > 1.0) {
    throw std::invalid_argument("FourRoomEnv: slip_prob must be in [0, 1]");
  }
  max_steps_ = max_steps > 0 ? max_steps : 4 * size * size;
  build_walls();
  check_connectivity();
}

void FourRoomEnv::build_walls() {
  walls_.assign(size_ * size_, 0);
  for (int r = 0; r < size_; ++r) {
    for (int c = 0; c < size_; ++c) {
      if (r == 0 || c == 0 || r == size_ - 1 || c == size_ - 1) walls_[cell_index(r, c)] = 1;
    }
  }
  const int m = size_ / 2;
  for (int c = 1; c < size_ - 1; ++c) walls_[cell_index(m, c)] = 1;
  for (int r = 1; r < size_ - 1; ++r) walls_[cell_index(r, m)] = 1;
  // One doorway per wall segment, at the segment midpoint.
  const int lo = (1 + (m - 1)) / 2;
  const int hi = ((m + 1) + (size_ - 2)) / 2;
  walls_[cell_index(m, lo)] = 0;
  walls_[cell_index(m, hi)] = 0;
  walls_[cell_index(lo, m)] = 0;
  walls_[cell_index(hi, m)] = 0;
}

void FourRoomEnv::check_connectivity() const {
  const State g = goal_state();
  if (wall(1, 1) || wall(size_ - 2, size_ - 2)) {
    throw std::logic_error("FourRoomEnv: start or goal is a wall");
  }
  std::vector<std::uint8_t> seen(size_ * size_, 0);
  std::deque<int> queue{cell_index(g)};
  seen[cell_index(g)] = 1;
  while (!queue.empty()) {
    int cur = queue.front();
    queue.pop_front();
    int r = cur / size_, c = cur % size_;
    const int dr[4] = {-1, 1, 0, 0};
    const int dc[4] = {0, 0, -1, 1};
    for (int k = 0; k < 4; ++k) {
      int nr = r + dr[k], nc = c + dc[k];
      if (nr < 0 || nc < 0 || nr >= size_ || nc >= size_) continue;
      int ni = cell_index(nr, nc);
      if (!walls_[ni] && !seen[ni]) {
        seen[ni] = 1;
        queue.push_back(ni);
      }
    }
  }
  for (int r = 0; r < size_; ++r) {
    for (int c = 0; c < size_; ++c) {
      if (!wall(r, c) && !seen[cell_index(r, c)]) {
        throw std::logic_error("FourRoomEnv: open cell unreachable from goal");
      }
    }
  }
}

bool FourRoomEnv::wall(int row, int col) const {
  if (row < 0 || col < 0 || row >= size_ || col >= size_) return true;
  return walls_[cell_index(row, col)] != 0;
}

int FourRoomEnv::cell_index(const State& s) const {
  if (s.size() != 2) throw std::invalid_argument("FourRoomEnv: state must be (row, col)");
  int r = static_cast<int>(s[0]);
  int c = static_cast<int>(s[1]);
  if (r < 0 || c < 0 || r >= size_ || c >= size_) {
    throw std::invalid_argument("FourRoomEnv: state out of grid");
  }
  return cell_index(r, c);
}

State FourRoomEnv::reset(std::uint64_t rng_seed) {
  rng_.seed(rng_seed);
  steps_taken_ = 0;
  return start_state();
}

bool FourRoomEnv::is_goal(const State& s) const {
  return static_cast<int>(s[0]) == size_ - 2 && static_cast<int>(s[1]) == size_ - 2;
}

State FourRoomEnv::apply_move(const State& s, int action) const {
  int r = static_cast<int>(s[0]);
  int c = static_cast<int>(s[1]);
  int nr = r, nc = c;
  switch (action) {
    case kUp: nr = r - 1; break;
    case kDown: nr = r + 1; break;
    case kLeft: nc = c - 1; break;
    case kRight: nc = c + 1; break;
    default: throw std::invalid_argument("FourRoomEnv: invalid action index");
  }
  if (wall(nr, nc)) return s;
  return cell_state(nr, nc);
}

Transition FourRoomEnv::step(const State& s, const Action& a) {
  if (a.index < 0 || a.index >= 4) throw std::invalid_argument("FourRoomEnv: invalid action index");
  int action = a.index;
  if (slip_prob_ > 0.0) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    if (unif(rng_) < slip_prob_) {
      std::uniform_int_distribution<int> pick(0, 3);
      action = pick(rng_);
    }
  }
  State next = apply_move(s, action);
  ++steps_taken_;
  bool at_goal = is_goal(next);
  Transition t;
  t.s = s;
  t.a = a;
  t.r = at_goal ? 1.0 : 0.0;
  t.s_next = std::move(next);
  t.done = at_goal || steps_taken_ >= max_steps_;
  return t;
}

Features FourRoomEnv::featurize(const State& s) const {
  return Features::one_hot(cell_index(s), feature_dim());
}

std::vector<std::pair<State, int>> FourRoomEnv::predecessors(const State& target) const {
  std::vector<std::pair<State, int>> out;
  int tr = static_cast<int>(target[0]);
  int tc = static_cast<int>(target[1]);
  for (int dr = -1; dr <= 1; ++dr) {
    for (int dc = -1; dc <= 1; ++dc) {
      if (std::abs(dr) + std::abs(dc) > 1) continue;
      int r = tr + dr, c = tc + dc;
      if (wall(r, c)) continue;
      State cand = cell_state(r, c);
      for (int a = 0; a < 4; ++a) {
        State landed = apply_move(cand, a);
        if (static_cast<int>(landed[0]) == tr && static_cast<int>(landed[1]) == tc) {
          out.emplace_back(cand, a);
        }
      }
    }
  }
  return out;
}

std::vector<State> FourRoomEnv::predecessors_for_action(int action, const State& target) const {
  std::vector<State> out;
  for (const auto& [s, a] : predecessors(target)) {
    if (a == action) out.push_back(s);
  }
  return out;
}

std::vector<State> FourRoomEnv::backward_candidates(const State& s_next) const {
  int r = int(s_next[0]), c = int(s_next[1]);
  return {cell_state(r, c), cell_state(r - 1, c), cell_state(r + 1, c),
          cell_state(r, c - 1), cell_state(r, c + 1)};
}

std::vector<double> FourRoomEnv::true_backward_state_probs(int action, const State& s_next) const {
  std::vector<State> cand = backward_candidates(s_next);
  std::vector<double> p(cand.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < cand.size(); ++i) {
    int r = int(cand[i][0]), c = int(cand[i][1]);
    if (r < 0 || c < 0 || r >= size_ || c >= size_ || wall(r, c)) continue;
    if (apply_move(cand[i], action) == s_next) {
      p[i] = 1.0;
      total += 1.0;
    }
  }
  if (total == 0.0) {
    p[0] = 1.0;  // no predecessor under this action: stay put
    return p;
  }
  for (double& e : p) e /= total;
  return p;
}

bool FourRoomEnv::valid_state(const State& s) const {
  if (s.size() != 2) return false;
  int r = int(s[0]), c = int(s[1]);
  if (r < 0 || c < 0 || r >= size_ || c >= size_) return false;
  return open(r, c);
}

std::vector<State> FourRoomEnv::open_states() const {
  std::vector<State> out;
  for (int r = 0; r < size_; ++r) {
    for (int c = 0; c < size_; ++c) {
      if (open(r, c)) out.push_back(cell_state(r, c));
    }
  }
  return out;
}

std::string FourRoomEnv::ascii() const {
  std::string out;
  out.reserve((size_ + 1) * size_);
  for (int r = 0; r < size_; ++r) {
    for (int c = 0; c < size_; ++c) {
      char ch = wall(r, c) ? '#' : '.';
      if (r == 1 && c == 1) ch = 'S';
      if (r == size_ - 2 && c == size_ - 2) ch = 'G';
      out.push_back(ch);
    }
    out.push_back('\n');
  }
  return out;
}

// ---------------------------------------------------------------------------
// PointMassEnv
// ---------------------------------------------------------------------------

PointMassEnv::PointMassEnv(Params p) : params_(std::move(p)) {
  if (params_.box <= 0.0 || params_.max_step <= 0.0 || params_.eps_goal <= 0.0) {
    throw std::invalid_argument("PointMassEnv: box, max_step, eps_goal must be positive");
  }
  if (params_.noise_std < 0.0) throw std::invalid_argument("PointMassEnv: noise_std must be >= 0");
  if (params_.start.size() != 2 || params_.goal.size() != 2) {
    throw std::invalid_argument("PointMassEnv: start/goal must be 2-vectors");
  }
}

State PointMassEnv::reset(std::uint64_t rng_seed) {
  rng_.seed(rng_seed);
  steps_taken_ = 0;
  return params_.start;
}

bool PointMassEnv::at_goal(const State& s) const {
  double dx = s[0] - params_.goal[0];
  double dy = s[1] - params_.goal[1];
  return std::sqrt(dx * dx + dy * dy) <= params_.eps_goal;
}

Transition PointMassEnv::step(const State& s, const Action& a) {
  if (a.vec.size() != 2) throw std::invalid_argument("PointMassEnv: action must be a 2-vector");
  double ax = a.vec[0], ay = a.vec[1];
  double norm = std::sqrt(ax * ax + ay * ay);
  if (norm > params_.max_step && norm > 0.0) {
    double scale = params_.max_step / norm;
    ax *= scale;
    ay *= scale;
  }
  double nx = s[0] + ax;
  double ny = s[1] + ay;
  if (params_.noise_std > 0.0) {
    std::normal_distribution<double> noise(0.0, params_.noise_std);
    nx += noise(rng_);
    ny += noise(rng_);
  }
  nx = std::clamp(nx, -params_.box, params_.box);
  ny = std::clamp(ny, -params_.box, params_.box);
  ++steps_taken_;
  State next{nx, ny};
  bool goal = at_goal(next);
  Transition t;
  t.s = s;
  t.a = a;
  t.r = goal ? 1.0 : 0.0;
  t.s_next = std::move(next);
  t.done = goal || steps_taken_ >= params_.max_steps;
  return t;
}

int PointMassEnv::visit_bin(const State& s) const {
  auto bin = [&](double x) {
    double u = (x + params_.box) / (2.0 * params_.box);  // [0, 1]
    int b = static_cast<int>(u * kVisitBins);
    return std::clamp(b, 0, kVisitBins - 1);
  };
  return bin(s[0]) * kVisitBins + bin(s[1]);
}

// ---------------------------------------------------------------------------
// ChainMDP
// ---------------------------------------------------------------------------

ChainMDP::ChainMDP(int n_states, int n_actions,
                   std::vector<std::vector<std::vector<double>>> transition,
                   std::vector<std::vector<double>> reward, int horizon)
    : n_states_(n_states),
      n_actions_(n_actions),
      transition_(std::move(transition)),
      reward_(std::move(reward)),
      horizon_(horizon) {
  if (n_states_ < 1 || n_states_ > 8) throw std::invalid_argument("ChainMDP: n_states must be in [1, 8]");
  if (n_actions_ < 1) throw std::invalid_argument("ChainMDP: need at least one action");
  if (horizon_ < 1) throw std::invalid_argument("ChainMDP: horizon must be positive");
  if (transition_.size() != static_cast<std::size_t>(n_states_) ||
      reward_.size() != static_cast<std::size_t>(n_states_)) {
    throw std::invalid_argument("ChainMDP: table shape mismatch");
  }
  r_min_ = reward_[0][0];
  r_max_ = reward_[0][0];
  for (int s = 0; s < n_states_; ++s) {
    if (transition_[s].size() != static_cast<std::size_t>(n_actions_) ||
        reward_[s].size() != static_cast<std::size_t>(n_actions_)) {
      throw std::invalid_argument("ChainMDP: table shape mismatch");
    }
    for (int a = 0; a < n_actions_; ++a) {
      if (!std::isfinite(reward_[s][a])) throw std::invalid_argument("ChainMDP: reward not finite");
      r_min_ = std::min(r_min_, reward_[s][a]);
      r_max_ = std::max(r_max_, reward_[s][a]);
      if (transition_[s][a].size() != static_cast<std::size_t>(n_states_)) {
        throw std::invalid_argument("ChainMDP: table shape mismatch");
      }
      double row = 0.0;
      for (double p : transition_[s][a]) {
        if (p < 0.0) throw std::invalid_argument("ChainMDP: negative transition probability");
        row += p;
      }
      if (std::abs(row - 1.0) > 1e-12) {
        throw std::invalid_argument("ChainMDP: transition row does not sum to 1");
      }
    }
  }
}

int ChainMDP::state_index(const State& s) const {
  if (s.size() != 1) throw std::invalid_argument("ChainMDP: state must be 1-dimensional");
  int idx = static_cast<int>(s[0]);
  if (idx < 0 || idx >= n_states_) throw std::invalid_argument("ChainMDP: state out of range");
  return idx;
}

State ChainMDP::reset(std::uint64_t rng_seed) {
  rng_.seed(rng_seed);
  steps_taken_ = 0;
  return State{0.0};
}

Transition ChainMDP::step(const State& s, const Action& a) {
  int si = state_index(s);
  if (a.index < 0 || a.index >= n_actions_) throw std::invalid_argument("ChainMDP: invalid action index");
  int ns = sample_weighted(transition_[si][a.index], rng_);
  ++steps_taken_;
  Transition t;
  t.s = s;
  t.a = a;
  t.r = reward_[si][a.index];
  t.s_next = State{double(ns)};
  t.done = steps_taken_ >= horizon_;
  return t;
}

Features ChainMDP::featurize(const State& s) const {
  return Features::one_hot(state_index(s), n_states_);
}

std::vector<int> ChainMDP::predecessors_for_action(int a, int s_next) const {
  std::vector<int> out;
  for (int s = 0; s < n_states_; ++s) {
    if (transition_[s][a][s_next] > 0.0) out.push_back(s);
  }
  return out;
}

std::vector<State> ChainMDP::backward_candidates(const State&) const {
  std::vector<State> out;
  for (int s = 0; s < n_states_; ++s) out.push_back(State{double(s)});
  return out;
}

std::vector<double> ChainMDP::true_backward_state_probs(int action, const State& s_next) const {
  int target = state_index(s_next);
  std::vector<double> p(n_states_, 0.0);
  double total = 0.0;
  for (int s = 0; s < n_states_; ++s) {
    p[s] = transition_[s][action][target];
    total += p[s];
  }
  if (total == 0.0) {
    p[target] = 1.0;
    return p;
  }
  for (double& e : p) e /= total;
  return p;
}

std::vector<WeightedTrajectory> enumerate_trajectories(
    const ChainMDP& chain, const std::vector<std::vector<double>>& policy,
    double gamma, std::size_t max_count) {
  if (policy.size() != static_cast<std::size_t>(chain.n_states())) {
    throw std::invalid_argument("enumerate_trajectories: policy shape mismatch");
  }
  std::vector<WeightedTrajectory> out;
  ChainTrajectory cur;
  cur.states.push_back(0);

  // DFS over nonzero-probability branches; counts guard the blowup.
  auto recurse = [&](auto&& self, int depth, double prob, double ret) -> void {
    if (depth == chain.horizon()) {
      if (out.size() >= max_count) {
        throw std::runtime_error("enumerate_trajectories: trajectory count guard exceeded");
      }
      out.push_back(WeightedTrajectory{cur, prob, ret});
      return;
    }
    int s = cur.states.back();
    for (int a = 0; a < chain.num_actions(); ++a) {
      double pa = policy[s][a];
      if (pa <= 0.0) continue;
      double r = chain.reward(s, a);
      for (int ns = 0; ns < chain.n_states(); ++ns) {
        double pt = chain.transition_prob(s, a, ns);
        if (pt <= 0.0) continue;
        cur.actions.push_back(a);
        cur.states.push_back(ns);
        self(self, depth + 1, prob * pa * pt, ret + std::pow(gamma, depth) * r);
        cur.actions.pop_back();
        cur.states.pop_back();
      }
    }
  };
  recurse(recurse, 0, 1.0, 0.0);
  return out;
}

ChainMDP make_verification_chain() {
  // 4-state line, 2 actions (left/right), 0.9 intended move, 0.1 stay.
  // Reward 1 for acting in the rightmost state.
  const int n = 4, na = 2, horizon = 6;
  std::vector tr(n, std::vector(na, std::vector<double>(n, 0.0)));
  std::vector rew(n, std::vector<double>(na, 0.0));
  for (int s = 0; s < n; ++s) {
    int left = std::max(0, s - 1);
    int right = std::min(n - 1, s + 1);
    tr[s][0][left] += 0.9;
    tr[s][0][s] += 0.1;
    tr[s][1][right] += 0.9;
    tr[s][1][s] += 0.1;
    if (s == n - 1) {
      rew[s][0] = 1.0;
      rew[s][1] = 1.0;
    }
  }
  return ChainMDP(n, na, std::move(tr), std::move(rew), horizon);
}

ChainMDP make_bandit_chain() {
  std::vector tr(1, std::vector(2, std::vector<double>(1, 1.0)));
  std::vector rew(1, std::vector<double>{0.0, 1.0});
  return ChainMDP(1, 2, std::move(tr), std::move(rew), 1);
}

ChainMDP make_deterministic_line(int n_states, int horizon) {
  const int na = 2;
  std::vector tr(n_states, std::vector(na, std::vector<double>(n_states, 0.0)));
  std::vector rew(n_states, std::vector<double>(na, 0.0));
  for (int s = 0; s < n_states; ++s) {
    tr[s][0][std::max(0, s - 1)] = 1.0;
    tr[s][1][std::min(n_states - 1, s + 1)] = 1.0;
    if (s == n_states - 1) rew[s][1] = 1.0;
  }
  return ChainMDP(n_states, na, std::move(tr), std::move(rew), horizon);
}

}  // namespace recall
