#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dapg {

using FlatVector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline bool all_finite(const Eigen::Ref<const Eigen::VectorXd>& v) {
  return v.allFinite();
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

// FNV-1a over raw bytes; used for config digests and frozen-parameter checks.
inline std::uint64_t fnv1a(const void* data, std::size_t n,
                           std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a(const std::string& s,
                           std::uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a(s.data(), s.size(), h);
}

// Raw sensor payload before encoding: either a state vector or a flattened
// grayscale pixel grid (row-major, grid_side > 0). episode/step identify the
// frame for feature-table lookups.
struct RawObservation {
  Eigen::VectorXd data;
  int grid_side = 0;
  int episode_id = 0;
  int step_index = 0;
};

// One environment step as seen by the learner: the observation is already in
// the assembled space the policy consumes.
struct Transition {
  Eigen::VectorXd observation;
  Eigen::VectorXd action;
  double reward = 0.0;
  double log_prob = 0.0;  // log pi(a|s) at collection time
  bool done = false;
};

struct Trajectory {
  std::vector<Transition> transitions;
  Eigen::VectorXd terminal_observation;

  std::size_t length() const { return transitions.size(); }

  double total_reward() const {
    double r = 0.0;
    for (const auto& t : transitions) r += t.reward;
    return r;
  }

  void validate() const {
    require(!transitions.empty(), "Trajectory: must contain at least one transition");
    const auto obs_dim = transitions.front().observation.size();
    const auto act_dim = transitions.front().action.size();
    for (std::size_t i = 0; i < transitions.size(); ++i) {
      const auto& t = transitions[i];
      require(t.observation.size() == obs_dim, "Trajectory: observation dim varies");
      require(t.action.size() == act_dim, "Trajectory: action dim varies");
      require(std::isfinite(t.log_prob), "Trajectory: non-finite log_prob");
      require(!t.done || i + 1 == transitions.size(),
              "Trajectory: done before the final transition");
    }
    require(terminal_observation.size() == obs_dim,
            "Trajectory: terminal observation dim mismatch");
  }
};

struct DemoSet {
  std::vector<Trajectory> trajectories;
  std::string source_tag;

  std::size_t pair_count() const {
    std::size_t n = 0;
    for (const auto& t : trajectories) n += t.length();
    return n;
  }

  void validate() const {
    require(!trajectories.empty(), "DemoSet: empty");
    const auto obs_dim = trajectories.front().transitions.front().observation.size();
    const auto act_dim = trajectories.front().transitions.front().action.size();
    for (const auto& t : trajectories) {
      t.validate();
      require(t.transitions.front().observation.size() == obs_dim &&
                  t.transitions.front().action.size() == act_dim,
              "DemoSet: trajectories dimensionally inconsistent");
    }
  }
};

// output[t] = sum_{t' >= t} gamma^(t'-t) r_t'; computed by the backward
// recursion output[t] = r_t + gamma * output[t+1], which tests rely on holding
// exactly.
inline Eigen::VectorXd discounted_return(const Trajectory& traj, double gamma) {
  require(!traj.transitions.empty(), "discounted_return: empty trajectory");
  require(gamma >= 0.0 && gamma < 1.0, "discounted_return: gamma outside [0,1)");
  const auto n = static_cast<Eigen::Index>(traj.transitions.size());
  Eigen::VectorXd out(n);
  double acc = 0.0;
  for (Eigen::Index t = n - 1; t >= 0; --t) {
    acc = traj.transitions[static_cast<std::size_t>(t)].reward + gamma * acc;
    out[t] = acc;
  }
  return out;
}

inline FlatVector flat_axpy(double alpha, const FlatVector& x, const FlatVector& y) {
  require(x.size() == y.size(), "flat_axpy: dimension mismatch");
  return alpha * x + y;
}

// Stacks (observation, action) pairs of many trajectories into row-per-sample
// matrices, trajectory order then time order.
inline std::pair<Matrix, Matrix> stack_pairs(const std::vector<Trajectory>& trajs) {
  std::size_t n = 0;
  for (const auto& t : trajs) n += t.length();
  require(n > 0, "stack_pairs: no transitions");
  const auto obs_dim = trajs.front().transitions.front().observation.size();
  const auto act_dim = trajs.front().transitions.front().action.size();
  Matrix obs(n, obs_dim), act(n, act_dim);
  Eigen::Index row = 0;
  for (const auto& traj : trajs) {
    for (const auto& t : traj.transitions) {
      obs.row(row) = t.observation;
      act.row(row) = t.action;
      ++row;
    }
  }
  return {std::move(obs), std::move(act)};
}

}  // namespace dapg
