#pragma once

#include <Eigen/Core>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "dapg/baseline.hpp"
#include "dapg/core.hpp"

namespace dapg {

struct GaeConfig {
  double gamma = 0.995;
  double lambda = 0.97;
};

// GAE(gamma, lambda) over the trajectory. The terminal value is 0 when the
// episode ended by task completion and V(terminal_observation) when it was
// truncated by the horizon. Implemented through the backward recursion
// A_t = delta_t + gamma*lambda*A_{t+1}, which holds exactly.
inline Eigen::VectorXd gae(const Trajectory& traj, const ValueFunction& vf,
                           const GaeConfig& cfg) {
  require(!traj.transitions.empty(), "gae: empty trajectory");
  const auto n = static_cast<Eigen::Index>(traj.transitions.size());
  Matrix obs(n, traj.transitions.front().observation.size());
  for (Eigen::Index t = 0; t < n; ++t)
    obs.row(t) = traj.transitions[static_cast<std::size_t>(t)].observation;
  const Eigen::VectorXd values = vf_predict_batch(vf, obs);
  const double terminal_value =
      traj.transitions.back().done ? 0.0 : vf_predict(vf, traj.terminal_observation);

  Eigen::VectorXd adv(n);
  double acc = 0.0;
  for (Eigen::Index t = n - 1; t >= 0; --t) {
    const double next_v = (t == n - 1) ? terminal_value : values[t + 1];
    const double delta =
        traj.transitions[static_cast<std::size_t>(t)].reward + cfg.gamma * next_v - values[t];
    acc = delta + cfg.gamma * cfg.lambda * acc;
    adv[t] = acc;
  }
  return adv;
}

// per-trajectory GAE, concatenated in trajectory order
inline Eigen::VectorXd gae_batch(const std::vector<Trajectory>& trajs,
                                 const ValueFunction& vf, const GaeConfig& cfg) {
  Eigen::Index total = 0;
  for (const auto& t : trajs) total += static_cast<Eigen::Index>(t.length());
  Eigen::VectorXd out(total);
  Eigen::Index at = 0;
  for (const auto& t : trajs) {
    out.segment(at, static_cast<Eigen::Index>(t.length())) = gae(t, vf, cfg);
    at += static_cast<Eigen::Index>(t.length());
  }
  return out;
}

// zero mean, unit population std; degenerate inputs (std < 1e-8) map to zeros
inline Eigen::VectorXd standardize(const Eigen::VectorXd& v) {
  require(v.size() >= 2, "standardize: need at least 2 values");
  const double mean = v.mean();
  const double std_dev =
      std::sqrt((v.array() - mean).square().sum() / static_cast<double>(v.size()));
  if (std_dev < 1e-8) return Eigen::VectorXd::Zero(v.size());
  return ((v.array() - mean) / std_dev).matrix();
}

}  // namespace dapg
