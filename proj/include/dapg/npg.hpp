#pragma once

#include <Eigen/Core>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>

#include "dapg/core.hpp"
#include "dapg/policy.hpp"

namespace dapg {

struct NpgConfig {
  double step_size_delta = 0.05;  // normalized step size
  // Truncated CG keeps the solve inside the well-sampled Krylov subspace of
  // the rank-deficient sampled Fisher; long solves leak into the damping-floor
  // null space and destabilize training.
  int cg_iterations = 10;
  double cg_residual_tol = 1e-10;
  double fisher_damping = 1e-4;
};

// g = (1/N) sum_t grad_log_prob(obs_t, act_t) * adv_t
inline FlatVector policy_gradient(const GaussianPolicy& policy, const Matrix& obs,
                                  const Matrix& act, const Eigen::VectorXd& advantages) {
  require(obs.rows() > 0, "policy_gradient: empty batch");
  require(obs.rows() == act.rows() && obs.rows() == advantages.size(),
          "policy_gradient: batch size mismatch");
  const ScoreBatch scores(policy, obs, act);
  return scores.weighted_score_sum(advantages) / static_cast<double>(obs.rows());
}

// Matrix-free action of the sampled Fisher metric
//   F v = (1/T) sum_t u_t (u_t . v) + damping * v,   u_t = grad_log_prob_t,
// evaluated as one batched forward-mode pass (the per-sample dot products)
// followed by one batched reverse pass (the weighted score sum).
class FisherOperator {
 public:
  FisherOperator(const GaussianPolicy& policy, const Matrix& obs, const Matrix& act,
                 double damping)
      : scores_(policy, obs, act),
        damping_(damping),
        count_(static_cast<double>(obs.rows())),
        dim_(policy.param_count()) {}

  int dim() const { return dim_; }
  double damping() const { return damping_; }

  FlatVector apply(const FlatVector& v) const {
    require(v.size() == dim_, "FisherOperator: dim mismatch");
    const Eigen::VectorXd per_sample = scores_.score_dot(v);
    FlatVector out = scores_.weighted_score_sum(per_sample) / count_;
    if (damping_ != 0.0) out += damping_ * v;
    return out;
  }

 private:
  ScoreBatch scores_;
  double damping_;
  double count_;
  int dim_;
};

inline FlatVector fisher_vector_product(const GaussianPolicy& policy, const Matrix& obs,
                                        const Matrix& act, const FlatVector& v,
                                        double damping) {
  require(obs.rows() > 0, "fisher_vector_product: empty sample set");
  return FisherOperator(policy, obs, act, damping).apply(v);
}

using LinearOperator = std::function<FlatVector(const FlatVector&)>;

struct CgResult {
  FlatVector x;
  int iterations = 0;
  double relative_residual = 0.0;
};

// Plain conjugate gradients on an SPD operator. Stops when the relative
// residual drops below cfg.cg_residual_tol or the iteration cap is hit.
inline CgResult conjugate_gradient(const LinearOperator& apply_A, const FlatVector& b,
                                   const NpgConfig& cfg) {
  CgResult res;
  res.x = FlatVector::Zero(b.size());
  const double b_norm = b.norm();
  if (b_norm == 0.0) return res;

  FlatVector r = b;  // residual of x = 0
  FlatVector p = r;
  double rs = r.squaredNorm();
  for (int it = 0; it < cfg.cg_iterations; ++it) {
    const FlatVector Ap = apply_A(p);
    const double pAp = p.dot(Ap);
    if (!std::isfinite(pAp) || pAp <= 0.0) {
      if (!std::isfinite(pAp))
        throw std::runtime_error("conjugate_gradient: non-finite curvature at iteration " +
                                 std::to_string(it + 1));
      break;  // numerically semi-definite direction; return best iterate so far
    }
    const double alpha = rs / pAp;
    res.x += alpha * p;
    r -= alpha * Ap;
    res.iterations = it + 1;
    const double rs_new = r.squaredNorm();
    if (!std::isfinite(rs_new))
      throw std::runtime_error("conjugate_gradient: non-finite residual at iteration " +
                               std::to_string(it + 1));
    if (std::sqrt(rs_new) <= cfg.cg_residual_tol * b_norm) {
      rs = rs_new;
      break;
    }
    p = r + (rs_new / rs) * p;
    rs = rs_new;
  }
  res.relative_residual = std::sqrt(rs) / b_norm;
  return res;
}

enum class StepStatus { ok, zero_gradient, rejected_indefinite };

struct NpgReport {
  StepStatus status = StepStatus::ok;
  double quadratic_form = 0.0;  // step^T F step, measured with one extra FVP
  double cg_residual = 0.0;
  int cg_iterations = 0;
  double step_scale = 0.0;  // sqrt(delta / g.x)
};

struct NpgStep {
  FlatVector new_theta;
  NpgReport report;
};

// theta' = theta + sqrt(delta / (g . F^-1 g)) F^-1 g with F^-1 g from CG.
// The metric is injected so tests can substitute e.g. the identity; training
// uses the sampled Fisher operator below.
inline NpgStep npg_step_with_metric(const FlatVector& theta, const FlatVector& g,
                                    const LinearOperator& metric, const NpgConfig& cfg) {
  require(g.size() == theta.size(), "npg_step: gradient dim mismatch");
  NpgStep step;
  step.new_theta = theta;
  if (g.norm() == 0.0) {
    step.report.status = StepStatus::zero_gradient;
    return step;
  }
  const CgResult cg = conjugate_gradient(metric, g, cfg);
  step.report.cg_residual = cg.relative_residual;
  step.report.cg_iterations = cg.iterations;
  const double gx = g.dot(cg.x);
  if (!(gx > 0.0)) {
    step.report.status = StepStatus::rejected_indefinite;
    return step;  // theta unchanged
  }
  const double scale = std::sqrt(cfg.step_size_delta / gx);
  const FlatVector delta_theta = scale * cg.x;
  step.report.step_scale = scale;
  step.report.quadratic_form = delta_theta.dot(metric(delta_theta));
  step.new_theta = theta + delta_theta;
  return step;
}

inline NpgStep npg_step(const GaussianPolicy& policy, const FlatVector& g,
                        const Matrix& obs, const Matrix& act, const NpgConfig& cfg) {
  require(obs.rows() > 0, "npg_step: empty sample set");
  require(g.size() == policy.param_count(), "npg_step: gradient dim mismatch");
  const FisherOperator fisher(policy, obs, act, cfg.fisher_damping);
  return npg_step_with_metric(
      policy.theta, g, [&fisher](const FlatVector& v) { return fisher.apply(v); }, cfg);
}

}  // namespace dapg
