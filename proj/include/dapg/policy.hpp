#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <utility>

#include "dapg/core.hpp"
#include "dapg/nnet.hpp"
#include "dapg/rng.hpp"

namespace dapg {

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;
inline constexpr double kLogTwoPi = 1.8378770664093454835606594728112;

// Diagonal-Gaussian policy: an MLP mean plus a state-independent log-std
// vector, both packed into one flat theta = [mean params, log_std]. The
// log-std tail is clamped to [-5, 2] on every write to keep the Fisher
// metric away from the sigma -> 0 singularity.
struct GaussianPolicy {
  MlpSpec mean_spec;
  FlatVector theta;

  int obs_dim() const { return mean_spec.input_dim; }
  int action_dim() const { return mean_spec.output_dim; }
  int mean_param_count() const { return mean_spec.param_count(); }
  int param_count() const { return mean_param_count() + action_dim(); }

  Eigen::Ref<const FlatVector> mean_params() const {
    return theta.head(mean_param_count());
  }
  Eigen::Ref<const FlatVector> log_std() const { return theta.tail(action_dim()); }

  void set_theta(FlatVector t) {
    require(t.size() == param_count(), "GaussianPolicy: theta dim mismatch");
    theta = std::move(t);
    auto tail = theta.tail(action_dim());
    tail = tail.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
  }

  Eigen::VectorXd mean(const Eigen::VectorXd& obs) const {
    return mlp_forward(mean_spec, mean_params(), obs);
  }

  static GaussianPolicy make(MlpSpec spec, Rng& rng, double init_log_std = 0.0) {
    spec.validate();
    GaussianPolicy p;
    p.mean_spec = std::move(spec);
    FlatVector theta = FlatVector::Zero(p.param_count());
    theta.head(p.mean_param_count()) = init_mlp_params(p.mean_spec, rng);
    theta.tail(p.action_dim()).setConstant(init_log_std);
    p.set_theta(std::move(theta));
    return p;
  }
};

struct ActionSample {
  Eigen::VectorXd action;
  double log_prob = 0.0;
};

inline double policy_log_prob(const GaussianPolicy& policy, const Eigen::VectorXd& obs,
                              const Eigen::VectorXd& action) {
  require(obs.size() == policy.obs_dim(), "log_prob: obs dim mismatch");
  require(action.size() == policy.action_dim(), "log_prob: action dim mismatch");
  require(all_finite(obs) && all_finite(action), "log_prob: non-finite input");
  const Eigen::VectorXd mu = policy.mean(obs);
  const Eigen::ArrayXd log_std = policy.log_std().array();
  const Eigen::ArrayXd z = (action - mu).array() * (-log_std).exp();
  return -(0.5 * z.square() + log_std).sum() -
         0.5 * kLogTwoPi * static_cast<double>(policy.action_dim());
}

inline ActionSample policy_act(const GaussianPolicy& policy, const Eigen::VectorXd& obs,
                               Rng& rng, bool deterministic = false) {
  require(obs.size() == policy.obs_dim(), "act: obs dim mismatch");
  require(all_finite(obs), "act: non-finite observation");
  Eigen::VectorXd action = policy.mean(obs);
  if (!deterministic) {
    const Eigen::ArrayXd std = policy.log_std().array().exp();
    for (int j = 0; j < policy.action_dim(); ++j) action[j] += std[j] * rng.normal();
  }
  return {action, policy_log_prob(policy, obs, action)};
}

// Exact gradient of log pi w.r.t. theta: mean path via the reverse pass,
// log-std entries analytic (z_j^2 - 1 with z the standardized residual).
inline FlatVector policy_grad_log_prob(const GaussianPolicy& policy,
                                       const Eigen::VectorXd& obs,
                                       const Eigen::VectorXd& action) {
  require(obs.size() == policy.obs_dim(), "grad_log_prob: obs dim mismatch");
  require(action.size() == policy.action_dim(), "grad_log_prob: action dim mismatch");
  const Eigen::VectorXd mu = policy.mean(obs);
  const Eigen::ArrayXd inv_var = (-2.0 * policy.log_std().array()).exp();
  const Eigen::VectorXd dmu = ((action - mu).array() * inv_var).matrix();
  const auto back = mlp_backward(policy.mean_spec, policy.mean_params(), obs, dmu);
  FlatVector grad(policy.param_count());
  grad.head(policy.mean_param_count()) = back.param_grad;
  grad.tail(policy.action_dim()) =
      ((action - mu).array().square() * inv_var - 1.0).matrix();
  return grad;
}

// Score-space operations over a batch of (obs, action) pairs at a frozen
// theta. Built once per iteration; the CG loop then applies the Fisher
// operator through weighted_score_sum / score_dot without ever materializing
// per-sample score vectors.
class ScoreBatch {
 public:
  ScoreBatch(const GaussianPolicy& policy, const Matrix& obs, const Matrix& act)
      : policy_(&policy) {
    require(obs.cols() == policy.obs_dim(), "ScoreBatch: obs dim mismatch");
    require(act.cols() == policy.action_dim(), "ScoreBatch: action dim mismatch");
    require(obs.rows() == act.rows() && obs.rows() > 0, "ScoreBatch: empty batch");
    ws_ = mlp_forward_batch(policy.mean_spec, policy.mean_params(), obs);
    const Eigen::ArrayXd inv_var = (-2.0 * policy.log_std().array()).exp();
    const Eigen::ArrayXXd resid = (act - ws_.output()).array();
    dmu_ = resid.rowwise() * inv_var.transpose();
    dlogstd_ = (resid.square().rowwise() * inv_var.transpose()) - 1.0;
  }

  Eigen::Index sample_count() const { return ws_.acts[0].rows(); }

  // sum_t coeff_t * grad_log_prob_t
  FlatVector weighted_score_sum(const Eigen::VectorXd& coeff) const {
    require(coeff.size() == sample_count(), "weighted_score_sum: coeff count mismatch");
    const Matrix cot = (dmu_.colwise() * coeff.array()).matrix();
    FlatVector out(policy_->param_count());
    out.head(policy_->mean_param_count()) =
        mlp_grad_sum(policy_->mean_spec, policy_->mean_params(), ws_, cot);
    out.tail(policy_->action_dim()) = dlogstd_.matrix().transpose() * coeff;
    return out;
  }

  // per-sample u_t . v where u_t = grad_log_prob_t
  Eigen::VectorXd score_dot(const FlatVector& v) const {
    require(v.size() == policy_->param_count(), "score_dot: dim mismatch");
    const Matrix tangent = mlp_jvp_batch(policy_->mean_spec, policy_->mean_params(),
                                         ws_, v.head(policy_->mean_param_count()));
    return (dmu_ * tangent.array()).rowwise().sum().matrix() +
           dlogstd_.matrix() * v.tail(policy_->action_dim());
  }

 private:
  const GaussianPolicy* policy_;
  MlpBatch ws_;
  Eigen::ArrayXXd dmu_;      // d log pi / d mu
  Eigen::ArrayXXd dlogstd_;  // d log pi / d log sigma
};

// --- policy checkpoint: mean-net checkpoint extended with the log_std tail ---

inline constexpr char kPolicyMagic[8] = {'D', 'A', 'P', 'G', 'P', 'O', 'L', '1'};

inline void save_policy(std::ostream& os, const GaussianPolicy& policy) {
  os.write(kPolicyMagic, sizeof kPolicyMagic);
  detail::write_u64(os, static_cast<std::uint64_t>(policy.mean_spec.input_dim));
  detail::write_u64(os, static_cast<std::uint64_t>(policy.mean_spec.hidden.size()));
  for (int h : policy.mean_spec.hidden)
    detail::write_u64(os, static_cast<std::uint64_t>(h));
  detail::write_u64(os, static_cast<std::uint64_t>(policy.mean_spec.output_dim));
  os.write(reinterpret_cast<const char*>(policy.theta.data()),
           static_cast<std::streamsize>(sizeof(double)) * policy.theta.size());
}

inline GaussianPolicy load_policy(std::istream& is) {
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kPolicyMagic, sizeof magic) != 0)
    throw std::runtime_error("policy checkpoint: bad magic");
  GaussianPolicy p;
  p.mean_spec.input_dim = static_cast<int>(detail::read_u64(is));
  p.mean_spec.hidden.resize(detail::read_u64(is));
  for (auto& h : p.mean_spec.hidden) h = static_cast<int>(detail::read_u64(is));
  p.mean_spec.output_dim = static_cast<int>(detail::read_u64(is));
  p.mean_spec.validate();
  FlatVector theta(p.mean_spec.param_count() + p.mean_spec.output_dim);
  is.read(reinterpret_cast<char*>(theta.data()),
          static_cast<std::streamsize>(sizeof(double)) * theta.size());
  if (!is) throw std::runtime_error("policy checkpoint: truncated parameters");
  p.set_theta(std::move(theta));
  return p;
}

}  // namespace dapg
