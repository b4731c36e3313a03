#pragma once

#include <Eigen/Core>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <utility>
#include <vector>

#include "dapg/core.hpp"
#include "dapg/nnet.hpp"
#include "dapg/rng.hpp"

namespace dapg {

enum class VfOptimizer { adam, gd };

struct ValueFitConfig {
  int batch_size = 64;
  int epochs = 2;
  double learning_rate = 1e-3;
  // Adam by default: within the two-epoch budget plain descent at this rate
  // leaves the standardized MSE near 1, and a baseline that explains no
  // return variance turns GAE advantages into episode-offset noise.
  VfOptimizer optimizer = VfOptimizer::adam;
};

// Value function fitted by minibatch regression onto Monte-Carlo discounted
// returns. Targets are standardized internally (zero mean, unit variance) so
// one learning rate works across reward scales; predict() undoes the
// transform. Reported MSEs are in standardized space.
//
// In gd mode with a purely linear net, full-batch descent is non-increasing
// whenever learning_rate <= |B| / lambda_max(X^T X); the reported before/after
// MSE pair makes the descent property checkable on every fit.
struct ValueFunction {
  MlpSpec spec;
  FlatVector params;
  ValueFitConfig fit_config;
  double target_mean = 0.0;
  double target_std = 1.0;

  // The output layer starts at zero so an unfitted value function predicts
  // exactly 0 everywhere. Under sparse rewards this makes reward-free batches
  // produce identically-zero advantages (an exact no-op iteration) instead of
  // unit-scale initialization noise.
  static ValueFunction make(int input_dim, std::vector<int> hidden, Rng& rng,
                            ValueFitConfig cfg = {}) {
    ValueFunction vf;
    vf.spec = MlpSpec{input_dim, std::move(hidden), 1};
    vf.spec.validate();
    vf.params = init_mlp_params(vf.spec, rng);
    const int last = vf.spec.layer_count() - 1;
    vf.params.segment(layer_offset(vf.spec, last),
                      (vf.spec.fan_in(last) + 1) * vf.spec.fan_out(last))
        .setZero();
    vf.fit_config = cfg;
    return vf;
  }
};

inline double vf_predict(const ValueFunction& vf, const Eigen::VectorXd& obs) {
  require(obs.size() == vf.spec.input_dim, "vf_predict: obs dim mismatch");
  return mlp_forward(vf.spec, vf.params, obs)[0] * vf.target_std + vf.target_mean;
}

inline Eigen::VectorXd vf_predict_batch(const ValueFunction& vf, const Matrix& obs) {
  require(obs.cols() == vf.spec.input_dim, "vf_predict_batch: obs dim mismatch");
  const auto ws = mlp_forward_batch(vf.spec, vf.params, obs);
  return (ws.output().col(0).array() * vf.target_std + vf.target_mean).matrix();
}

struct FitReport {
  double initial_mse = 0.0;
  double final_mse = 0.0;
};

inline FitReport vf_fit(ValueFunction& vf, const Matrix& observations,
                        const Eigen::VectorXd& targets, Rng& rng) {
  require(observations.rows() == targets.size() && targets.size() >= 1,
          "vf_fit: observation/target count mismatch or empty");
  require(observations.cols() == vf.spec.input_dim, "vf_fit: obs dim mismatch");
  require(all_finite(targets), "vf_fit: non-finite targets");

  const auto n = targets.size();
  vf.target_mean = targets.mean();
  const double var = (targets.array() - vf.target_mean).square().sum() /
                     static_cast<double>(n);
  vf.target_std = std::max(std::sqrt(var), 1e-8);
  const Eigen::VectorXd y = (targets.array() - vf.target_mean) / vf.target_std;

  const auto mse = [&]() {
    const auto ws = mlp_forward_batch(vf.spec, vf.params, observations);
    return (ws.output().col(0) - y).squaredNorm() / static_cast<double>(n);
  };

  FitReport report;
  report.initial_mse = mse();

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  const int batch = std::max(1, vf.fit_config.batch_size);
  AdamState adam(vf.params.size());
  for (int epoch = 0; epoch < vf.fit_config.epochs; ++epoch) {
    rng.shuffle(order);
    for (Eigen::Index start = 0; start < n; start += batch) {
      const auto b = std::min<Eigen::Index>(batch, n - start);
      Matrix xb(b, vf.spec.input_dim);
      Eigen::VectorXd yb(b);
      for (Eigen::Index i = 0; i < b; ++i) {
        xb.row(i) = observations.row(order[static_cast<std::size_t>(start + i)]);
        yb[i] = y[order[static_cast<std::size_t>(start + i)]];
      }
      const auto ws = mlp_forward_batch(vf.spec, vf.params, xb);
      // d/dz of (1/b) sum (z - y)^2
      const Matrix cot = 2.0 / static_cast<double>(b) * (ws.output().col(0) - yb);
      const FlatVector grad = mlp_grad_sum(vf.spec, vf.params, ws, cot);
      if (vf.fit_config.optimizer == VfOptimizer::adam) {
        adam.update(vf.params, grad, vf.fit_config.learning_rate);
      } else {
        vf.params -= vf.fit_config.learning_rate * grad;
      }
    }
  }

  report.final_mse = mse();
  return report;
}

}  // namespace dapg
