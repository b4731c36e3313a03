#pragma once

#include <Eigen/Core>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "dapg/core.hpp"
#include "dapg/rng.hpp"

namespace dapg {

// Fully-connected net, tanh hidden activations, linear output. Parameters live
// in one flat vector so the optimizer can treat the whole model as a point in
// R^P. Flattening order is stable: layer by layer, weight matrix row-major
// (fan_out x fan_in), then bias.
struct MlpSpec {
  int input_dim = 0;
  std::vector<int> hidden;
  int output_dim = 0;

  int layer_count() const { return static_cast<int>(hidden.size()) + 1; }

  int fan_in(int layer) const { return layer == 0 ? input_dim : hidden[layer - 1]; }

  int fan_out(int layer) const {
    return layer == layer_count() - 1 ? output_dim : hidden[layer];
  }

  int param_count() const {
    int n = 0;
    for (int l = 0; l < layer_count(); ++l) n += (fan_in(l) + 1) * fan_out(l);
    return n;
  }

  void validate() const {
    require(input_dim >= 1 && output_dim >= 1, "MlpSpec: dims must be >= 1");
    for (int h : hidden) require(h >= 1, "MlpSpec: hidden sizes must be >= 1");
  }

  bool operator==(const MlpSpec&) const = default;
};

using RowMajorMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using WeightView = Eigen::Map<const RowMajorMatrix>;
using WeightViewMut = Eigen::Map<RowMajorMatrix>;

inline WeightView weight_view(const MlpSpec& spec, const FlatVector& params,
                              int layer, int offset) {
  return WeightView(params.data() + offset, spec.fan_out(layer), spec.fan_in(layer));
}

inline int layer_offset(const MlpSpec& spec, int layer) {
  int off = 0;
  for (int l = 0; l < layer; ++l) off += (spec.fan_in(l) + 1) * spec.fan_out(l);
  return off;
}

// weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases 0
inline FlatVector init_mlp_params(const MlpSpec& spec, Rng& rng) {
  spec.validate();
  FlatVector params = FlatVector::Zero(spec.param_count());
  int off = 0;
  for (int l = 0; l < spec.layer_count(); ++l) {
    const double s = 1.0 / std::sqrt(static_cast<double>(spec.fan_in(l)));
    const int nw = spec.fan_in(l) * spec.fan_out(l);
    for (int i = 0; i < nw; ++i) params[off + i] = rng.uniform(-s, s);
    off += nw + spec.fan_out(l);  // biases stay zero
  }
  return params;
}

inline Eigen::VectorXd mlp_forward(const MlpSpec& spec, const FlatVector& params,
                                   const Eigen::VectorXd& input) {
  require(params.size() == spec.param_count(), "mlp_forward: parameter count mismatch");
  require(input.size() == spec.input_dim, "mlp_forward: input dim mismatch");
  Eigen::VectorXd a = input;
  int off = 0;
  for (int l = 0; l < spec.layer_count(); ++l) {
    const auto W = weight_view(spec, params, l, off);
    off += spec.fan_in(l) * spec.fan_out(l);
    const auto b = params.segment(off, spec.fan_out(l));
    off += spec.fan_out(l);
    Eigen::VectorXd z = W * a + b;
    a = (l == spec.layer_count() - 1) ? z : z.array().tanh().matrix();
  }
  return a;
}

struct MlpBackward {
  FlatVector param_grad;
  Eigen::VectorXd input_grad;
};

// gradient of output_grad . output w.r.t. params and input
inline MlpBackward mlp_backward(const MlpSpec& spec, const FlatVector& params,
                                const Eigen::VectorXd& input,
                                const Eigen::VectorXd& output_grad) {
  require(params.size() == spec.param_count(), "mlp_backward: parameter count mismatch");
  require(input.size() == spec.input_dim, "mlp_backward: input dim mismatch");
  require(output_grad.size() == spec.output_dim, "mlp_backward: output_grad dim mismatch");

  const int L = spec.layer_count();
  std::vector<Eigen::VectorXd> acts(static_cast<std::size_t>(L) + 1);
  acts[0] = input;
  int off = 0;
  for (int l = 0; l < L; ++l) {
    const auto W = weight_view(spec, params, l, off);
    const auto b = params.segment(off + spec.fan_in(l) * spec.fan_out(l), spec.fan_out(l));
    Eigen::VectorXd z = W * acts[l] + b;
    acts[l + 1] = (l == L - 1) ? z : z.array().tanh().matrix();
    off += (spec.fan_in(l) + 1) * spec.fan_out(l);
  }

  MlpBackward out;
  out.param_grad = FlatVector::Zero(spec.param_count());
  Eigen::VectorXd d = output_grad;
  for (int l = L - 1; l >= 0; --l) {
    const int woff = layer_offset(spec, l);
    const auto W = weight_view(spec, params, l, woff);
    WeightViewMut wgrad(out.param_grad.data() + woff, spec.fan_out(l), spec.fan_in(l));
    wgrad = d * acts[l].transpose();
    out.param_grad.segment(woff + spec.fan_in(l) * spec.fan_out(l), spec.fan_out(l)) = d;
    Eigen::VectorXd dprev = W.transpose() * d;
    if (l > 0) dprev.array() *= 1.0 - acts[l].array().square();  // tanh'
    d = dprev;
  }
  out.input_grad = d;
  return out;
}

// Activation workspace of a row-per-sample batched forward. acts[0] is the
// input batch, acts[l+1] the post-activation output of layer l; output() is
// the linear last layer.
struct MlpBatch {
  std::vector<Matrix> acts;
  const Matrix& output() const { return acts.back(); }
};

inline MlpBatch mlp_forward_batch(const MlpSpec& spec, const FlatVector& params,
                                  const Matrix& inputs) {
  require(params.size() == spec.param_count(), "mlp_forward_batch: parameter count mismatch");
  require(inputs.cols() == spec.input_dim, "mlp_forward_batch: input dim mismatch");
  const int L = spec.layer_count();
  MlpBatch ws;
  ws.acts.resize(static_cast<std::size_t>(L) + 1);
  ws.acts[0] = inputs;
  int off = 0;
  for (int l = 0; l < L; ++l) {
    const auto W = weight_view(spec, params, l, off);
    const auto b = params.segment(off + spec.fan_in(l) * spec.fan_out(l), spec.fan_out(l));
    Matrix z = ws.acts[l] * W.transpose();
    z.rowwise() += b.transpose();
    ws.acts[l + 1] = (l == L - 1) ? z : z.array().tanh().matrix();
    off += (spec.fan_in(l) + 1) * spec.fan_out(l);
  }
  return ws;
}

// sum over samples of the parameter gradient, one reverse sweep of GEMMs
inline FlatVector mlp_grad_sum(const MlpSpec& spec, const FlatVector& params,
                               const MlpBatch& ws, const Matrix& output_cotangents) {
  require(output_cotangents.rows() == ws.acts[0].rows() &&
              output_cotangents.cols() == spec.output_dim,
          "mlp_grad_sum: cotangent shape mismatch");
  FlatVector grad = FlatVector::Zero(spec.param_count());
  Matrix d = output_cotangents;
  for (int l = spec.layer_count() - 1; l >= 0; --l) {
    const int woff = layer_offset(spec, l);
    const auto W = weight_view(spec, params, l, woff);
    WeightViewMut wgrad(grad.data() + woff, spec.fan_out(l), spec.fan_in(l));
    wgrad = d.transpose() * ws.acts[l];
    grad.segment(woff + spec.fan_in(l) * spec.fan_out(l), spec.fan_out(l)) =
        d.colwise().sum();
    if (l > 0) {
      Matrix dprev = d * W;
      dprev.array() *= 1.0 - ws.acts[l].array().square();
      d = std::move(dprev);
    }
  }
  return grad;
}

// forward-mode directional derivative along a parameter direction v, for the
// whole batch at once; inputs held fixed
inline Matrix mlp_jvp_batch(const MlpSpec& spec, const FlatVector& params,
                            const MlpBatch& ws, const FlatVector& v) {
  require(v.size() == spec.param_count(), "mlp_jvp_batch: direction dim mismatch");
  const auto n = ws.acts[0].rows();
  Matrix tangent;  // empty until the first layer writes it
  int off = 0;
  for (int l = 0; l < spec.layer_count(); ++l) {
    const auto W = weight_view(spec, params, l, off);
    const WeightView dW(v.data() + off, spec.fan_out(l), spec.fan_in(l));
    const auto db = v.segment(off + spec.fan_in(l) * spec.fan_out(l), spec.fan_out(l));
    Matrix tz = ws.acts[l] * dW.transpose();
    tz.rowwise() += db.transpose();
    if (l > 0) tz.noalias() += tangent * W.transpose();
    if (l < spec.layer_count() - 1) {
      tz.array() *= 1.0 - ws.acts[l + 1].array().square();
    }
    tangent = std::move(tz);
    off += (spec.fan_in(l) + 1) * spec.fan_out(l);
  }
  (void)n;
  return tangent;
}

struct AdamState {
  FlatVector m, v;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long t = 0;

  explicit AdamState(Eigen::Index dim)
      : m(FlatVector::Zero(dim)), v(FlatVector::Zero(dim)) {}

  void update(FlatVector& params, const FlatVector& grad, double lr) {
    ++t;
    m = beta1 * m + (1.0 - beta1) * grad;
    v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
    const double correction =
        std::sqrt(1.0 - std::pow(beta2, t)) / (1.0 - std::pow(beta1, t));
    params.array() -= lr * correction * m.array() / (v.array().sqrt() + eps);
  }
};

// --- checkpoint io: binary header (spec) + flat 64-bit reals, little-endian ---

static_assert(std::endian::native == std::endian::little,
              "checkpoint format requires a little-endian host");

namespace detail {

inline void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw std::runtime_error("checkpoint: truncated header");
  return v;
}

}  // namespace detail

inline constexpr char kMlpMagic[8] = {'D', 'A', 'P', 'G', 'M', 'L', 'P', '1'};

inline void save_mlp(std::ostream& os, const MlpSpec& spec, const FlatVector& params) {
  require(params.size() == spec.param_count(), "save_mlp: parameter count mismatch");
  os.write(kMlpMagic, sizeof kMlpMagic);
  detail::write_u64(os, static_cast<std::uint64_t>(spec.input_dim));
  detail::write_u64(os, static_cast<std::uint64_t>(spec.hidden.size()));
  for (int h : spec.hidden) detail::write_u64(os, static_cast<std::uint64_t>(h));
  detail::write_u64(os, static_cast<std::uint64_t>(spec.output_dim));
  os.write(reinterpret_cast<const char*>(params.data()),
           static_cast<std::streamsize>(sizeof(double)) * params.size());
}

inline std::pair<MlpSpec, FlatVector> load_mlp(std::istream& is) {
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMlpMagic, sizeof magic) != 0)
    throw std::runtime_error("checkpoint: bad magic");
  MlpSpec spec;
  spec.input_dim = static_cast<int>(detail::read_u64(is));
  const auto nh = detail::read_u64(is);
  spec.hidden.resize(nh);
  for (auto& h : spec.hidden) h = static_cast<int>(detail::read_u64(is));
  spec.output_dim = static_cast<int>(detail::read_u64(is));
  spec.validate();
  FlatVector params(spec.param_count());
  is.read(reinterpret_cast<char*>(params.data()),
          static_cast<std::streamsize>(sizeof(double)) * params.size());
  if (!is) throw std::runtime_error("checkpoint: truncated parameters");
  return {spec, std::move(params)};
}

}  // namespace dapg
