#pragma once

#include <Eigen/Core>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dapg/core.hpp"
#include "dapg/rng.hpp"
#include "dapg/trajectory_io.hpp"

namespace dapg {

struct EncodeStats {
  long long calls = 0;
  double total_seconds = 0.0;
};

// Immutable observation -> feature map. All variants freeze their parameters
// at construction; parameter_digest() lets tests verify nothing drifts over a
// training run. encode() is pure and records per-call latency for the compute
// log.
class FrozenEncoder {
 public:
  FrozenEncoder() = default;
  // copies carry the frozen parameters but start fresh latency counters
  FrozenEncoder(const FrozenEncoder&) noexcept {}
  FrozenEncoder& operator=(const FrozenEncoder&) noexcept { return *this; }
  virtual ~FrozenEncoder() = default;

  virtual int feature_dim() const = 0;
  // human-readable identity plus the validity note: the input distribution the
  // encoder is meant for is documentation metadata, not an enforced contract
  virtual std::string descriptor() const = 0;
  virtual std::uint64_t parameter_digest() const = 0;

  Eigen::VectorXd encode(const RawObservation& raw) const {
    const auto start = std::chrono::steady_clock::now();
    Eigen::VectorXd h = encode_impl(raw);
    const auto ns =
        std::chrono::duration_cast<std::chrono::nanoseconds>(
            std::chrono::steady_clock::now() - start)
            .count();
    calls_.fetch_add(1, std::memory_order_relaxed);
    nanos_.fetch_add(ns, std::memory_order_relaxed);
    return h;
  }

  EncodeStats stats() const {
    return {calls_.load(std::memory_order_relaxed),
            static_cast<double>(nanos_.load(std::memory_order_relaxed)) * 1e-9};
  }

 protected:
  virtual Eigen::VectorXd encode_impl(const RawObservation& raw) const = 0;

 private:
  mutable std::atomic<long long> calls_{0};
  mutable std::atomic<long long> nanos_{0};
};

struct AssembledObservation {
  Eigen::VectorXd features;
  Eigen::VectorXd proprio;
  Eigen::VectorXd assembled;  // [features, proprio], features first
};

inline AssembledObservation assemble(const FrozenEncoder& encoder,
                                     const RawObservation& raw,
                                     const Eigen::VectorXd& proprio) {
  require(all_finite(proprio), "assemble: non-finite proprio");
  AssembledObservation out;
  out.features = encoder.encode(raw);
  out.proprio = proprio;
  out.assembled.resize(out.features.size() + proprio.size());
  out.assembled << out.features, proprio;
  return out;
}

class IdentityEncoder final : public FrozenEncoder {
 public:
  explicit IdentityEncoder(int dim) : dim_(dim) {
    require(dim >= 1, "IdentityEncoder: dim must be >= 1");
  }

  int feature_dim() const override { return dim_; }
  std::string descriptor() const override {
    return "identity(dim=" + std::to_string(dim_) + "); valid on any state vector";
  }
  std::uint64_t parameter_digest() const override {
    return fnv1a(&dim_, sizeof dim_);
  }

 protected:
  Eigen::VectorXd encode_impl(const RawObservation& raw) const override {
    require(raw.data.size() == dim_, "IdentityEncoder: input dim mismatch");
    return raw.data;
  }

 private:
  int dim_;
};

// h = (W x - mu) / sigma with W fixed at construction from the seed. The
// normalization stats come from a calibration set (harness uses the first
// frames of a seeded random-policy rollout) and are then frozen with the rest.
class RandomProjectionEncoder final : public FrozenEncoder {
 public:
  static constexpr int kDefaultFeatureDim = 512;

  RandomProjectionEncoder(std::uint64_t seed, int input_dim,
                          int feature_dim = kDefaultFeatureDim)
      : seed_(seed), input_dim_(input_dim) {
    require(input_dim >= 1 && feature_dim >= 1, "RandomProjectionEncoder: bad dims");
    Rng rng(seed);
    const double scale = 1.0 / std::sqrt(static_cast<double>(input_dim));
    W_.resize(feature_dim, input_dim);
    for (Eigen::Index r = 0; r < W_.rows(); ++r)
      for (Eigen::Index c = 0; c < W_.cols(); ++c) W_(r, c) = scale * rng.normal();
    mu_ = Eigen::VectorXd::Zero(feature_dim);
    sigma_ = Eigen::VectorXd::Ones(feature_dim);
  }

  // computes per-feature stats over the calibration frames, then freezes
  static RandomProjectionEncoder calibrated(std::uint64_t seed, int input_dim,
                                            int feature_dim,
                                            const std::vector<Eigen::VectorXd>& frames) {
    RandomProjectionEncoder enc(seed, input_dim, feature_dim);
    require(!frames.empty(), "RandomProjectionEncoder: empty calibration set");
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(feature_dim);
    Eigen::VectorXd sq = Eigen::VectorXd::Zero(feature_dim);
    for (const auto& f : frames) {
      require(f.size() == input_dim, "RandomProjectionEncoder: calibration frame dim");
      const Eigen::VectorXd h = enc.W_ * f;
      mean += h;
      sq += h.cwiseProduct(h);
    }
    const double n = static_cast<double>(frames.size());
    mean /= n;
    enc.mu_ = mean;
    enc.sigma_ = ((sq / n - mean.cwiseProduct(mean)).cwiseMax(0.0))
                     .cwiseSqrt()
                     .cwiseMax(1e-6);  // sigma floor
    return enc;
  }

  int feature_dim() const override { return static_cast<int>(W_.rows()); }
  std::string descriptor() const override {
    return "random_projection(seed=" + std::to_string(seed_) +
           ", input_dim=" + std::to_string(input_dim_) +
           ", feature_dim=" + std::to_string(feature_dim()) +
           "); calibrated on a seeded random-policy frame set";
  }

  std::uint64_t parameter_digest() const override {
    auto h = fnv1a(W_.data(), sizeof(double) * static_cast<std::size_t>(W_.size()));
    h = fnv1a(mu_.data(), sizeof(double) * static_cast<std::size_t>(mu_.size()), h);
    return fnv1a(sigma_.data(), sizeof(double) * static_cast<std::size_t>(sigma_.size()), h);
  }

 protected:
  Eigen::VectorXd encode_impl(const RawObservation& raw) const override {
    require(raw.data.size() == input_dim_, "RandomProjectionEncoder: input dim mismatch");
    return ((W_ * raw.data - mu_).array() / sigma_.array()).matrix();
  }

 private:
  std::uint64_t seed_;
  int input_dim_;
  Matrix W_;
  Eigen::VectorXd mu_, sigma_;
};

// State passthrough with frozen per-feature standardization, calibrated the
// same way as RandomProjectionEncoder (a seeded random-policy frame set).
// Keeps state-mode policy inputs at unit scale, matching what the projection
// path provides for pixels.
class StateNormEncoder final : public FrozenEncoder {
 public:
  static StateNormEncoder calibrated(int dim, const std::vector<Eigen::VectorXd>& frames) {
    require(dim >= 1, "StateNormEncoder: bad dim");
    require(!frames.empty(), "StateNormEncoder: empty calibration set");
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim);
    Eigen::VectorXd sq = Eigen::VectorXd::Zero(dim);
    for (const auto& f : frames) {
      require(f.size() == dim, "StateNormEncoder: calibration frame dim");
      mean += f;
      sq += f.cwiseProduct(f);
    }
    const double n = static_cast<double>(frames.size());
    mean /= n;
    StateNormEncoder enc;
    enc.dim_ = dim;
    enc.mu_ = mean;
    enc.sigma_ = ((sq / n - mean.cwiseProduct(mean)).cwiseMax(0.0))
                     .cwiseSqrt()
                     .cwiseMax(1e-6);
    return enc;
  }

  int feature_dim() const override { return dim_; }
  std::string descriptor() const override {
    return "state_norm(dim=" + std::to_string(dim_) +
           "); calibrated on a seeded random-policy frame set";
  }
  std::uint64_t parameter_digest() const override {
    auto h = fnv1a(mu_.data(), sizeof(double) * static_cast<std::size_t>(mu_.size()));
    return fnv1a(sigma_.data(), sizeof(double) * static_cast<std::size_t>(sigma_.size()), h);
  }

 protected:
  Eigen::VectorXd encode_impl(const RawObservation& raw) const override {
    require(raw.data.size() == dim_, "StateNormEncoder: input dim mismatch");
    return ((raw.data - mu_).array() / sigma_.array()).matrix();
  }

 private:
  StateNormEncoder() = default;
  int dim_ = 0;
  Eigen::VectorXd mu_, sigma_;
};

// average pooling over the pixel grid
class DownsampleEncoder final : public FrozenEncoder {
 public:
  DownsampleEncoder(int grid_side, int pool) : side_(grid_side), pool_(pool) {
    require(grid_side >= 1 && pool >= 1 && grid_side % pool == 0,
            "DownsampleEncoder: pool must divide grid side");
  }

  int feature_dim() const override { return (side_ / pool_) * (side_ / pool_); }
  std::string descriptor() const override {
    return "downsample(side=" + std::to_string(side_) + ", pool=" + std::to_string(pool_) +
           "); valid on grayscale grids";
  }
  std::uint64_t parameter_digest() const override {
    auto h = fnv1a(&side_, sizeof side_);
    return fnv1a(&pool_, sizeof pool_, h);
  }

 protected:
  Eigen::VectorXd encode_impl(const RawObservation& raw) const override {
    require(raw.grid_side == side_ && raw.data.size() == side_ * side_,
            "DownsampleEncoder: grid shape mismatch");
    const int out_side = side_ / pool_;
    Eigen::VectorXd out(out_side * out_side);
    const double norm = 1.0 / (pool_ * pool_);
    for (int r = 0; r < out_side; ++r) {
      for (int c = 0; c < out_side; ++c) {
        double acc = 0.0;
        for (int i = 0; i < pool_; ++i)
          for (int j = 0; j < pool_; ++j)
            acc += raw.data[(r * pool_ + i) * side_ + c * pool_ + j];
        out[r * out_side + c] = acc * norm;
      }
    }
    return out;
  }

 private:
  int side_;
  int pool_;
};

// Serves exact stored vectors keyed by "episode,step"; the bridge format for
// features computed by an external pretrained network. Header metadata (e.g.
// crop geometry of the source pipeline) rides along untouched.
class FileFeatureEncoder final : public FrozenEncoder {
 public:
  FileFeatureEncoder(int feature_dim, std::map<std::string, Eigen::VectorXd> table,
                     std::map<std::string, std::string> metadata = {})
      : dim_(feature_dim), table_(std::move(table)), metadata_(std::move(metadata)) {
    require(dim_ >= 1, "FileFeatureEncoder: bad feature dim");
    for (const auto& [k, v] : table_)
      require(v.size() == dim_, "FileFeatureEncoder: row dim mismatch for key " + k);
  }

  static std::string key_for(int episode_id, int step_index) {
    return std::to_string(episode_id) + "," + std::to_string(step_index);
  }

  int feature_dim() const override { return dim_; }
  std::string descriptor() const override {
    return "file_feature(dim=" + std::to_string(dim_) + ", frames=" +
           std::to_string(table_.size()) + "); valid only on the recorded frame set";
  }

  std::uint64_t parameter_digest() const override {
    std::uint64_t h = fnv1a(&dim_, sizeof dim_);
    for (const auto& [k, v] : table_) {
      h = fnv1a(k, h);
      h = fnv1a(v.data(), sizeof(double) * static_cast<std::size_t>(v.size()), h);
    }
    return h;
  }

  const std::map<std::string, std::string>& metadata() const { return metadata_; }
  const std::map<std::string, Eigen::VectorXd>& table() const { return table_; }
  std::size_t frame_count() const { return table_.size(); }

  const Eigen::VectorXd& lookup(const std::string& key) const {
    const auto it = table_.find(key);
    if (it == table_.end())
      throw std::runtime_error("FileFeatureEncoder: missing feature for frame key '" +
                               key + "'");
    return it->second;
  }

 protected:
  Eigen::VectorXd encode_impl(const RawObservation& raw) const override {
    return lookup(key_for(raw.episode_id, raw.step_index));
  }

 private:
  int dim_;
  std::map<std::string, Eigen::VectorXd> table_;
  std::map<std::string, std::string> metadata_;
};

// Feature file format: `feature_dim=<d>` first, further `key=value` metadata
// lines, then CSV rows `episode,step,v_0,...,v_{d-1}`.
inline void save_feature_table(const std::filesystem::path& path,
                               const FileFeatureEncoder& enc) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << "feature_dim=" << enc.feature_dim() << "\n";
  for (const auto& [k, v] : enc.metadata()) os << k << "=" << v << "\n";
  for (const auto& [key, vec] : enc.table()) {
    os << key;
    for (Eigen::Index i = 0; i < vec.size(); ++i) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.17g", vec[i]);
      os << ',' << buf;
    }
    os << '\n';
  }
}

inline FileFeatureEncoder load_feature_table(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open feature table " + path.string());
  const std::string where = path.string();
  std::string line;
  int lineno = 0;
  int feature_dim = -1;
  std::map<std::string, std::string> metadata;
  std::map<std::string, Eigen::VectorXd> table;

  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    const auto comma = line.find(',');
    if (eq != std::string::npos && (comma == std::string::npos || eq < comma)) {
      const std::string key = line.substr(0, eq);
      const std::string value = line.substr(eq + 1);
      if (key == "feature_dim") {
        try {
          feature_dim = std::stoi(value);
        } catch (const std::exception&) {
          throw std::runtime_error(where + ":" + std::to_string(lineno) +
                                   ": bad feature_dim '" + value + "'");
        }
      } else {
        metadata[key] = value;
      }
      continue;
    }
    if (feature_dim < 1)
      throw std::runtime_error(where + ":" + std::to_string(lineno) +
                               ": data row before feature_dim header");
    const auto cells = dapg::detail::split_csv(line);
    if (cells.size() != static_cast<std::size_t>(feature_dim) + 2)
      throw std::runtime_error(where + ":" + std::to_string(lineno) + ": expected " +
                               std::to_string(feature_dim + 2) + " fields, got " +
                               std::to_string(cells.size()));
    const std::string key = cells[0] + "," + cells[1];
    if (table.count(key))
      throw std::runtime_error(where + ":" + std::to_string(lineno) +
                               ": duplicate frame key '" + key + "'");
    Eigen::VectorXd vec(feature_dim);
    for (int i = 0; i < feature_dim; ++i)
      vec[i] = dapg::detail::parse_double(cells[static_cast<std::size_t>(i) + 2], where, lineno);
    table.emplace(key, std::move(vec));
  }
  if (feature_dim < 1)
    throw std::runtime_error(where + ": missing feature_dim header");
  return FileFeatureEncoder(feature_dim, std::move(table), std::move(metadata));
}

}  // namespace dapg
