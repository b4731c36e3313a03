#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "dapg/dapg.hpp"

namespace dapg {

enum class EncoderType { identity, state_norm, random_projection, downsample, file };
enum class ProprioMode { automatic, on, off };

struct EncoderConfig {
  EncoderType type = EncoderType::identity;
  int feature_dim = RandomProjectionEncoder::kDefaultFeatureDim;
  std::uint64_t seed = 0;
  int pool = 4;
  std::string feature_file;
  ProprioMode proprio = ProprioMode::automatic;
  int calibration_frames = 1000;
};

// Flat key=value run configuration. Defaults reproduce the published
// hyperparameter table; serialize() emits a canonical ordering so the default
// digest can be pinned against silent drift.
struct RunConfig {
  EnvSpec env;
  EncoderConfig encoder;
  std::vector<int> policy_hidden = {256, 256};
  std::vector<int> value_hidden = {128, 128};
  double init_log_std = 0.0;
  ValueFitConfig vf;
  GaeConfig gae;
  NpgConfig npg;
  DapgConfig dapg;
  int workers = 1;
  int eval_every = 0;
  int eval_rollouts = 75;
  double target_success = 0.0;
  std::string demo_path;
  std::string output_dir = "out";
  std::uint64_t seed = 0;

  bool include_proprio() const {
    if (encoder.proprio == ProprioMode::on) return true;
    if (encoder.proprio == ProprioMode::off) return false;
    return env.observation_mode == ObservationMode::pixels;
  }

  TrainOptions train_options() const {
    TrainOptions opt;
    opt.dapg = dapg;
    opt.npg = npg;
    opt.gae = gae;
    opt.vf_fit = vf;
    opt.policy_hidden = policy_hidden;
    opt.value_hidden = value_hidden;
    opt.init_log_std = init_log_std;
    opt.include_proprio = include_proprio();
    opt.workers = workers;
    opt.eval_every = eval_every;
    opt.eval_rollouts = eval_rollouts;
    opt.target_success = target_success;
    return opt;
  }
};

namespace cfg_detail {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string fmt(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

inline const char* name(EnvId id) {
  return id == EnvId::point_reacher ? "point_reacher" : "pendulum";
}
inline const char* name(ObservationMode m) {
  return m == ObservationMode::state ? "state" : "pixels";
}
inline const char* name(RewardMode m) { return m == RewardMode::sparse ? "sparse" : "dense"; }
inline const char* name(EncoderType t) {
  switch (t) {
    case EncoderType::identity: return "identity";
    case EncoderType::state_norm: return "state_norm";
    case EncoderType::random_projection: return "random_projection";
    case EncoderType::downsample: return "downsample";
    case EncoderType::file: return "file";
  }
  return "identity";
}
inline const char* name(ProprioMode m) {
  switch (m) {
    case ProprioMode::automatic: return "auto";
    case ProprioMode::on: return "on";
    case ProprioMode::off: return "off";
  }
  return "auto";
}
inline const char* name(DistractorMode m) {
  switch (m) {
    case DistractorMode::none: return "none";
    case DistractorMode::brightness_shift: return "brightness_shift";
    case DistractorMode::light_gradient: return "light_gradient";
    case DistractorMode::object_recolor: return "object_recolor";
    case DistractorMode::clutter_blob: return "clutter_blob";
  }
  return "none";
}

inline std::string name(const DistractorConfig& d) {
  if (!d.any()) return "none";
  std::string out;
  for (std::size_t i = 0; i < d.modes.size(); ++i) {
    if (i) out += ',';
    out += name(d.modes[i]);
  }
  return out;
}

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline DistractorMode parse_distractor(const std::string& s) {
  if (s == "none") return DistractorMode::none;
  if (s == "brightness_shift") return DistractorMode::brightness_shift;
  if (s == "light_gradient") return DistractorMode::light_gradient;
  if (s == "object_recolor") return DistractorMode::object_recolor;
  if (s == "clutter_blob") return DistractorMode::clutter_blob;
  throw ConfigError("unknown distractor mode '" + s + "'");
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace cfg_detail

inline std::string serialize_config(const RunConfig& c) {
  using namespace cfg_detail;
  std::ostringstream os;
  os << "env.id=" << name(c.env.id) << "\n";
  os << "env.observation_mode=" << name(c.env.observation_mode) << "\n";
  os << "env.reward_mode=" << name(c.env.reward_mode) << "\n";
  os << "env.horizon=" << c.env.horizon << "\n";
  os << "env.dt=" << fmt(c.env.dt) << "\n";
  os << "env.pixel_side=" << c.env.pixel_side << "\n";
  os << "env.distractors=" << name(c.env.distractors) << "\n";
  os << "encoder.type=" << name(c.encoder.type) << "\n";
  os << "encoder.feature_dim=" << c.encoder.feature_dim << "\n";
  os << "encoder.seed=" << c.encoder.seed << "\n";
  os << "encoder.pool=" << c.encoder.pool << "\n";
  os << "encoder.feature_file=" << c.encoder.feature_file << "\n";
  os << "encoder.proprio=" << name(c.encoder.proprio) << "\n";
  os << "encoder.calibration_frames=" << c.encoder.calibration_frames << "\n";
  os << "policy.hidden=" << fmt(c.policy_hidden) << "\n";
  os << "policy.init_log_std=" << fmt(c.init_log_std) << "\n";
  os << "vf.hidden=" << fmt(c.value_hidden) << "\n";
  os << "vf.batch_size=" << c.vf.batch_size << "\n";
  os << "vf.epochs=" << c.vf.epochs << "\n";
  os << "vf.learning_rate=" << fmt(c.vf.learning_rate) << "\n";
  os << "vf.optimizer=" << (c.vf.optimizer == VfOptimizer::adam ? "adam" : "gd") << "\n";
  os << "gae.gamma=" << fmt(c.gae.gamma) << "\n";
  os << "gae.lambda=" << fmt(c.gae.lambda) << "\n";
  os << "npg.step_size=" << fmt(c.npg.step_size_delta) << "\n";
  os << "npg.cg_iterations=" << c.npg.cg_iterations << "\n";
  os << "npg.cg_residual_tol=" << fmt(c.npg.cg_residual_tol) << "\n";
  os << "npg.fisher_damping=" << fmt(c.npg.fisher_damping) << "\n";
  os << "dapg.lam0=" << fmt(c.dapg.lam0) << "\n";
  os << "dapg.lam1=" << fmt(c.dapg.lam1) << "\n";
  os << "dapg.bc_batch_size=" << c.dapg.bc_batch_size << "\n";
  os << "dapg.bc_epochs=" << c.dapg.bc_epochs << "\n";
  os << "dapg.bc_learning_rate=" << fmt(c.dapg.bc_learning_rate) << "\n";
  os << "dapg.trajectories_per_iteration=" << c.dapg.trajectories_per_iteration << "\n";
  os << "dapg.horizon=" << c.dapg.horizon << "\n";
  os << "dapg.iterations=" << c.dapg.iterations << "\n";
  os << "dapg.standardize_advantages=" << (c.dapg.standardize_advantages ? 1 : 0) << "\n";
  os << "dapg.clamp_negative_weight=" << (c.dapg.clamp_negative_weight ? 1 : 0) << "\n";
  os << "dapg.fisher_include_demos=" << (c.dapg.fisher_include_demos ? 1 : 0) << "\n";
  os << "train.workers=" << c.workers << "\n";
  os << "train.eval_every=" << c.eval_every << "\n";
  os << "train.eval_rollouts=" << c.eval_rollouts << "\n";
  os << "train.target_success=" << fmt(c.target_success) << "\n";
  os << "demo_path=" << c.demo_path << "\n";
  os << "output_dir=" << c.output_dir << "\n";
  os << "seed=" << c.seed << "\n";
  return os.str();
}

inline std::uint64_t config_digest(const RunConfig& c) { return fnv1a(serialize_config(c)); }

inline RunConfig parse_config_text(const std::string& text) {
  using namespace cfg_detail;
  RunConfig c;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key=value, got '" +
                        line + "'");
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    const auto bad = [&](const std::string& why) {
      return ConfigError("key '" + key + "' (line " + std::to_string(lineno) + "): " + why);
    };
    const auto as_int = [&] {
      try {
        return std::stoi(val);
      } catch (const std::exception&) {
        throw bad("cannot parse integer '" + val + "'");
      }
    };
    const auto as_u64 = [&]() -> std::uint64_t {
      try {
        return std::stoull(val);
      } catch (const std::exception&) {
        throw bad("cannot parse integer '" + val + "'");
      }
    };
    const auto as_double = [&] {
      try {
        return std::stod(val);
      } catch (const std::exception&) {
        throw bad("cannot parse number '" + val + "'");
      }
    };
    const auto as_bool = [&] {
      if (val == "1" || val == "true") return true;
      if (val == "0" || val == "false") return false;
      throw bad("expected 0/1, got '" + val + "'");
    };
    const auto as_int_list = [&] {
      std::vector<int> out;
      for (const auto& tok : split_list(val)) {
        try {
          out.push_back(std::stoi(tok));
        } catch (const std::exception&) {
          throw bad("cannot parse integer list element '" + tok + "'");
        }
      }
      return out;
    };

    if (key == "env.id") {
      if (val == "point_reacher") c.env.id = EnvId::point_reacher;
      else if (val == "pendulum") c.env.id = EnvId::pendulum;
      else throw bad("unknown environment '" + val + "'");
    } else if (key == "env.observation_mode") {
      if (val == "state") c.env.observation_mode = ObservationMode::state;
      else if (val == "pixels") c.env.observation_mode = ObservationMode::pixels;
      else throw bad("expected state|pixels");
    } else if (key == "env.reward_mode") {
      if (val == "sparse") c.env.reward_mode = RewardMode::sparse;
      else if (val == "dense") c.env.reward_mode = RewardMode::dense;
      else throw bad("expected sparse|dense");
    } else if (key == "env.horizon") {
      c.env.horizon = as_int();
    } else if (key == "env.dt") {
      c.env.dt = as_double();
    } else if (key == "env.pixel_side") {
      c.env.pixel_side = as_int();
    } else if (key == "env.distractors") {
      c.env.distractors.modes.clear();
      for (const auto& tok : split_list(val)) {
        const auto mode = parse_distractor(tok);
        if (mode != DistractorMode::none) c.env.distractors.modes.push_back(mode);
      }
    } else if (key == "encoder.type") {
      if (val == "identity") c.encoder.type = EncoderType::identity;
      else if (val == "state_norm") c.encoder.type = EncoderType::state_norm;
      else if (val == "random_projection") c.encoder.type = EncoderType::random_projection;
      else if (val == "downsample") c.encoder.type = EncoderType::downsample;
      else if (val == "file") c.encoder.type = EncoderType::file;
      else throw bad("unknown encoder type '" + val + "'");
    } else if (key == "encoder.feature_dim") {
      c.encoder.feature_dim = as_int();
    } else if (key == "encoder.seed") {
      c.encoder.seed = as_u64();
    } else if (key == "encoder.pool") {
      c.encoder.pool = as_int();
    } else if (key == "encoder.feature_file") {
      c.encoder.feature_file = val;
    } else if (key == "encoder.proprio") {
      if (val == "auto") c.encoder.proprio = ProprioMode::automatic;
      else if (val == "on") c.encoder.proprio = ProprioMode::on;
      else if (val == "off") c.encoder.proprio = ProprioMode::off;
      else throw bad("expected auto|on|off");
    } else if (key == "encoder.calibration_frames") {
      c.encoder.calibration_frames = as_int();
    } else if (key == "policy.hidden") {
      c.policy_hidden = as_int_list();
    } else if (key == "policy.init_log_std") {
      c.init_log_std = as_double();
    } else if (key == "vf.hidden") {
      c.value_hidden = as_int_list();
    } else if (key == "vf.batch_size") {
      c.vf.batch_size = as_int();
    } else if (key == "vf.epochs") {
      c.vf.epochs = as_int();
    } else if (key == "vf.learning_rate") {
      c.vf.learning_rate = as_double();
    } else if (key == "vf.optimizer") {
      if (val == "adam") c.vf.optimizer = VfOptimizer::adam;
      else if (val == "gd") c.vf.optimizer = VfOptimizer::gd;
      else throw bad("expected adam|gd");
    } else if (key == "gae.gamma") {
      c.gae.gamma = as_double();
    } else if (key == "gae.lambda") {
      c.gae.lambda = as_double();
    } else if (key == "npg.step_size") {
      c.npg.step_size_delta = as_double();
    } else if (key == "npg.cg_iterations") {
      c.npg.cg_iterations = as_int();
    } else if (key == "npg.cg_residual_tol") {
      c.npg.cg_residual_tol = as_double();
    } else if (key == "npg.fisher_damping") {
      c.npg.fisher_damping = as_double();
    } else if (key == "dapg.lam0") {
      c.dapg.lam0 = as_double();
    } else if (key == "dapg.lam1") {
      c.dapg.lam1 = as_double();
    } else if (key == "dapg.bc_batch_size") {
      c.dapg.bc_batch_size = as_int();
    } else if (key == "dapg.bc_epochs") {
      c.dapg.bc_epochs = as_int();
    } else if (key == "dapg.bc_learning_rate") {
      c.dapg.bc_learning_rate = as_double();
    } else if (key == "dapg.trajectories_per_iteration") {
      c.dapg.trajectories_per_iteration = as_int();
    } else if (key == "dapg.horizon") {
      c.dapg.horizon = as_int();
    } else if (key == "dapg.iterations") {
      c.dapg.iterations = as_int();
    } else if (key == "dapg.standardize_advantages") {
      c.dapg.standardize_advantages = as_bool();
    } else if (key == "dapg.clamp_negative_weight") {
      c.dapg.clamp_negative_weight = as_bool();
    } else if (key == "dapg.fisher_include_demos") {
      c.dapg.fisher_include_demos = as_bool();
    } else if (key == "train.workers") {
      c.workers = as_int();
    } else if (key == "train.eval_every") {
      c.eval_every = as_int();
    } else if (key == "train.eval_rollouts") {
      c.eval_rollouts = as_int();
    } else if (key == "train.target_success") {
      c.target_success = as_double();
    } else if (key == "demo_path") {
      c.demo_path = val;
    } else if (key == "output_dir") {
      c.output_dir = val;
    } else if (key == "seed") {
      c.seed = as_u64();
    } else {
      throw ConfigError("unknown key '" + key + "' (line " + std::to_string(lineno) + ")");
    }
  }
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw cfg_detail::ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str());
}

using cfg_detail::ConfigError;

// frames of a seeded random-policy rollout, the documented calibration set
inline std::vector<Eigen::VectorXd> calibration_frames(const EnvSpec& env_spec, int count,
                                                       std::uint64_t seed) {
  std::vector<Eigen::VectorXd> frames;
  frames.reserve(static_cast<std::size_t>(count));
  auto env = make_env(env_spec);
  Rng master(seed);
  int episode = 0;
  while (static_cast<int>(frames.size()) < count) {
    Rng rng = master.split(static_cast<std::uint64_t>(episode++));
    StepResult sr = env->reset(rng);
    frames.push_back(sr.raw.data);
    for (int t = 0; t < env->horizon() && static_cast<int>(frames.size()) < count; ++t) {
      Eigen::VectorXd a(env->action_dim());
      for (Eigen::Index i = 0; i < a.size(); ++i)
        a[i] = rng.uniform(env->action_bound_lo(static_cast<int>(i)),
                           env->action_bound_hi(static_cast<int>(i)));
      sr = env->step(a);
      frames.push_back(sr.raw.data);
    }
  }
  frames.resize(static_cast<std::size_t>(count));
  return frames;
}

inline std::unique_ptr<FrozenEncoder> make_encoder(const RunConfig& c) {
  auto probe = make_env(c.env);
  switch (c.encoder.type) {
    case EncoderType::identity:
      return std::make_unique<IdentityEncoder>(probe->raw_dim());
    case EncoderType::state_norm: {
      if (c.env.observation_mode != ObservationMode::state)
        throw ConfigError("encoder.type=state_norm requires env.observation_mode=state");
      const auto frames =
          calibration_frames(c.env, c.encoder.calibration_frames, c.encoder.seed);
      return std::make_unique<StateNormEncoder>(
          StateNormEncoder::calibrated(probe->state_dim(), frames));
    }
    case EncoderType::random_projection: {
      const auto frames =
          calibration_frames(c.env, c.encoder.calibration_frames, c.encoder.seed);
      return std::make_unique<RandomProjectionEncoder>(RandomProjectionEncoder::calibrated(
          c.encoder.seed, probe->raw_dim(), c.encoder.feature_dim, frames));
    }
    case EncoderType::downsample:
      if (c.env.observation_mode != ObservationMode::pixels)
        throw ConfigError("encoder.type=downsample requires env.observation_mode=pixels");
      return std::make_unique<DownsampleEncoder>(c.env.pixel_side, c.encoder.pool);
    case EncoderType::file:
      if (c.encoder.feature_file.empty())
        throw ConfigError("encoder.type=file requires encoder.feature_file");
      return std::make_unique<FileFeatureEncoder>(
          load_feature_table(c.encoder.feature_file));
  }
  throw ConfigError("unknown encoder type");
}

// --- run artifacts ------------------------------------------------------------

inline constexpr char kMetricsHeader[] =
    "k,mean_return,success_rate,demo_weight,quadratic_form,cg_residual,wall_clock_s";

inline void write_metrics_csv(const std::filesystem::path& path, const TrainState& state) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << kMetricsHeader << "\n";
  for (const auto& m : state.metrics) {
    os << m.k << ',' << cfg_detail::fmt(m.mean_return) << ','
       << cfg_detail::fmt(m.success_rate) << ',' << cfg_detail::fmt(m.demo_weight) << ','
       << cfg_detail::fmt(m.quadratic_form) << ',' << cfg_detail::fmt(m.cg_residual) << ','
       << cfg_detail::fmt(m.wall_clock_s) << "\n";
  }
}

inline void write_phases_csv(const std::filesystem::path& path, const TrainState& state) {
  std::ofstream os(path);
  os << "k,collect_s,learn_s\n";
  for (const auto& m : state.metrics)
    os << m.k << ',' << cfg_detail::fmt(m.collect_s) << ',' << cfg_detail::fmt(m.learn_s)
       << "\n";
}

inline void write_eval_csv(const std::filesystem::path& path, const TrainState& state) {
  std::ofstream os(path);
  os << "k,success_rate,mean_return\n";
  for (const auto& e : state.eval_records)
    os << e.k << ',' << cfg_detail::fmt(e.success_rate) << ','
       << cfg_detail::fmt(e.mean_return) << "\n";
}

// static learning-curve plot: success rate vs iteration
inline void write_learning_curve_svg(const std::filesystem::path& path,
                                     const TrainState& state) {
  const int w = 640, h = 400, ml = 60, mr = 20, mt = 20, mb = 50;
  const int pw = w - ml - mr, ph = h - mt - mb;
  std::ofstream os(path);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
     << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
  os << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
  os << "<line x1=\"" << ml << "\" y1=\"" << mt + ph << "\" x2=\"" << ml + pw << "\" y2=\""
     << mt + ph << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << mt + ph
     << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double frac = i / 4.0;
    const int y = mt + static_cast<int>((1.0 - frac) * ph);
    os << "<text x=\"" << ml - 8 << "\" y=\"" << y + 4
       << "\" text-anchor=\"end\" font-size=\"12\">" << frac << "</text>\n";
    os << "<line x1=\"" << ml - 4 << "\" y1=\"" << y << "\" x2=\"" << ml << "\" y2=\"" << y
       << "\" stroke=\"black\"/>\n";
  }
  const std::size_t n = state.metrics.size();
  const int last_k = n > 1 ? state.metrics.back().k : 1;
  os << "<text x=\"" << ml + pw / 2 << "\" y=\"" << h - 12
     << "\" text-anchor=\"middle\" font-size=\"13\">iteration</text>\n";
  os << "<text x=\"16\" y=\"" << mt + ph / 2
     << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 16 "
     << mt + ph / 2 << ")\">success rate</text>\n";
  os << "<text x=\"" << ml << "\" y=\"" << mt + ph + 16 << "\" font-size=\"12\">0</text>\n";
  os << "<text x=\"" << ml + pw << "\" y=\"" << mt + ph + 16
     << "\" text-anchor=\"end\" font-size=\"12\">" << last_k << "</text>\n";
  if (n > 0) {
    os << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < n; ++i) {
      const double x = ml + (n == 1 ? 0.0 : static_cast<double>(i) / (n - 1) * pw);
      const double y = mt + (1.0 - state.metrics[i].success_rate) * ph;
      os << x << ',' << y << ' ';
    }
    os << "\"/>\n";
  }
  os << "</svg>\n";
}

// --- CLI entry points ---------------------------------------------------------

// exit codes: 0 success, 1 runtime fault, 2 configuration/validation error

inline int run_train(const std::filesystem::path& config_path, std::ostream& out,
                     std::ostream& err) {
  RunConfig config;
  try {
    config = load_config(config_path);
  } catch (const std::exception& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  }

  DemoSet demos;
  try {
    if (config.demo_path.empty()) throw ConfigError("demo_path is empty");
    if (!std::filesystem::exists(config.demo_path))
      throw ConfigError("demo file does not exist: " + config.demo_path);
    demos = load_demo_set(config.demo_path);
  } catch (const std::exception& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  }

  std::unique_ptr<FrozenEncoder> encoder;
  try {
    encoder = make_encoder(config);
  } catch (const std::exception& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  }

  const std::filesystem::path out_dir(config.output_dir);
  std::filesystem::create_directories(out_dir);
  {
    std::ofstream cfg_echo(out_dir / "config.txt");
    cfg_echo << serialize_config(config);
  }

  const auto digest_before = encoder->parameter_digest();
  auto options = config.train_options();
  options.on_iteration = [&out](const dapg::IterationMetrics& m) {
    out << "k=" << m.k << " return " << m.mean_return << " success " << m.success_rate
        << " w " << m.demo_weight << " (" << m.wall_clock_s << "s)\n";
  };
  options.on_eval = [&out](const dapg::EvalRecord& e) {
    out << "eval after k=" << e.k << ": success " << e.success_rate << " return "
        << e.mean_return << "\n";
  };
  const TrainState state = train(config.env, *encoder, demos, options, Rng(config.seed));

  write_metrics_csv(out_dir / "metrics.csv", state);
  write_phases_csv(out_dir / "phases.csv", state);
  if (!state.eval_records.empty()) write_eval_csv(out_dir / "eval.csv", state);
  write_learning_curve_svg(out_dir / "learning_curve.svg", state);
  {
    std::ofstream ck(out_dir / "policy_final.bin", std::ios::binary);
    save_policy(ck, state.policy);
  }

  const auto stats = encoder->stats();
  out << "bc_loss: initial " << state.bc_report.initial_loss << " final "
      << state.bc_report.final_loss << "\n";
  out << "iterations completed: " << state.k << " (rejected steps: " << state.rejected_steps
      << ")\n";
  out << "encode: " << stats.calls << " calls, " << stats.total_seconds << " s total\n";
  if (encoder->parameter_digest() != digest_before) {
    err << "internal error: encoder parameters changed during training\n";
    return 1;
  }
  if (state.aborted) {
    err << "training aborted: " << state.abort_reason << " (partial logs in "
        << out_dir.string() << ")\n";
    return 1;
  }
  return 0;
}

struct DistractorEvalRow {
  std::string mode;
  EvalReport report;
};

inline int run_eval(const std::filesystem::path& checkpoint_path,
                    const std::filesystem::path& config_path,
                    const std::vector<std::string>& distractor_modes, int rollouts,
                    std::ostream& out, std::ostream& err,
                    std::vector<DistractorEvalRow>* rows_out = nullptr) {
  RunConfig config;
  GaussianPolicy policy;
  std::unique_ptr<FrozenEncoder> encoder;
  try {
    config = load_config(config_path);
    std::ifstream ck(checkpoint_path, std::ios::binary);
    if (!ck) throw ConfigError("cannot open checkpoint " + checkpoint_path.string());
    policy = load_policy(ck);
    encoder = make_encoder(config);
    if (rollouts < 1) throw ConfigError("rollouts must be >= 1");

    auto probe = make_env(config.env);
    const int expect =
        encoder->feature_dim() + (config.include_proprio() ? probe->proprio_dim() : 0);
    if (policy.obs_dim() != expect)
      throw ConfigError("checkpoint expects obs dim " + std::to_string(policy.obs_dim()) +
                        " but env+encoder assemble dim " + std::to_string(expect));
    if (policy.action_dim() != probe->action_dim())
      throw ConfigError("checkpoint action dim " + std::to_string(policy.action_dim()) +
                        " does not match env action dim " +
                        std::to_string(probe->action_dim()));
  } catch (const std::exception& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  }

  // clean baseline first, then each requested mode
  std::vector<std::string> modes = {"none"};
  for (const auto& m : distractor_modes)
    if (m != "none") modes.push_back(m);

  const auto theta_before = policy.theta;
  const auto digest_before = encoder->parameter_digest();

  std::vector<DistractorEvalRow> rows;
  out << "mode,rollouts,success_rate,mean_return\n";
  for (const auto& mode : modes) {
    EnvSpec env_spec = config.env;
    env_spec.distractors.modes.clear();
    try {
      const auto m = cfg_detail::parse_distractor(mode);
      if (m != DistractorMode::none) env_spec.distractors.modes.push_back(m);
    } catch (const std::exception& e) {
      err << "config error: " << e.what() << "\n";
      return 2;
    }
    const Rng eval_rng(config.seed ^ 0x45564c5f45504953ULL);
    const EvalReport report = evaluate_policy(env_spec, *encoder, config.include_proprio(),
                                              policy, rollouts, eval_rng);
    out << mode << ',' << report.rollouts << ',' << cfg_detail::fmt(report.success_rate)
        << ',' << cfg_detail::fmt(report.mean_return) << "\n";
    rows.push_back({mode, report});
  }

  // frozen-evaluation check: nothing may have moved
  if (policy.theta != theta_before || encoder->parameter_digest() != digest_before) {
    err << "internal error: parameters changed during evaluation\n";
    return 1;
  }
  if (rows_out) *rows_out = std::move(rows);
  return 0;
}

// frames_out, when non-empty, additionally dumps the raw frames of the kept
// episodes as a feature table (calibration/bridge input for external feature
// extractors)
inline int run_gen_demos(const RunConfig& config, int count,
                         const std::filesystem::path& out_dir, std::ostream& out,
                         std::ostream& err,
                         const std::filesystem::path& frames_out = {}) {
  std::unique_ptr<FrozenEncoder> encoder;
  try {
    if (count < 0) throw ConfigError("count must be >= 0");
    encoder = make_encoder(config);
  } catch (const std::exception& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  }
  try {
    Rng rng(config.seed ^ 0x44454d4f5f47454eULL);
    FrameTable frames;
    const DemoSet demos =
        generate_demos(config.env, *encoder, config.include_proprio(), count, rng,
                       "scripted_expert", frames_out.empty() ? nullptr : &frames);
    auto probe = make_env(config.env);
    const int obs_dim =
        encoder->feature_dim() + (config.include_proprio() ? probe->proprio_dim() : 0);
    save_demo_set(out_dir, demos, obs_dim, probe->action_dim());
    out << "wrote " << demos.trajectories.size() << " demonstrations to " << out_dir.string()
        << "\n";
    if (!frames_out.empty()) {
      const FileFeatureEncoder table(std::max(1, probe->raw_dim()), std::move(frames),
                                     {{"source", "raw_frames"}});
      save_feature_table(frames_out, table);
      out << "wrote " << table.frame_count() << " raw frames to " << frames_out.string()
          << "\n";
    }
    return 0;
  } catch (const std::exception& e) {
    err << "demo generation failed: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace dapg
