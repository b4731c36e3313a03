#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "dapg/core.hpp"
#include "dapg/rng.hpp"

namespace dapg {

enum class EnvId { point_reacher, pendulum };
enum class ObservationMode { state, pixels };
enum class RewardMode { sparse, dense };

// Visual distractors only ever touch the rendered frame; dynamics, rewards and
// the proprioceptive channel are untouched by construction.
enum class DistractorMode { none, brightness_shift, light_gradient, object_recolor, clutter_blob };

struct DistractorConfig {
  std::vector<DistractorMode> modes;

  bool has(DistractorMode m) const {
    return std::find(modes.begin(), modes.end(), m) != modes.end();
  }
  bool any() const {
    return !modes.empty() && !(modes.size() == 1 && modes[0] == DistractorMode::none);
  }
};

struct EnvSpec {
  EnvId id = EnvId::point_reacher;
  ObservationMode observation_mode = ObservationMode::state;
  RewardMode reward_mode = RewardMode::dense;
  int horizon = 0;  // 0 -> task default (reacher 100, pendulum 200)
  double dt = 0.05;
  int pixel_side = 32;
  DistractorConfig distractors;
};

struct StepResult {
  RawObservation raw;
  Eigen::VectorXd proprio;
  double reward = 0.0;
  bool done = false;      // task termination; the built-in tasks are
                          // fixed-horizon, so this stays false for them
  bool success = false;   // per-step success predicate (info channel)
  double distance_to_goal = 0.0;
};

// per-episode distractor parameter draws (pixel-space units)
struct DistractorDraw {
  double brightness = 0.0;
  double gradient_phi = 0.0;
  double gradient_mag = 0.0;
  double agent_intensity = 1.0;
  double goal_intensity = 0.55;
  double blob_x = 0.0;
  double blob_y = 0.0;
  double blob_radius = 0.0;
  double blob_intensity = 0.0;
};

namespace render_detail {

// anti-aliased disc, max-composited so overlapping glyphs keep their identity
inline void draw_disc(Matrix& frame, double cx, double cy, double radius,
                      double intensity) {
  const int side = static_cast<int>(frame.rows());
  const int lo_r = std::max(0, static_cast<int>(std::floor(cy - radius - 1)));
  const int hi_r = std::min(side - 1, static_cast<int>(std::ceil(cy + radius + 1)));
  const int lo_c = std::max(0, static_cast<int>(std::floor(cx - radius - 1)));
  const int hi_c = std::min(side - 1, static_cast<int>(std::ceil(cx + radius + 1)));
  for (int r = lo_r; r <= hi_r; ++r) {
    for (int c = lo_c; c <= hi_c; ++c) {
      const double d = std::hypot(c - cx, r - cy);
      const double coverage = std::clamp(radius + 0.5 - d, 0.0, 1.0);
      frame(r, c) = std::max(frame(r, c), intensity * coverage);
    }
  }
}

// row-major flattening: data[r * side + c]
inline Eigen::VectorXd flatten_frame(const Matrix& frame) {
  const auto side = frame.rows();
  Eigen::VectorXd out(frame.size());
  for (Eigen::Index r = 0; r < side; ++r)
    out.segment(r * frame.cols(), frame.cols()) = frame.row(r);
  return out;
}

}  // namespace render_detail

// Episode-scoped MDP with deterministic dynamics. reset() consumes the
// caller's stream for the initial state and always draws one extra word for
// the distractor substream, so trajectories are bit-identical with and
// without distractors enabled.
class Env {
 public:
  explicit Env(EnvSpec spec) : spec_(std::move(spec)) {}
  virtual ~Env() = default;

  const EnvSpec& spec() const { return spec_; }
  int horizon() const { return spec_.horizon > 0 ? spec_.horizon : default_horizon(); }
  int episode_step() const { return step_index_; }
  bool episode_done() const { return done_; }

  virtual int action_dim() const = 0;
  virtual int state_dim() const = 0;
  virtual int proprio_dim() const = 0;
  virtual double action_bound_lo(int dim) const = 0;
  virtual double action_bound_hi(int dim) const = 0;
  virtual int default_horizon() const = 0;

  int raw_dim() const {
    return spec_.observation_mode == ObservationMode::pixels
               ? spec_.pixel_side * spec_.pixel_side
               : state_dim();
  }

  StepResult reset(Rng& rng) {
    do_reset(rng);
    const std::uint64_t distractor_seed = rng.next_u64();  // always consumed
    draw_ = DistractorDraw{};
    if (spec_.distractors.any()) {
      Rng drng(distractor_seed);
      const auto& d = spec_.distractors;
      if (d.has(DistractorMode::brightness_shift)) draw_.brightness = drng.uniform(-0.25, 0.25);
      if (d.has(DistractorMode::light_gradient)) {
        draw_.gradient_phi = drng.uniform(0.0, 2.0 * M_PI);
        draw_.gradient_mag = drng.uniform(0.05, 0.25);
      }
      if (d.has(DistractorMode::object_recolor)) {
        draw_.agent_intensity = drng.uniform(0.3, 1.0);
        draw_.goal_intensity = drng.uniform(0.2, 1.0);
      }
      if (d.has(DistractorMode::clutter_blob)) {
        draw_.blob_x = drng.uniform(2.0, spec_.pixel_side - 3.0);
        draw_.blob_y = drng.uniform(2.0, spec_.pixel_side - 3.0);
        draw_.blob_radius = drng.uniform(1.5, 4.5);
        draw_.blob_intensity = drng.uniform(0.3, 1.0);
      }
    }
    ++episode_id_;
    step_index_ = 0;
    done_ = false;
    return observe(0.0);
  }

  StepResult step(const Eigen::VectorXd& action) {
    if (done_) throw std::logic_error("Env: step after episode termination");
    if (step_index_ >= horizon()) throw std::logic_error("Env: step past horizon");
    require(action.size() == action_dim(), "Env: action dim mismatch");
    require(all_finite(action), "Env: non-finite action");
    Eigen::VectorXd clipped = action;
    for (int i = 0; i < action_dim(); ++i)
      clipped[i] = std::clamp(clipped[i], action_bound_lo(i), action_bound_hi(i));
    do_step(clipped);
    ++step_index_;
    done_ = task_complete();
    const double reward = spec_.reward_mode == RewardMode::sparse
                              ? (success() ? 1.0 : 0.0)
                              : dense_reward();
    return observe(reward);
  }

  // grayscale frame in [0,1] with the episode's distractors applied
  Matrix render() const {
    Matrix frame = Matrix::Zero(spec_.pixel_side, spec_.pixel_side);
    render_glyphs(frame, draw_.agent_intensity, draw_.goal_intensity);
    if (spec_.distractors.has(DistractorMode::clutter_blob))
      render_detail::draw_disc(frame, draw_.blob_x, draw_.blob_y, draw_.blob_radius,
                               draw_.blob_intensity);
    if (spec_.distractors.has(DistractorMode::light_gradient)) {
      const double cx = std::cos(draw_.gradient_phi), sy = std::sin(draw_.gradient_phi);
      const double half = (spec_.pixel_side - 1) / 2.0;
      for (int r = 0; r < spec_.pixel_side; ++r)
        for (int c = 0; c < spec_.pixel_side; ++c)
          frame(r, c) += draw_.gradient_mag * ((c - half) * cx + (r - half) * sy) / half;
    }
    if (spec_.distractors.has(DistractorMode::brightness_shift))
      frame.array() += draw_.brightness;
    return frame.cwiseMax(0.0).cwiseMin(1.0);
  }

  virtual Eigen::VectorXd expert_action() const = 0;
  virtual Eigen::VectorXd ground_truth_state() const = 0;

  const DistractorDraw& distractor_draw() const { return draw_; }

 protected:
  virtual void do_reset(Rng& rng) = 0;
  virtual void do_step(const Eigen::VectorXd& clipped_action) = 0;
  virtual bool success() const = 0;
  // default: fixed-horizon task, no early termination
  virtual bool task_complete() const { return false; }
  virtual double dense_reward() const = 0;
  virtual double goal_distance() const = 0;
  virtual Eigen::VectorXd state_observation() const = 0;
  virtual Eigen::VectorXd proprio_observation() const = 0;
  virtual void render_glyphs(Matrix& frame, double agent_intensity,
                             double goal_intensity) const = 0;

  EnvSpec spec_;

 private:
  StepResult observe(double reward) const {
    StepResult out;
    out.raw.episode_id = episode_id_;
    out.raw.step_index = step_index_;
    if (spec_.observation_mode == ObservationMode::pixels) {
      out.raw.grid_side = spec_.pixel_side;
      out.raw.data = render_detail::flatten_frame(render());
    } else {
      out.raw.data = state_observation();
    }
    out.proprio = proprio_observation();
    out.reward = reward;
    out.done = done_;
    out.success = success();
    out.distance_to_goal = goal_distance();
    return out;
  }

  DistractorDraw draw_;
  int episode_id_ = -1;
  int step_index_ = 0;
  bool done_ = false;
};

// 2-D point mass with velocity damping inside [-1,1]^2 walls. Success when the
// mass passes within 0.05 of the goal. State observation [pos, vel, goal];
// proprio [pos, vel] only, so in pixel mode the goal is visible to the policy
// exclusively through the rendered frame.
class PointReacherEnv : public Env {
 public:
  static constexpr double kFriction = 0.5;
  static constexpr double kSuccessRadius = 0.05;
  static constexpr double kStartRange = 0.8;
  static constexpr double kExpertKp = 6.0;
  static constexpr double kExpertKd = 3.0;

  explicit PointReacherEnv(EnvSpec spec) : Env(std::move(spec)) {
    pos_.setZero();
    vel_.setZero();
    goal_.setZero();
  }

  int action_dim() const override { return 2; }
  int state_dim() const override { return 6; }
  int proprio_dim() const override { return 4; }
  double action_bound_lo(int) const override { return -1.0; }
  double action_bound_hi(int) const override { return 1.0; }
  int default_horizon() const override { return 100; }

  Eigen::VectorXd expert_action() const override {
    Eigen::Vector2d a = kExpertKp * (goal_ - pos_) - kExpertKd * vel_;
    return a.cwiseMax(-1.0).cwiseMin(1.0);
  }

  Eigen::VectorXd ground_truth_state() const override { return state_observation(); }

  void set_state(const Eigen::Vector2d& pos, const Eigen::Vector2d& vel,
                 const Eigen::Vector2d& goal) {
    pos_ = pos;
    vel_ = vel;
    goal_ = goal;
  }

 protected:
  void do_reset(Rng& rng) override {
    pos_ = Eigen::Vector2d(rng.uniform(-kStartRange, kStartRange),
                           rng.uniform(-kStartRange, kStartRange));
    vel_.setZero();
    goal_ = Eigen::Vector2d(rng.uniform(-kStartRange, kStartRange),
                            rng.uniform(-kStartRange, kStartRange));
  }

  void do_step(const Eigen::VectorXd& a) override {
    pos_ += spec_.dt * vel_;
    vel_ += spec_.dt * (a.head<2>() - kFriction * vel_);
    for (int i = 0; i < 2; ++i) {  // mirror reflection at the walls
      if (pos_[i] > 1.0) {
        pos_[i] = 2.0 - pos_[i];
        vel_[i] = -vel_[i];
      } else if (pos_[i] < -1.0) {
        pos_[i] = -2.0 - pos_[i];
        vel_[i] = -vel_[i];
      }
    }
  }

  bool success() const override { return goal_distance() < kSuccessRadius; }
  double dense_reward() const override { return -goal_distance(); }
  double goal_distance() const override { return (pos_ - goal_).norm(); }

  Eigen::VectorXd state_observation() const override {
    Eigen::VectorXd s(6);
    s << pos_, vel_, goal_;
    return s;
  }

  Eigen::VectorXd proprio_observation() const override {
    Eigen::VectorXd p(4);
    p << pos_, vel_;
    return p;
  }

  void render_glyphs(Matrix& frame, double agent_intensity,
                     double goal_intensity) const override {
    // the goal disc is wider than the agent so it stays visible as an annulus
    // when the agent sits on it; otherwise near-goal frames would not carry
    // the goal position at all
    const double side = spec_.pixel_side;
    const auto to_px = [side](double w) { return (w + 1.2) / 2.4 * (side - 1); };
    render_detail::draw_disc(frame, to_px(goal_[0]), to_px(goal_[1]), 3.2, goal_intensity);
    render_detail::draw_disc(frame, to_px(pos_[0]), to_px(pos_[1]), 1.6, agent_intensity);
  }

 private:
  Eigen::Vector2d pos_, vel_, goal_;
};

// Torque-limited pendulum swing-up; angle measured from upright, wrapped to
// (-pi, pi]. Semi-implicit Euler. Success inside the upright band with low
// angular velocity.
class PendulumEnv final : public Env {
 public:
  static constexpr double kGravity = 9.8;
  static constexpr double kTorqueBound = 2.0;
  static constexpr double kSuccessAngle = 0.15;
  static constexpr double kSuccessSpeed = 1.0;

  explicit PendulumEnv(EnvSpec spec) : Env(std::move(spec)) {}

  int action_dim() const override { return 1; }
  int state_dim() const override { return 3; }
  int proprio_dim() const override { return 3; }
  double action_bound_lo(int) const override { return -kTorqueBound; }
  double action_bound_hi(int) const override { return kTorqueBound; }
  int default_horizon() const override { return 200; }

  Eigen::VectorXd expert_action() const override {
    // energy-shaping swing-up, PD balance near the top
    double u;
    if (std::abs(theta_) < 0.35 && std::abs(theta_dot_) < 2.5) {
      u = -kGravity * std::sin(theta_) - 14.0 * theta_ - 4.0 * theta_dot_;
    } else {
      const double energy = 0.5 * theta_dot_ * theta_dot_ + kGravity * std::cos(theta_);
      const double deficit = kGravity - energy;
      if (std::abs(theta_dot_) < 1e-3) {
        u = kTorqueBound;  // kick out of the hanging equilibrium
      } else {
        u = 0.6 * deficit * (theta_dot_ > 0 ? 1.0 : -1.0);
      }
    }
    return Eigen::VectorXd::Constant(1, std::clamp(u, -kTorqueBound, kTorqueBound));
  }

  Eigen::VectorXd ground_truth_state() const override {
    Eigen::Vector2d s(theta_, theta_dot_);
    return s;
  }

  void set_state(double theta, double theta_dot) {
    theta_ = wrap(theta);
    theta_dot_ = theta_dot;
  }

 protected:
  void do_reset(Rng& rng) override {
    theta_ = wrap(M_PI + rng.uniform(-0.1, 0.1));
    theta_dot_ = rng.uniform(-0.1, 0.1);
  }

  void do_step(const Eigen::VectorXd& a) override {
    theta_dot_ += spec_.dt * (kGravity * std::sin(theta_) + a[0]);
    theta_ = wrap(theta_ + spec_.dt * theta_dot_);
  }

  bool success() const override {
    return std::abs(theta_) < kSuccessAngle && std::abs(theta_dot_) < kSuccessSpeed;
  }

  double dense_reward() const override {
    return std::cos(theta_) - 0.01 * theta_dot_ * theta_dot_;
  }

  double goal_distance() const override { return std::abs(theta_); }

  Eigen::VectorXd state_observation() const override {
    Eigen::Vector3d s(std::cos(theta_), std::sin(theta_), theta_dot_);
    return s;
  }

  Eigen::VectorXd proprio_observation() const override { return state_observation(); }

  void render_glyphs(Matrix& frame, double agent_intensity,
                     double goal_intensity) const override {
    const double side = spec_.pixel_side;
    const auto to_px = [side](double w) { return (w + 1.2) / 2.4 * (side - 1); };
    render_detail::draw_disc(frame, to_px(0.0), to_px(1.0), 1.5, goal_intensity);
    render_detail::draw_disc(frame, to_px(std::sin(theta_)), to_px(std::cos(theta_)), 2.0,
                             agent_intensity);
    render_detail::draw_disc(frame, to_px(0.0), to_px(0.0), 1.0, 0.35 * agent_intensity);
  }

 private:
  static double wrap(double angle) {
    while (angle > M_PI) angle -= 2.0 * M_PI;
    while (angle <= -M_PI) angle += 2.0 * M_PI;
    return angle;
  }

  double theta_ = M_PI;
  double theta_dot_ = 0.0;
};

inline std::unique_ptr<Env> make_env(const EnvSpec& spec) {
  switch (spec.id) {
    case EnvId::point_reacher:
      return std::make_unique<PointReacherEnv>(spec);
    case EnvId::pendulum:
      return std::make_unique<PendulumEnv>(spec);
  }
  throw std::invalid_argument("make_env: unknown environment id");
}

}  // namespace dapg
