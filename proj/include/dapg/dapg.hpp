#pragma once

#include <Eigen/Core>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "dapg/advantage.hpp"
#include "dapg/baseline.hpp"
#include "dapg/core.hpp"
#include "dapg/encoders.hpp"
#include "dapg/envs.hpp"
#include "dapg/npg.hpp"
#include "dapg/policy.hpp"
#include "dapg/rng.hpp"

namespace dapg {

struct DapgConfig {
  double lam0 = 0.01;
  double lam1 = 0.95;
  int bc_batch_size = 32;
  int bc_epochs = 5;
  double bc_learning_rate = 0.001;
  int trajectories_per_iteration = 20;
  int horizon = 0;  // 0 -> environment default
  int iterations = 100;
  // Advantages are standardized across the batch before entering the gradient
  // and the demo-weight max; the normalized step makes the update direction
  // invariant to this, so it only rescales the demo weight. Off for ablation.
  bool standardize_advantages = true;
  // A negative batch-max advantage would turn the imitation term repulsive;
  // clamped to zero by default, unclamped behavior available for study.
  bool clamp_negative_weight = true;
  // Demo pairs join the rollout batch in the Fisher metric. Without them the
  // imitation component of g_aug lies in directions the sampled Fisher cannot
  // see, and the normalized step blows up along them (step norm approaches
  // sqrt(delta/damping)); the first few iterations then erase the BC policy.
  bool fisher_include_demos = true;
};

struct BcReport {
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

namespace detail {

// 0.5 * mean over pairs of ||mu(s) - a||^2
inline double bc_loss(const GaussianPolicy& policy, const Matrix& obs, const Matrix& act) {
  const auto ws = mlp_forward_batch(policy.mean_spec, policy.mean_params(), obs);
  return 0.5 * (ws.output() - act).squaredNorm() / static_cast<double>(obs.rows());
}

}  // namespace detail

// Behavior-cloning warm start: Adam minibatch descent on the squared error of
// the policy mean against expert actions. The descent runs against inputs
// standardized by demo statistics -- the weight-init scale assumes unit-scale
// inputs, and five epochs at the shipped rate are only enough under that
// conditioning -- and the standardization is folded back into the first layer
// afterwards, so the returned policy consumes raw observations as before.
// Only mean-net parameters move; log_std is untouched.
inline BcReport bc_pretrain(GaussianPolicy& policy, const DemoSet& demos,
                            const DapgConfig& cfg, Rng& rng) {
  demos.validate();
  const auto [obs, act] = stack_pairs(demos.trajectories);
  require(obs.cols() == policy.obs_dim(), "bc_pretrain: demo obs dim mismatch");
  require(act.cols() == policy.action_dim(), "bc_pretrain: demo action dim mismatch");

  BcReport report;
  report.initial_loss = detail::bc_loss(policy, obs, act);
  report.final_loss = report.initial_loss;
  // already interpolating (zero-loss fixed point) or report-only: strict no-op
  if (report.initial_loss == 0.0 || cfg.bc_epochs <= 0) return report;

  const auto n = obs.rows();
  const MlpSpec& spec = policy.mean_spec;
  const Eigen::RowVectorXd mu = obs.colwise().mean();
  const Eigen::RowVectorXd sigma =
      ((obs.rowwise() - mu).array().square().colwise().sum() / static_cast<double>(n))
          .sqrt()
          .max(1e-3);
  const Matrix obs_std = (obs.rowwise() - mu).array().rowwise() / sigma.array();
  const Eigen::RowVectorXd act_mu = act.colwise().mean();
  const Eigen::RowVectorXd act_sigma =
      ((act.rowwise() - act_mu).array().square().colwise().sum() / static_cast<double>(n))
          .sqrt()
          .max(1e-3);
  const Matrix act_std = (act.rowwise() - act_mu).array().rowwise() / act_sigma.array();

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  const int batch = std::max(1, cfg.bc_batch_size);
  FlatVector mean_params = policy.mean_params();
  AdamState adam(mean_params.size());
  for (int epoch = 0; epoch < cfg.bc_epochs; ++epoch) {
    rng.shuffle(order);
    for (Eigen::Index start = 0; start < n; start += batch) {
      const auto b = std::min<Eigen::Index>(batch, n - start);
      Matrix xb(b, obs.cols()), ab(b, act.cols());
      for (Eigen::Index i = 0; i < b; ++i) {
        xb.row(i) = obs_std.row(order[static_cast<std::size_t>(start + i)]);
        ab.row(i) = act_std.row(order[static_cast<std::size_t>(start + i)]);
      }
      const auto ws = mlp_forward_batch(spec, mean_params, xb);
      const Matrix cot = (ws.output() - ab) / static_cast<double>(b);
      adam.update(mean_params, mlp_grad_sum(spec, mean_params, ws, cot),
                  cfg.bc_learning_rate);
    }
  }

  // fold the input standardization into layer 0: W <- W diag(1/sigma), b <- b - W mu
  {
    WeightViewMut W(mean_params.data(), spec.fan_out(0), spec.fan_in(0));
    W = W * sigma.cwiseInverse().transpose().asDiagonal();
    mean_params.segment(spec.fan_in(0) * spec.fan_out(0), spec.fan_out(0)) -=
        W * mu.transpose();
  }
  // fold the action standardization into the last layer: W <- diag(s) W, b <- s.b + m
  {
    const int last = spec.layer_count() - 1;
    const int off = layer_offset(spec, last);
    WeightViewMut W(mean_params.data() + off, spec.fan_out(last), spec.fan_in(last));
    W = act_sigma.transpose().asDiagonal() * W;
    auto b_last = mean_params.segment(off + spec.fan_in(last) * spec.fan_out(last),
                                      spec.fan_out(last));
    b_last = act_sigma.transpose().cwiseProduct(b_last) + act_mu.transpose();
  }
  FlatVector theta = policy.theta;
  theta.head(policy.mean_param_count()) = mean_params;
  policy.set_theta(std::move(theta));

  report.final_loss = detail::bc_loss(policy, obs, act);
  return report;
}

// w = lam0 * lam1^k * max(advantages). lam1^k is accumulated by repeated
// multiplication so the decay ratio between consecutive k is exactly lam1.
inline double demo_weight(const Eigen::VectorXd& advantages, const DapgConfig& cfg, int k) {
  require(advantages.size() > 0, "demo_weight: empty advantages");
  require(k >= 0, "demo_weight: negative iteration");
  double w = cfg.lam0 * advantages.maxCoeff();
  for (int i = 0; i < k; ++i) w *= cfg.lam1;
  if (cfg.clamp_negative_weight && w < 0.0) w = 0.0;
  return w;
}

// g_aug = policy gradient over the on-policy batch plus w times the mean demo
// score. The demo term is skipped entirely when it vanishes, so the reduction
// to the plain policy gradient is bitwise.
inline FlatVector augmented_gradient(const GaussianPolicy& policy, const Matrix& obs_pi,
                                     const Matrix& act_pi, const Eigen::VectorXd& adv,
                                     const Matrix& obs_demo, const Matrix& act_demo,
                                     double w) {
  FlatVector g = policy_gradient(policy, obs_pi, act_pi, adv);
  if (obs_demo.rows() > 0 && w != 0.0) {
    const ScoreBatch demo_scores(policy, obs_demo, act_demo);
    const double m = static_cast<double>(obs_demo.rows());
    g += demo_scores.weighted_score_sum(Eigen::VectorXd::Constant(obs_demo.rows(), w / m));
  }
  return g;
}

inline FlatVector augmented_gradient(const GaussianPolicy& policy, const Matrix& obs_pi,
                                     const Matrix& act_pi, const Eigen::VectorXd& adv,
                                     const DemoSet& demos, double w) {
  if (demos.trajectories.empty())
    return augmented_gradient(policy, obs_pi, act_pi, adv, Matrix(0, policy.obs_dim()),
                              Matrix(0, policy.action_dim()), w);
  const auto [obs_demo, act_demo] = stack_pairs(demos.trajectories);
  return augmented_gradient(policy, obs_pi, act_pi, adv, obs_demo, act_demo, w);
}

// --- rollout collection -----------------------------------------------------

struct RolloutResult {
  Trajectory trajectory;
  bool succeeded = false;  // success predicate held at some step
};

// One episode under the stochastic policy (or its mean when deterministic),
// run to the horizon unless the task terminates. Observations are stored
// pre-assembled: [encode(raw), proprio].
inline RolloutResult collect_rollout(Env& env, const FrozenEncoder& encoder,
                                     bool include_proprio, const GaussianPolicy& policy,
                                     Rng& rng, bool deterministic = false,
                                     int horizon = 0) {
  const int steps = horizon > 0 ? std::min(horizon, env.horizon()) : env.horizon();
  StepResult sr = env.reset(rng);
  const Eigen::VectorXd empty;
  Eigen::VectorXd obs =
      assemble(encoder, sr.raw, include_proprio ? sr.proprio : empty).assembled;
  RolloutResult out;
  for (int t = 0; t < steps; ++t) {
    const auto [action, log_prob] = policy_act(policy, obs, rng, deterministic);
    sr = env.step(action);
    Transition tr;
    tr.observation = std::move(obs);
    tr.action = action;
    tr.reward = sr.reward;
    tr.log_prob = log_prob;
    tr.done = sr.done;
    out.trajectory.transitions.push_back(std::move(tr));
    out.succeeded = out.succeeded || sr.success;
    obs = assemble(encoder, sr.raw, include_proprio ? sr.proprio : empty).assembled;
    if (sr.done) break;
  }
  out.trajectory.terminal_observation = std::move(obs);
  return out;
}

// raw frames keyed "episode,step", the feature-table bridge format
using FrameTable = std::map<std::string, Eigen::VectorXd>;

// Expert episode. Expert actions carry log_prob 0 (they are not policy
// samples). When a frame sink is given, every raw observation of the episode
// is recorded under its frame key.
inline RolloutResult expert_rollout(Env& env, const FrozenEncoder& encoder,
                                    bool include_proprio, Rng& rng, int horizon = 0,
                                    FrameTable* frame_sink = nullptr) {
  const int steps = horizon > 0 ? std::min(horizon, env.horizon()) : env.horizon();
  StepResult sr = env.reset(rng);
  const Eigen::VectorXd empty;
  const auto sink = [&](const StepResult& step_result) {
    if (frame_sink)
      (*frame_sink)[std::to_string(step_result.raw.episode_id) + "," +
                    std::to_string(step_result.raw.step_index)] = step_result.raw.data;
  };
  sink(sr);
  Eigen::VectorXd obs =
      assemble(encoder, sr.raw, include_proprio ? sr.proprio : empty).assembled;
  RolloutResult out;
  for (int t = 0; t < steps; ++t) {
    const Eigen::VectorXd action = env.expert_action();
    sr = env.step(action);
    sink(sr);
    Transition tr;
    tr.observation = std::move(obs);
    tr.action = action;
    tr.reward = sr.reward;
    tr.log_prob = 0.0;
    tr.done = sr.done;
    out.trajectory.transitions.push_back(std::move(tr));
    out.succeeded = out.succeeded || sr.success;
    obs = assemble(encoder, sr.raw, include_proprio ? sr.proprio : empty).assembled;
    if (sr.done) break;
  }
  out.trajectory.terminal_observation = std::move(obs);
  return out;
}

// Keeps only successful expert episodes, resampling failures; gives up once
// attempts reach 10x the requested count. The optional frame sink receives
// the raw frames of kept episodes only.
inline DemoSet generate_demos(const EnvSpec& env_spec, const FrozenEncoder& encoder,
                              bool include_proprio, int count, Rng& rng,
                              const std::string& source_tag = "scripted_expert",
                              FrameTable* frame_sink = nullptr) {
  require(count >= 0, "generate_demos: negative count");
  DemoSet demos;
  demos.source_tag = source_tag;
  auto env = make_env(env_spec);
  const int max_attempts = std::max(1, 10 * count);
  int attempts = 0;
  while (static_cast<int>(demos.trajectories.size()) < count && attempts < max_attempts) {
    Rng episode_rng = rng.split(static_cast<std::uint64_t>(attempts));
    ++attempts;
    FrameTable episode_frames;
    RolloutResult rollout =
        expert_rollout(*env, encoder, include_proprio, episode_rng, 0,
                       frame_sink ? &episode_frames : nullptr);
    if (rollout.succeeded) {
      demos.trajectories.push_back(std::move(rollout.trajectory));
      if (frame_sink) frame_sink->merge(episode_frames);
    }
  }
  if (static_cast<int>(demos.trajectories.size()) < count)
    throw std::runtime_error("generate_demos: expert failure rate above 50% (" +
                             std::to_string(demos.trajectories.size()) + "/" +
                             std::to_string(count) + " after " +
                             std::to_string(attempts) + " attempts)");
  return demos;
}

// --- evaluation protocol ----------------------------------------------------

struct EvalReport {
  int rollouts = 0;
  double success_rate = 0.0;
  double mean_return = 0.0;
};

// Deterministic-policy evaluation; episode e draws its stream from
// seed_rng.split(e) so runs over different distractor modes see identical
// initial conditions.
inline EvalReport evaluate_policy(const EnvSpec& env_spec, const FrozenEncoder& encoder,
                                  bool include_proprio, const GaussianPolicy& policy,
                                  int rollouts, const Rng& seed_rng) {
  require(rollouts >= 1, "evaluate_policy: need at least one rollout");
  auto env = make_env(env_spec);
  EvalReport report;
  report.rollouts = rollouts;
  for (int e = 0; e < rollouts; ++e) {
    Rng episode_rng = seed_rng.split(static_cast<std::uint64_t>(e));
    const RolloutResult rollout =
        collect_rollout(*env, encoder, include_proprio, policy, episode_rng, true);
    report.success_rate += rollout.succeeded ? 1.0 : 0.0;
    report.mean_return += rollout.trajectory.total_reward();
  }
  report.success_rate /= rollouts;
  report.mean_return /= rollouts;
  return report;
}

// --- the full training loop -------------------------------------------------

struct IterationMetrics;
struct EvalRecord;

struct TrainOptions {
  DapgConfig dapg;
  NpgConfig npg;
  GaeConfig gae;
  ValueFitConfig vf_fit;
  std::vector<int> policy_hidden = {256, 256};
  std::vector<int> value_hidden = {128, 128};
  double init_log_std = 0.0;
  bool include_proprio = true;
  int workers = 1;
  int eval_every = 0;          // 0 = no in-training evaluation
  int eval_rollouts = 75;
  double target_success = 0.0;  // > 0: stop once a scheduled eval reaches it
  // progress hooks, called after each iteration / scheduled evaluation
  std::function<void(const IterationMetrics&)> on_iteration;
  std::function<void(const EvalRecord&)> on_eval;
};

struct IterationMetrics {
  int k = 0;
  double mean_return = 0.0;
  double success_rate = 0.0;  // over this iteration's training rollouts
  double demo_weight = 0.0;
  double quadratic_form = 0.0;
  double cg_residual = 0.0;
  double wall_clock_s = 0.0;
  double collect_s = 0.0;
  double learn_s = 0.0;
  StepStatus step_status = StepStatus::ok;
};

struct EvalRecord {
  int k = 0;  // evaluation ran after iteration k
  double success_rate = 0.0;
  double mean_return = 0.0;
};

struct TrainState {
  int k = 0;
  GaussianPolicy policy;
  ValueFunction vf;
  BcReport bc_report;
  std::vector<IterationMetrics> metrics;
  std::vector<EvalRecord> eval_records;
  FlatVector last_gradient;  // g_aug of the most recent iteration
  int rejected_steps = 0;
  bool aborted = false;
  std::string abort_reason;
};

namespace detail {

// deterministic per-purpose stream ids
inline constexpr std::uint64_t kStreamPolicyInit = 1;
inline constexpr std::uint64_t kStreamValueInit = 2;
inline constexpr std::uint64_t kStreamBc = 3;
inline constexpr std::uint64_t kStreamCollect = 4;
inline constexpr std::uint64_t kStreamVfFit = 5;
inline constexpr std::uint64_t kStreamEval = 6;

inline std::uint64_t stream_id(std::uint64_t tag, std::uint64_t k, std::uint64_t sub = 0) {
  return (tag << 56) ^ (k << 24) ^ sub;
}

// Episode e of iteration k always uses the same stream no matter how many
// workers run, so the collected batch is independent of the thread count.
inline std::vector<RolloutResult> collect_batch(const EnvSpec& env_spec,
                                                const FrozenEncoder& encoder,
                                                bool include_proprio,
                                                const GaussianPolicy& policy, int episodes,
                                                int horizon, int workers, const Rng& master,
                                                std::uint64_t iteration) {
  std::vector<RolloutResult> out(static_cast<std::size_t>(episodes));
  const int nworkers = std::clamp(workers, 1, episodes);
  const auto run = [&](int worker) {
    auto env = make_env(env_spec);
    for (int e = worker; e < episodes; e += nworkers) {
      Rng episode_rng =
          master.split(stream_id(kStreamCollect, iteration, static_cast<std::uint64_t>(e)));
      out[static_cast<std::size_t>(e)] = collect_rollout(
          *env, encoder, include_proprio, policy, episode_rng, false, horizon);
    }
  };
  if (nworkers == 1) {
    run(0);
  } else {
    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(nworkers));
    for (int w = 0; w < nworkers; ++w) threads.emplace_back(run, w);
    for (auto& t : threads) t.join();
  }
  return out;
}

}  // namespace detail

// Demo-accelerated natural policy gradient, end to end:
//   BC warm start, then per iteration: collect on-policy rollouts, GAE
//   advantages against the current value function, decaying demo weight,
//   augmented gradient, normalized NPG step, and finally a value-function
//   refit on this iteration's Monte-Carlo returns.
inline TrainState train(const EnvSpec& env_spec, const FrozenEncoder& encoder,
                        const DemoSet& demos, const TrainOptions& opt, const Rng& master) {
  auto probe = make_env(env_spec);
  const int proprio_dim = opt.include_proprio ? probe->proprio_dim() : 0;
  const int obs_dim = encoder.feature_dim() + proprio_dim;
  const int action_dim = probe->action_dim();
  const int horizon =
      opt.dapg.horizon > 0 ? std::min(opt.dapg.horizon, probe->horizon()) : probe->horizon();

  TrainState state;
  {
    Rng init = master.split(detail::stream_id(detail::kStreamPolicyInit, 0));
    state.policy = GaussianPolicy::make(MlpSpec{obs_dim, opt.policy_hidden, action_dim},
                                        init, opt.init_log_std);
  }
  {
    Rng init = master.split(detail::stream_id(detail::kStreamValueInit, 0));
    state.vf = ValueFunction::make(obs_dim, opt.value_hidden, init, opt.vf_fit);
  }

  if (!demos.trajectories.empty()) {
    require(demos.trajectories.front().transitions.front().observation.size() == obs_dim,
            "train: demo observations do not match the assembled input dim");
    require(demos.trajectories.front().transitions.front().action.size() == action_dim,
            "train: demo actions do not match the env action dim");
    Rng bc_rng = master.split(detail::stream_id(detail::kStreamBc, 0));
    state.bc_report = bc_pretrain(state.policy, demos, opt.dapg, bc_rng);
  }

  Matrix obs_demo(0, obs_dim), act_demo(0, action_dim);
  if (!demos.trajectories.empty())
    std::tie(obs_demo, act_demo) = stack_pairs(demos.trajectories);

  for (int k = 0; k < opt.dapg.iterations; ++k) {
    const auto iter_start = std::chrono::steady_clock::now();
    IterationMetrics m;
    m.k = k;
    try {
      // collect
      const auto collect_start = std::chrono::steady_clock::now();
      const auto rollouts = detail::collect_batch(
          env_spec, encoder, opt.include_proprio, state.policy,
          opt.dapg.trajectories_per_iteration, horizon, opt.workers, master,
          static_cast<std::uint64_t>(k));
      m.collect_s = std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                                  collect_start)
                        .count();
      std::vector<Trajectory> trajs;
      trajs.reserve(rollouts.size());
      for (const auto& r : rollouts) {
        m.mean_return += r.trajectory.total_reward();
        m.success_rate += r.succeeded ? 1.0 : 0.0;
        trajs.push_back(r.trajectory);
      }
      m.mean_return /= static_cast<double>(trajs.size());
      m.success_rate /= static_cast<double>(trajs.size());

      // learn
      const auto learn_start = std::chrono::steady_clock::now();
      const auto [obs_pi, act_pi] = stack_pairs(trajs);
      double reward_lo = trajs.front().transitions.front().reward, reward_hi = reward_lo;
      for (const auto& t : trajs)
        for (const auto& tr : t.transitions) {
          reward_lo = std::min(reward_lo, tr.reward);
          reward_hi = std::max(reward_hi, tr.reward);
        }
      Eigen::VectorXd adv;
      if (reward_hi == reward_lo) {
        // A constant-reward batch (e.g. sparse task, zero successes) carries no
        // policy-performance information; any nonzero advantage would be pure
        // baseline error, which standardization then inflates into a full-size
        // noise step. Force the exact no-op path instead.
        adv = Eigen::VectorXd::Zero(obs_pi.rows());
      } else {
        adv = gae_batch(trajs, state.vf, opt.gae);
        if (opt.dapg.standardize_advantages && adv.size() >= 2) adv = standardize(adv);
      }

      const double w =
          demos.trajectories.empty() ? 0.0 : demo_weight(adv, opt.dapg, k);
      m.demo_weight = w;

      state.last_gradient =
          augmented_gradient(state.policy, obs_pi, act_pi, adv, obs_demo, act_demo, w);
      NpgStep step;
      if (opt.dapg.fisher_include_demos && obs_demo.rows() > 0) {
        Matrix fisher_obs(obs_pi.rows() + obs_demo.rows(), obs_pi.cols());
        Matrix fisher_act(act_pi.rows() + act_demo.rows(), act_pi.cols());
        fisher_obs << obs_pi, obs_demo;
        fisher_act << act_pi, act_demo;
        step = npg_step(state.policy, state.last_gradient, fisher_obs, fisher_act, opt.npg);
      } else {
        step = npg_step(state.policy, state.last_gradient, obs_pi, act_pi, opt.npg);
      }
      m.step_status = step.report.status;
      m.quadratic_form = step.report.quadratic_form;
      m.cg_residual = step.report.cg_residual;
      if (step.report.status == StepStatus::ok) {
        state.policy.set_theta(step.new_theta);
      } else {
        ++state.rejected_steps;
      }

      // value-function update on this iteration's Monte-Carlo returns
      Eigen::VectorXd returns(obs_pi.rows());
      Eigen::Index at = 0;
      for (const auto& t : trajs) {
        returns.segment(at, static_cast<Eigen::Index>(t.length())) =
            discounted_return(t, opt.gae.gamma);
        at += static_cast<Eigen::Index>(t.length());
      }
      Rng vf_rng = master.split(detail::stream_id(detail::kStreamVfFit,
                                                  static_cast<std::uint64_t>(k)));
      vf_fit(state.vf, obs_pi, returns, vf_rng);
      m.learn_s =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - learn_start)
              .count();
    } catch (const std::exception& e) {
      state.aborted = true;
      state.abort_reason = e.what();
      return state;
    }

    m.wall_clock_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - iter_start).count();
    state.metrics.push_back(m);
    state.k = k + 1;
    if (opt.on_iteration) opt.on_iteration(m);

    if (opt.eval_every > 0 && (k + 1) % opt.eval_every == 0) {
      const Rng eval_rng =
          master.split(detail::stream_id(detail::kStreamEval, static_cast<std::uint64_t>(k)));
      const EvalReport report = evaluate_policy(env_spec, encoder, opt.include_proprio,
                                                state.policy, opt.eval_rollouts, eval_rng);
      state.eval_records.push_back({k, report.success_rate, report.mean_return});
      if (opt.on_eval) opt.on_eval(state.eval_records.back());
      if (opt.target_success > 0.0 && report.success_rate >= opt.target_success) break;
    }
  }
  return state;
}

}  // namespace dapg
