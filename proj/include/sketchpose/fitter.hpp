#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "sketchpose/losses.hpp"
#include "sketchpose/random.hpp"
#include "sketchpose/synth.hpp"

namespace sketchpose {

struct FitConfig {
  int max_iters = 500;
  double learning_rate = 0.05;
  double decay = 0.5;      // multiplied into the rate every `decay_every` iterations
  int decay_every = 150;
  double tol = 1e-9;       // relative change of the total between accepted steps
  int restarts = 4;
  LossWeights weights;
  RatioMode ratio_mode = RatioMode::kCosine;
  bool use_3d_supervision = true;  // pose and scale targets, when available
  double init_noise = 0.05;        // radians, per rotation parameter
  std::uint64_t seed = 0;
  int warmup_iters = 150;          // parameter-target stage, see run_restart
  bool keep_traces = true;

  void validate() const {
    if (max_iters < 1) throw ValidationError("max_iters must be at least 1");
    if (!(tol > 0.0)) throw ValidationError("tol must be positive");
    if (restarts < 1) throw ValidationError("restarts must be at least 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
      throw ValidationError("learning_rate must be positive");
    if (!(decay > 0.0 && decay <= 1.0)) throw ValidationError("decay must lie in (0, 1]");
    if (decay_every < 1) throw ValidationError("decay_every must be at least 1");
    if (!(init_noise >= 0.0)) throw ValidationError("init_noise must be non-negative");
    if (warmup_iters < 0) throw ValidationError("warmup_iters must be non-negative");
    weights.validate();
  }
};

/// Ground truth the fitter may use beyond the 2D target.
struct Supervision {
  std::optional<Pose3D> joints3d;  // with `camera`: foreshortening targets
  Camera camera;
  std::optional<PoseParams> pose;
  std::optional<BoneScales> scales;
};

inline Supervision supervision_from_sample(const DatasetSample& s) {
  return {s.joints3d, s.camera, s.pose_params, s.bone_scales};
}

struct FitResult {
  EstimationState state;
  LossBreakdown loss;
  int iterations = 0;
  bool converged = false;
  int restart = 0;  // index of the selected restart
  std::vector<std::vector<double>> traces;  // total per iteration, per restart
};

inline constexpr int kMinFitJoints = 8;

namespace detail {

inline std::array<bool, kNumBones> bone_mask_from(const std::array<bool, kNumJoints>& included,
                                                  const SkeletonTopology& topology) {
  std::array<bool, kNumBones> m{};
  for (int i = 0; i < kNumBones; ++i)
    m[i] = included[topology.bones[i].parent] && included[topology.bones[i].child];
  return m;
}

// Extent and center of the included joints.
inline std::pair<double, Vec2> joint_extent(const Pose2D& p, const std::array<bool, kNumJoints>& inc) {
  Vec2 lo = Vec2::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
  for (int j = 0; j < kNumJoints; ++j) {
    if (!inc[j]) continue;
    lo = lo.cwiseMin(p.joints[j]);
    hi = hi.cwiseMax(p.joints[j]);
  }
  return {(hi - lo).maxCoeff(), 0.5 * (lo + hi)};
}

inline constexpr double kFitScaleLo = kMinBoneScale + 1e-4;
inline constexpr double kFitScaleHi = kMaxBoneScale - 1e-3;

}  // namespace detail

/// Camera whose projection of the rest pose has the target's extent and center.
inline Camera camera_from_target(const Pose2D& target2d, const std::array<bool, kNumJoints>& included,
                                 const SkeletonTopology& topology = canonical_topology()) {
  const Pose2D rest = project(forward_kinematics(topology, PoseParams{}, BoneScales{}), Camera{1.0, 0.0, 0.0});
  const auto [rest_ext, rest_c] = detail::joint_extent(rest, included);
  const auto [tgt_ext, tgt_c] = detail::joint_extent(target2d, included);
  Camera c;
  c.scale = (rest_ext > 1e-9 && tgt_ext > 1e-9) ? tgt_ext / rest_ext : 100.0;
  c.tx = tgt_c.x() - c.scale * rest_c.x();
  c.ty = tgt_c.y() - c.scale * rest_c.y();
  return c;
}

/// Starting state of one restart: rest pose plus seeded rotation noise.
inline EstimationState initial_state(const Pose2D& target2d, const JointLabels& labels,
                                     const FitConfig& config, int restart,
                                     const SkeletonTopology& topology = canonical_topology()) {
  EstimationState s;
  s.camera = camera_from_target(target2d, included_mask(labels), topology);
  if (config.init_noise > 0.0) {
    Rng rng(mix_seed(config.seed) ^ static_cast<std::uint64_t>(restart));
    auto jitter = [&](Vec3& v) {
      for (int k = 0; k < 3; ++k) v[k] += config.init_noise * rng.normal();
    };
    jitter(s.pose.root_orientation);
    for (auto& r : s.pose.joint_rotations) jitter(r);
  }
  return s;
}

namespace detail {

// Adam with step rejection: a step that raises the total is undone and the
// rate is halved; accepted steps let the rate recover
// by 10% up to the scheduled value. Iterations are numbered globally so the
// decay schedule runs across stages.
struct Descent {
  StateVector x;
  LossBreakdown cur;
  int iteration = 0;
  bool converged = false;
  double factor = 1.0;  // step-length multiplier, carried across stages
};

inline void descend(Descent& d, const LossTargets& targets, const LossWeights& weights, int last_iter,
                    const FitConfig& cfg, const SkeletonTopology& topology, std::vector<double>* trace) {
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  constexpr double kMinRateFactor = 1e-5;
  constexpr int kResetAfter = 2;
  constexpr double kStationary = 1e-12;
  d.converged = false;
  d.cur = total_loss(unpack(d.x), targets, weights, topology, cfg.ratio_mode);
  StateVector m = StateVector::Zero(), v = StateVector::Zero();
  int t = 0, rejections = 0;
  double& factor = d.factor;
  while (d.iteration < last_iter) {
    if (d.cur.gradient.lpNorm<Eigen::Infinity>() < kStationary) {
      d.converged = true;
      return;
    }
    const int it = ++d.iteration;
    const double lr = cfg.learning_rate * std::pow(cfg.decay, (it - 1) / cfg.decay_every) * factor;
    const StateVector& g = d.cur.gradient;
    ++t;
    m = kBeta1 * m + (1.0 - kBeta1) * g;
    v = kBeta2 * v + (1.0 - kBeta2) * g.cwiseProduct(g);
    const double c1 = 1.0 - std::pow(kBeta1, t), c2 = 1.0 - std::pow(kBeta2, t);
    StateVector xn = d.x - lr * ((m / c1).array() / ((v / c2).array().sqrt() + kEps)).matrix();
    for (int i = 0; i < kNumBones; ++i)
      xn[layout::kBoneScales + i] = std::clamp(xn[layout::kBoneScales + i], kFitScaleLo, kFitScaleHi);

    const LossBreakdown next = total_loss(unpack(xn), targets, weights, topology, cfg.ratio_mode);
    // Relative change, with a floor so totals at rounding level count as settled.
    const bool small = std::abs(d.cur.total - next.total) <= cfg.tol * std::max(d.cur.total, 1e-6);
    bool stop = small;
    if (next.total <= d.cur.total) {
      d.x = xn;
      d.cur = next;
      factor = std::min(1.0, factor * 1.1);
      rejections = 0;
    } else {
      factor *= 0.5;
      // At an L1 kink the momentum direction can stop being a descent
      // direction for every step length; start the moments afresh.
      if (++rejections % kResetAfter == 0) {
        m.setZero();
        v.setZero();
        t = 0;
      }
      // No descent at any usable step length: stationary to step resolution.
      stop = stop || factor < kMinRateFactor;
    }
    if (trace) trace->push_back(d.cur.total);
    if (stop) {
      d.converged = true;
      return;
    }
  }
}

struct RestartOutcome {
  EstimationState state;
  LossBreakdown loss;
  int iterations = 0;
  bool converged = false;
  std::vector<double> trace;
};

// The 2D terms pin each bone's direction only up to a flip in depth, so a
// start far from the answer can settle in a mirrored basin that the weak
// parameter terms cannot climb out of. When pose or scale targets are active
// the first stage descends those terms alone; the full objective then takes
// over from there for the remaining iterations. Traces hold full-objective
// totals only for the second stage; the first stage logs its own objective.
inline RestartOutcome run_restart(const EstimationState& init, const LossTargets& targets,
                                  const FitConfig& cfg, const SkeletonTopology& topology) {
  RestartOutcome out;
  std::vector<double>* trace = cfg.keep_traces ? &out.trace : nullptr;
  if (trace) trace->reserve(cfg.max_iters);
  Descent d{pack(init), {}, 0, false, 1.0};

  LossWeights direct = cfg.weights;
  direct.parallel = direct.foreshortening = 0.0;
  const bool staged = cfg.warmup_iters > 0 && !direct.all_zero() &&
                      ((direct.pose > 0.0 && targets.pose) || (direct.shape > 0.0 && targets.scales)) &&
                      !(cfg.weights.parallel == 0.0 && cfg.weights.foreshortening == 0.0);
  if (staged) descend(d, targets, direct, std::min(cfg.warmup_iters, cfg.max_iters - 1), cfg, topology, trace);
  descend(d, targets, cfg.weights, cfg.max_iters, cfg, topology, trace);

  // The selected state never scores worse than where it started.
  const LossBreakdown start = total_loss(init, targets, cfg.weights, topology, cfg.ratio_mode);
  if (start.total < d.cur.total) {
    d.x = pack(init);
    d.cur = start;
  }
  out.state = unpack(d.x);
  out.loss = d.cur;
  out.iterations = d.iteration;
  out.converged = d.converged;
  return out;
}

}  // namespace detail

/// Loss targets for a fit: 2D joints with excluded bones masked, plus whatever
/// supervision the config allows.
inline LossTargets fit_targets(const Pose2D& target2d, const JointLabels& labels, const FitConfig& config,
                               const std::optional<Supervision>& supervision,
                               const SkeletonTopology& topology = canonical_topology()) {
  LossTargets t;
  t.joints2d = target2d;
  t.bone_mask = detail::bone_mask_from(included_mask(labels), topology);
  if (supervision) {
    t.joints3d = supervision->joints3d;
    t.camera = supervision->camera;
    if (config.use_3d_supervision) {
      t.pose = supervision->pose;
      t.scales = supervision->scales;
    }
  }
  return t;
}

/// Recovers pose, bone scales and camera from 2D joints by minimizing the
/// total loss from several perturbed rest-pose starts.
///
/// `init`, when given, replaces the rest-pose start of restart 0 exactly.
inline FitResult fit_pose(const Pose2D& target2d, const JointLabels& labels, const FitConfig& config,
                          const std::optional<Supervision>& supervision = std::nullopt,
                          const std::optional<EstimationState>& init = std::nullopt,
                          const SkeletonTopology& topology = canonical_topology()) {
  config.validate();
  if (count_included(labels) < kMinFitJoints)
    throw ValidationError("fit needs at least 8 included joints");
  if (!all_finite(target2d)) throw ValidationError("target joints are not finite");
  const LossTargets targets = fit_targets(target2d, labels, config, supervision, topology);

  FitResult best;
  double best_total = std::numeric_limits<double>::infinity();
  for (int r = 0; r < config.restarts; ++r) {
    const EstimationState start =
        (r == 0 && init) ? *init : initial_state(target2d, labels, config, r, topology);
    detail::RestartOutcome o = detail::run_restart(start, targets, config, topology);
    if (o.loss.total < best_total) {
      best_total = o.loss.total;
      best.state = o.state;
      best.loss = o.loss;
      best.iterations = o.iterations;
      best.converged = o.converged;
      best.restart = r;
    }
    if (config.keep_traces) best.traces.push_back(std::move(o.trace));
  }
  return best;
}

/// One entry per input sample: a result or the error that stopped it.
struct BatchEntry {
  std::optional<FitResult> result;
  std::string error;
};

/// 2D target used when fitting a dataset sample.
enum class FitTarget { kPerturbed, kClean };

/// Independent fits over a dataset, order preserving. Errors are recorded
/// per sample and the batch carries on.
inline std::vector<BatchEntry> fit_batch(const std::vector<DatasetSample>& samples, const FitConfig& config,
                                         FitTarget target = FitTarget::kPerturbed, int threads = 1,
                                         const SkeletonTopology& topology = canonical_topology()) {
  std::vector<BatchEntry> out(samples.size());
  auto work = [&](std::size_t k) {
    const DatasetSample& s = samples[k];
    try {
      out[k].result = fit_pose(target == FitTarget::kClean ? s.joints2d_clean : s.joints2d_perturbed,
                               s.labels, config, supervision_from_sample(s), std::nullopt, topology);
    } catch (const std::exception& e) {
      out[k].error = e.what();
    }
  };
  threads = std::max(1, threads);
  if (threads == 1 || samples.size() < 2) {
    for (std::size_t k = 0; k < samples.size(); ++k) work(k);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (int w = 0; w < threads; ++w)
    pool.emplace_back([&] {
      for (std::size_t k; (k = next.fetch_add(1)) < samples.size();) work(k);
    });
  for (auto& th : pool) th.join();
  return out;
}

}  // namespace sketchpose
