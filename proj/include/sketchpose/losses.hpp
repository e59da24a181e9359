#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>

#include "sketchpose/projection.hpp"
#include "sketchpose/random.hpp"
#include "sketchpose/rotation.hpp"
#include "sketchpose/skeleton.hpp"

namespace sketchpose {

// ---------------------------------------------------------------------------
// Estimation state and its flat layout

/// Everything the fitter and regressor estimate.
struct EstimationState {
  PoseParams pose;
  BoneScales scales;
  Camera camera;

  bool operator==(const EstimationState&) const = default;
};

/// Offsets into the flat parameter vector.
namespace layout {
inline constexpr int kRootOrientation = 0;
inline constexpr int kJointRotations = 3;  // 16 x 3, joint order
inline constexpr int kRootPosition = kJointRotations + 3 * kNumJoints;  // 51
inline constexpr int kBoneScales = kRootPosition + 3;                  // 54
inline constexpr int kCamera = kBoneScales + kNumBones;                // 69: scale, tx, ty
inline constexpr int kStateSize = kCamera + 3;                         // 72
}  // namespace layout

using StateVector = Eigen::Matrix<double, layout::kStateSize, 1>;

inline StateVector pack(const EstimationState& s) {
  StateVector v;
  v.segment<3>(layout::kRootOrientation) = s.pose.root_orientation;
  for (int j = 0; j < kNumJoints; ++j)
    v.segment<3>(layout::kJointRotations + 3 * j) = s.pose.joint_rotations[j];
  v.segment<3>(layout::kRootPosition) = s.pose.root_position;
  for (int i = 0; i < kNumBones; ++i) v[layout::kBoneScales + i] = s.scales.scales[i];
  v[layout::kCamera] = s.camera.scale;
  v[layout::kCamera + 1] = s.camera.tx;
  v[layout::kCamera + 2] = s.camera.ty;
  return v;
}

inline EstimationState unpack(const StateVector& v) {
  EstimationState s;
  s.pose.root_orientation = v.segment<3>(layout::kRootOrientation);
  for (int j = 0; j < kNumJoints; ++j)
    s.pose.joint_rotations[j] = v.segment<3>(layout::kJointRotations + 3 * j);
  s.pose.root_position = v.segment<3>(layout::kRootPosition);
  for (int i = 0; i < kNumBones; ++i) s.scales.scales[i] = v[layout::kBoneScales + i];
  s.camera.scale = v[layout::kCamera];
  s.camera.tx = v[layout::kCamera + 1];
  s.camera.ty = v[layout::kCamera + 2];
  return s;
}

// ---------------------------------------------------------------------------
// Weights, targets, breakdown

struct LossWeights {
  double parallel = 3.0;
  double foreshortening = 3.0;
  double pose = 2.0;
  double shape = 1.0;

  void validate() const {
    for (double w : {parallel, foreshortening, pose, shape})
      if (!std::isfinite(w) || w < 0.0) throw ValidationError("loss weights must be finite and >= 0");
  }
  bool all_zero() const {
    return parallel == 0.0 && foreshortening == 0.0 && pose == 0.0 && shape == 0.0;
  }
};

/// Ground truth a state is compared against. Terms whose target is absent
/// are skipped.
struct LossTargets {
  Pose2D joints2d;                       // parallelism target
  std::optional<Pose3D> joints3d;        // with `camera`, gives foreshortening targets
  Camera camera;                         // camera under which joints2d was formed
  std::optional<PoseParams> pose;
  std::optional<BoneScales> scales;
  std::array<bool, kNumBones> bone_mask = all_bones();

  static std::array<bool, kNumBones> all_bones() {
    std::array<bool, kNumBones> m;
    m.fill(true);
    return m;
  }
};

struct LossBreakdown {
  double parallel = 0.0;
  double foreshortening = 0.0;
  double pose = 0.0;
  double shape = 0.0;
  double total = 0.0;
  StateVector gradient = StateVector::Zero();
};

// ---------------------------------------------------------------------------
// Individual terms on poses

namespace detail {

// (g_hat . n)^2 with n the unit normal of q, and its gradient with respect to q.
inline double parallel_term(const Vec2& g_unit, const Vec2& q, Vec2* dq) {
  const double q2 = q.squaredNorm();
  const double c = g_unit.x() * q.y() - g_unit.y() * q.x();
  if (dq) *dq = (2.0 * c / q2) * Vec2(-g_unit.y(), g_unit.x()) - (2.0 * c * c / (q2 * q2)) * q;
  return c * c / q2;
}

}  // namespace detail

/// Sum over bones of (b_gt/|b_gt| . n_pred)^2, n_pred the +90 degree normal
/// of the unit predicted bone. Bones shorter than 1e-6 px on either side are
/// skipped.
inline double loss_parallel(const Pose2D& gt2d, const Pose2D& pred2d,
                            const SkeletonTopology& topology = canonical_topology(),
                            const std::array<bool, kNumBones>& mask = LossTargets::all_bones()) {
  const auto g = bone_vectors(topology, gt2d);
  const auto p = bone_vectors(topology, pred2d);
  double sum = 0.0;
  for (int i = 0; i < kNumBones; ++i) {
    if (!mask[i]) continue;
    const double gl = g[i].norm(), pl = p[i].norm();
    if (gl < kDegenerateBone2d || pl < kDegenerateBone2d) continue;
    const Vec2 pu = p[i] / pl;
    const Vec2 n(-pu.y(), pu.x());
    const double d = (g[i] / gl).dot(n);
    sum += d * d;
  }
  return sum;
}

/// Per-bone foreshortening ratios; NaN marks a bone with a degenerate 2D length.
inline std::array<double, kNumBones> bone_ratios(const Pose3D& pose3d, const Pose2D& pose2d,
                                                 const Camera& camera, RatioMode mode,
                                                 const SkeletonTopology& topology = canonical_topology()) {
  const auto b3 = bone_vectors(topology, pose3d);
  const auto b2 = bone_vectors(topology, pose2d);
  std::array<double, kNumBones> r;
  for (int i = 0; i < kNumBones; ++i) {
    if (b2[i].norm() < kDegenerateBone2d)
      r[i] = std::numeric_limits<double>::quiet_NaN();
    else
      r[i] = foreshortening_ratio(b3[i], b2[i], camera, mode);
  }
  return r;
}

/// Sum of squared ratio differences over bones where both ratios exist.
inline double loss_foreshortening_ratios(std::span<const double, kNumBones> gt,
                                         std::span<const double, kNumBones> pred,
                                         const std::array<bool, kNumBones>& mask = LossTargets::all_bones()) {
  double sum = 0.0;
  for (int i = 0; i < kNumBones; ++i) {
    if (!mask[i] || std::isnan(gt[i]) || std::isnan(pred[i])) continue;
    const double d = gt[i] - pred[i];
    sum += d * d;
  }
  return sum;
}

inline double loss_foreshortening(const Pose3D& gt3d, const Pose2D& gt2d, const Camera& gt_camera,
                                  const Pose3D& pred3d, const Pose2D& pred2d,
                                  const Camera& pred_camera, RatioMode mode,
                                  const SkeletonTopology& topology = canonical_topology()) {
  const auto rg = bone_ratios(gt3d, gt2d, gt_camera, mode, topology);
  const auto rp = bone_ratios(pred3d, pred2d, pred_camera, mode, topology);
  return loss_foreshortening_ratios(rg, rp);
}

/// Mean absolute difference of canonicalized rotation parameters.
inline double loss_pose(const PoseParams& pred, const PoseParams& gt) {
  double sum = 0.0;
  auto block = [&](const Vec3& a, const Vec3& b) {
    sum += (canonicalize(a) - canonicalize(b)).cwiseAbs().sum();
  };
  block(pred.root_orientation, gt.root_orientation);
  for (int j = 0; j < kNumJoints; ++j) block(pred.joint_rotations[j], gt.joint_rotations[j]);
  return sum / PoseParams::kNumRotationParams;
}

inline double loss_shape(const BoneScales& pred, const BoneScales& gt) {
  double sum = 0.0;
  for (int i = 0; i < kNumBones; ++i) sum += std::abs(pred.scales[i] - gt.scales[i]);
  return sum / kNumBones;
}

// ---------------------------------------------------------------------------
// Weighted objective with analytic gradient

namespace detail {

inline double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

inline void check_finite(double v, const char* term) {
  if (!std::isfinite(v)) throw NumericalError(std::string("non-finite value in ") + term + " loss");
}

}  // namespace detail

/// Evaluates the weighted objective for `state` and its gradient over the
/// flat layout (see `layout`).
///
/// Predicted 2D bones are scale * (bx, -by) of the predicted 3D bones. Both
/// the parallelism and foreshortening terms are invariant to the camera, so
/// they are computed from the 3D bones directly and the camera gradient is
/// exactly zero; likewise the root translation. A term with weight 0 or no
/// target is not evaluated.
inline LossBreakdown total_loss(const EstimationState& state, const LossTargets& targets,
                                const LossWeights& weights,
                                const SkeletonTopology& topology = canonical_topology(),
                                RatioMode mode = RatioMode::kCosine, bool with_gradient = true) {
  weights.validate();
  state.camera.validate();
  LossBreakdown out;

  const bool use_parallel = weights.parallel > 0.0;
  const bool use_fore = weights.foreshortening > 0.0 && targets.joints3d.has_value();
  const bool need_fk = use_parallel || use_fore;

  std::array<Vec3, kNumJoints> d_joints;
  d_joints.fill(Vec3::Zero());
  std::optional<FkCache> cache;
  if (need_fk) {
    cache = forward_kinematics_cached(topology, state.pose, state.scales);
    const auto gt_b2 = bone_vectors(topology, targets.joints2d);
    std::array<double, kNumBones> gt_ratio{};
    if (use_fore) {
      const auto gt_b3 = bone_vectors(topology, *targets.joints3d);
      for (int i = 0; i < kNumBones; ++i)
        gt_ratio[i] = gt_b2[i].norm() < kDegenerateBone2d
                          ? std::numeric_limits<double>::quiet_NaN()
                          : foreshortening_ratio(gt_b3[i], gt_b2[i], targets.camera, mode);
    }
    for (int i = 0; i < kNumBones; ++i) {
      if (!targets.bone_mask[i]) continue;
      const Bone& bone = topology.bones[i];
      const Vec3 b = cache->relative[bone.child] - cache->relative[bone.parent];
      const Vec2 q(b.x(), -b.y());
      const double qn = q.norm();
      if (state.camera.scale * qn < kDegenerateBone2d) continue;
      const double gn = gt_b2[i].norm();
      if (gn < kDegenerateBone2d) continue;

      Vec3 db = Vec3::Zero();
      if (use_parallel) {
        Vec2 dq;
        out.parallel += detail::parallel_term(gt_b2[i] / gn, q, with_gradient ? &dq : nullptr);
        if (with_gradient) db += weights.parallel * Vec3(dq.x(), -dq.y(), 0.0);
      }
      if (use_fore) {
        const double a = q.squaredNorm();
        const double m = b.squaredNorm();
        const double bz2 = b.z() * b.z();
        double r = 0.0;
        Vec3 dr = Vec3::Zero();
        if (mode == RatioMode::kCosine) {
          r = std::sqrt(a / m);
          if (r >= 1.0) {
            r = 1.0;
          } else {
            const double k = 1.0 / (r * m * m);
            dr = Vec3(b.x() * bz2 * k, b.y() * bz2 * k, -a * b.z() * k);
          }
        } else {
          r = std::sqrt(m / a);
          const double k = 1.0 / (r * a * a);
          dr = Vec3(-b.x() * bz2 * k, -b.y() * bz2 * k, b.z() * a * k);
        }
        const double diff = gt_ratio[i] - r;
        out.foreshortening += diff * diff;
        if (with_gradient) db += weights.foreshortening * (-2.0 * diff) * dr;
      }
      d_joints[bone.child] += db;
      d_joints[bone.parent] -= db;
    }
    detail::check_finite(out.parallel, "parallel");
    detail::check_finite(out.foreshortening, "foreshortening");
  }

  if (with_gradient && cache) {
    const FkGradient g = forward_kinematics_backward(topology, state.pose, state.scales, *cache, d_joints);
    out.gradient.segment<3>(layout::kRootOrientation) = g.root_orientation;
    for (int j = 0; j < kNumJoints; ++j)
      out.gradient.segment<3>(layout::kJointRotations + 3 * j) = g.joint_rotations[j];
    // Every term sees bone differences only, so the root translation has an
    // identically zero derivative; g.root_position is that zero plus rounding.
    out.gradient.segment<3>(layout::kRootPosition).setZero();
    for (int i = 0; i < kNumBones; ++i) out.gradient[layout::kBoneScales + i] = g.scales[i];
  }

  if (weights.pose > 0.0 && targets.pose) {
    constexpr double inv = 1.0 / PoseParams::kNumRotationParams;
    auto block = [&](const Vec3& pred, const Vec3& gt, int offset) {
      const Vec3 d = canonicalize(pred) - canonicalize(gt);
      out.pose += d.cwiseAbs().sum() * inv;
      if (with_gradient) {
        const Vec3 s(detail::sign(d.x()), detail::sign(d.y()), detail::sign(d.z()));
        out.gradient.segment<3>(offset) +=
            weights.pose * inv * (canonicalize_jacobian(pred).transpose() * s);
      }
    };
    block(state.pose.root_orientation, targets.pose->root_orientation, layout::kRootOrientation);
    for (int j = 0; j < kNumJoints; ++j)
      block(state.pose.joint_rotations[j], targets.pose->joint_rotations[j],
            layout::kJointRotations + 3 * j);
    detail::check_finite(out.pose, "pose");
  }

  if (weights.shape > 0.0 && targets.scales) {
    constexpr double inv = 1.0 / kNumBones;
    for (int i = 0; i < kNumBones; ++i) {
      const double d = state.scales.scales[i] - targets.scales->scales[i];
      out.shape += std::abs(d) * inv;
      if (with_gradient) out.gradient[layout::kBoneScales + i] += weights.shape * inv * detail::sign(d);
    }
    detail::check_finite(out.shape, "shape");
  }

  out.total = weights.parallel * out.parallel + weights.foreshortening * out.foreshortening +
              weights.pose * out.pose + weights.shape * out.shape;
  if (with_gradient && !out.gradient.allFinite())
    throw NumericalError("non-finite gradient of the total loss");
  return out;
}

// ---------------------------------------------------------------------------
// Finite-difference verification

struct GradientReport {
  StateVector analytic = StateVector::Zero();
  StateVector numeric = StateVector::Zero();
  StateVector relative_error = StateVector::Zero();
  double max_relative_error = 0.0;
  int worst_index = -1;
};

/// Relative error used throughout: |a - n| / max(|a|, |n|), or 0 when both
/// magnitudes are below `abs_floor`.
inline double gradient_relative_error(double a, double n, double abs_floor = 1e-10) {
  const double m = std::max(std::abs(a), std::abs(n));
  if (m < abs_floor) return 0.0;
  return std::abs(a - n) / m;
}

/// Compares the analytic gradient with central differences of step h.
inline GradientReport check_gradients(const EstimationState& state, const LossTargets& targets,
                                      const LossWeights& weights, double h,
                                      const SkeletonTopology& topology = canonical_topology(),
                                      RatioMode mode = RatioMode::kCosine) {
  if (!(h > 1e-8 && h < 1e-3)) throw ValidationError("finite-difference step must lie in (1e-8, 1e-3)");
  GradientReport rep;
  rep.analytic = total_loss(state, targets, weights, topology, mode).gradient;
  const StateVector x = pack(state);
  for (int k = 0; k < layout::kStateSize; ++k) {
    StateVector xp = x, xm = x;
    xp[k] += h;
    xm[k] -= h;
    const double fp = total_loss(unpack(xp), targets, weights, topology, mode, false).total;
    const double fm = total_loss(unpack(xm), targets, weights, topology, mode, false).total;
    rep.numeric[k] = (fp - fm) / (2.0 * h);
    rep.relative_error[k] = gradient_relative_error(rep.analytic[k], rep.numeric[k]);
    if (rep.worst_index < 0 || rep.relative_error[k] > rep.max_relative_error) {
      rep.max_relative_error = rep.relative_error[k];
      rep.worst_index = k;
    }
  }
  return rep;
}

/// Targets built from a generating state: clean projection, its 3D joints,
/// its pose and scales.
inline LossTargets targets_from_state(const EstimationState& s,
                                      const SkeletonTopology& topology = canonical_topology()) {
  LossTargets t;
  t.joints3d = forward_kinematics(topology, s.pose, s.scales);
  t.joints2d = project(*t.joints3d, s.camera);
  t.camera = s.camera;
  t.pose = s.pose;
  t.scales = s.scales;
  return t;
}

/// True when some pose or scale residual lies within `margin` of zero. The L1
/// terms have a kink there and a central difference straddling it is not a
/// derivative estimate.
inline bool near_l1_kink(const EstimationState& state, const LossTargets& targets, double margin = 1e-3) {
  auto close = [&](const Vec3& a, const Vec3& b) {
    return ((canonicalize(a) - canonicalize(b)).cwiseAbs().array() < margin).any();
  };
  if (targets.pose) {
    if (close(state.pose.root_orientation, targets.pose->root_orientation)) return true;
    for (int j = 0; j < kNumJoints; ++j)
      if (close(state.pose.joint_rotations[j], targets.pose->joint_rotations[j])) return true;
  }
  if (targets.scales)
    for (int i = 0; i < kNumBones; ++i)
      if (std::abs(state.scales.scales[i] - targets.scales->scales[i]) < margin) return true;
  return false;
}

/// Unconstrained random state: rotations in [-1.2, 1.2] per component, scales
/// in [0.7, 1.3], a camera that keeps the figure roughly in frame.
inline EstimationState random_state(Rng& rng) {
  EstimationState s;
  auto v3 = [&](double lo, double hi) { return Vec3(rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)); };
  s.pose.root_orientation = v3(-1.2, 1.2);
  for (auto& r : s.pose.joint_rotations) r = v3(-1.2, 1.2);
  s.pose.root_position = v3(-1.0, 1.0);
  for (double& v : s.scales.scales) v = rng.uniform(0.7, 1.3);
  s.camera = {rng.uniform(80.0, 120.0), rng.uniform(60.0, 130.0), rng.uniform(80.0, 170.0)};
  return s;
}

struct GradientSweep {
  int checked = 0;
  int skipped = 0;  // states next to an L1 kink
  double max_relative_error = 0.0;
  std::uint64_t worst_case = 0;
};

/// Gradient check over `count` random (state, targets) pairs drawn from
/// consecutive case seeds starting at `seed`; targets come from an
/// independent random state with perturbed 2D joints. Kink states are
/// replaced by the next case.
inline GradientSweep sweep_gradients(int count, std::uint64_t seed, double h,
                                     RatioMode mode = RatioMode::kCosine,
                                     const LossWeights& weights = {},
                                     const SkeletonTopology& topology = canonical_topology()) {
  GradientSweep out;
  for (std::uint64_t c = seed; out.checked < count; ++c) {
    Rng rng(c);
    const EstimationState st = random_state(rng);
    const EstimationState gt = random_state(rng);
    LossTargets t = targets_from_state(gt, topology);
    t.joints2d = perturb_projection(t.joints2d, topology, PerturbationSpec{0.25, c}).first;
    if (near_l1_kink(st, t)) {
      ++out.skipped;
      continue;
    }
    ++out.checked;
    const double e = check_gradients(st, t, weights, h, topology, mode).max_relative_error;
    if (e > out.max_relative_error) {
      out.max_relative_error = e;
      out.worst_case = c;
    }
  }
  return out;
}

}  // namespace sketchpose
