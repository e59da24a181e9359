#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <functional>
#include <limits>
#include <string_view>
#include <vector>

#include "sketchpose/projection.hpp"
#include "sketchpose/random.hpp"
#include "sketchpose/skeleton.hpp"

namespace sketchpose {

enum class JointLabel { kVisible, kInvisible, kNotIncluded };

using JointLabels = std::array<JointLabel, kNumJoints>;

inline std::string_view to_string(JointLabel l) {
  switch (l) {
    case JointLabel::kVisible: return "visible";
    case JointLabel::kInvisible: return "invisible";
    case JointLabel::kNotIncluded: return "not-included";
  }
  return "?";
}

inline JointLabel parse_joint_label(std::string_view s) {
  if (s == "visible") return JointLabel::kVisible;
  if (s == "invisible") return JointLabel::kInvisible;
  if (s == "not-included") return JointLabel::kNotIncluded;
  throw ValidationError("unknown joint label");
}

inline JointLabels all_visible() {
  JointLabels l;
  l.fill(JointLabel::kVisible);
  return l;
}

inline std::array<bool, kNumJoints> included_mask(const JointLabels& labels) {
  std::array<bool, kNumJoints> m{};
  for (int j = 0; j < kNumJoints; ++j) m[j] = labels[j] != JointLabel::kNotIncluded;
  return m;
}

inline int count_included(const JointLabels& labels) {
  int n = 0;
  for (auto l : labels) n += l != JointLabel::kNotIncluded;
  return n;
}

struct BBox {
  double x = 0.0, y = 0.0, w = 0.0, h = 0.0;
  bool operator==(const BBox&) const = default;

  bool contains(const Vec2& p, double slack = 0.0) const {
    return p.x() >= x - slack && p.x() <= x + w + slack && p.y() >= y - slack &&
           p.y() <= y + h + slack;
  }
};

// ---------------------------------------------------------------------------
// Sampler configuration

struct RotationLimits {
  Vec3 lo = Vec3::Zero();
  Vec3 hi = Vec3::Zero();
};

struct SamplerConfig {
  RotationLimits root;
  std::array<RotationLimits, kNumJoints> joints{};
  double scale_jitter = 0.10;  // bone scales drawn from 1 +- jitter
  double camera_scale_min = 85.0;
  double camera_scale_max = 115.0;
  double center_jitter = 8.0;  // pixels
  PerturbationSpec perturbation{};
  std::array<double, kNumBones> capsule_radii{};
  double bbox_margin = 0.10;

  void validate() const {
    auto ordered = [](const RotationLimits& l) { return (l.lo.array() <= l.hi.array()).all(); };
    if (!ordered(root)) throw ValidationError("root rotation limits not ordered");
    for (const auto& l : joints)
      if (!ordered(l)) throw ValidationError("joint rotation limits not ordered");
    if (!(scale_jitter >= 0.0 && 1.0 - scale_jitter > kMinBoneScale &&
          1.0 + scale_jitter < kMaxBoneScale))
      throw ValidationError("scale_jitter out of range");
    if (!(camera_scale_min > 0.0 && camera_scale_min <= camera_scale_max))
      throw ValidationError("camera scale range invalid");
    if (!(center_jitter >= 0.0)) throw ValidationError("center_jitter must be non-negative");
    perturbation.validate();
    for (double r : capsule_radii)
      if (!(r > 0.0)) throw ValidationError("capsule radii must be positive");
    if (!(bbox_margin >= 0.0)) throw ValidationError("bbox margin must be non-negative");
  }
};

/// Torso bones (neck to hips) get the wider capsule.
inline std::array<double, kNumBones> default_capsule_radii() {
  std::array<double, kNumBones> r;
  r.fill(0.05);
  const auto& t = canonical_topology();
  for (int i = 0; i < kNumBones; ++i)
    if (t.bones[i].parent == kNeck && (t.bones[i].child == kLHip || t.bones[i].child == kRHip))
      r[i] = 0.09;
  return r;
}

/// Default anatomical limit boxes (axis-angle components, radians).
///
/// Left limbs are on +x; positive rotation about x swings a hanging limb
/// toward the camera.
inline SamplerConfig default_sampler_config() {
  SamplerConfig c;
  c.root = {{-0.25, -1.0, -0.15}, {0.25, 1.0, 0.15}};
  c.joints[kNeck] = {{-0.3, -0.4, -0.3}, {0.3, 0.4, 0.3}};
  c.joints[kLShoulder] = {{-0.5, -0.5, 0.0}, {1.5, 0.5, 2.2}};
  c.joints[kRShoulder] = {{-0.5, -0.5, -2.2}, {1.5, 0.5, 0.0}};
  c.joints[kLElbow] = {{0.0, -0.3, -0.2}, {2.0, 0.3, 0.2}};
  c.joints[kRElbow] = {{0.0, -0.3, -0.2}, {2.0, 0.3, 0.2}};
  c.joints[kLHip] = {{-0.3, -0.3, -0.1}, {1.4, 0.3, 0.6}};
  c.joints[kRHip] = {{-0.3, -0.3, -0.6}, {1.4, 0.3, 0.1}};
  c.joints[kLKnee] = {{-2.0, -0.1, -0.1}, {0.0, 0.1, 0.1}};
  c.joints[kRKnee] = {{-2.0, -0.1, -0.1}, {0.0, 0.1, 0.1}};
  c.joints[kLAnkle] = {{-0.4, -0.2, -0.2}, {0.4, 0.2, 0.2}};
  c.joints[kRAnkle] = {{-0.4, -0.2, -0.2}, {0.4, 0.2, 0.2}};
  // Head, wrists and toes are leaves: their rotation moves nothing.
  c.capsule_radii = default_capsule_radii();
  return c;
}

struct SampledPose {
  PoseParams pose;
  BoneScales scales;
  Camera camera;
};

/// Draws a pose uniformly inside the limit boxes, bone scales from
/// 1 +- jitter and a camera centering the figure in the frame.
inline SampledPose sample_pose(const SamplerConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  SampledPose s;
  auto draw = [&](const RotationLimits& l) {
    Vec3 v;
    for (int a = 0; a < 3; ++a) v[a] = rng.uniform(l.lo[a], l.hi[a]);
    return v;
  };
  s.pose.root_orientation = draw(config.root);
  for (int j = 0; j < kNumJoints; ++j) s.pose.joint_rotations[j] = draw(config.joints[j]);
  for (double& sc : s.scales.scales)
    sc = rng.uniform(1.0 - config.scale_jitter, 1.0 + config.scale_jitter);
  s.camera.scale = rng.uniform(config.camera_scale_min, config.camera_scale_max);
  // Root sits at the origin; the figure's vertical middle (0.1 m below the
  // pelvis at rest) lands near the frame center.
  s.camera.tx = 0.5 * kFrameWidth + rng.uniform(-config.center_jitter, config.center_jitter);
  s.camera.ty = 0.5 * kFrameHeight - 0.1 * s.camera.scale +
                rng.uniform(-config.center_jitter, config.center_jitter);
  return s;
}

// ---------------------------------------------------------------------------
// Occlusion

inline bool in_frame(const Vec2& p) {
  return p.x() >= 0.0 && p.x() < kFrameWidth && p.y() >= 0.0 && p.y() < kFrameHeight;
}

/// Capsule-based visibility.
///
/// A joint is invisible when its projection falls inside the projected
/// capsule of a bone it does not belong to, and the point of that bone's axis
/// under the joint is closer to the camera by more than the capsule radius.
inline JointLabels label_occlusion(const Pose3D& pose, const Camera& camera,
                                   const std::array<double, kNumBones>& radii,
                                   const SkeletonTopology& topology = canonical_topology()) {
  for (double r : radii)
    if (!(r > 0.0)) throw ValidationError("capsule radii must be positive");
  const Pose2D p2 = project(pose, camera);
  JointLabels labels = all_visible();
  for (int j = 0; j < kNumJoints; ++j) {
    if (!in_frame(p2.joints[j])) {
      labels[j] = JointLabel::kNotIncluded;
      continue;
    }
    for (int i = 0; i < kNumBones; ++i) {
      const Bone& b = topology.bones[i];
      if (b.parent == j || b.child == j) continue;
      const Vec2 a2 = p2.joints[b.parent];
      const Vec2 d2 = p2.joints[b.child] - a2;
      const double len2 = d2.squaredNorm();
      double t = 0.0;
      if (len2 > 1e-18) t = std::clamp((p2.joints[j] - a2).dot(d2) / len2, 0.0, 1.0);
      const double dist = (p2.joints[j] - (a2 + t * d2)).norm();
      if (dist > radii[i] * camera.scale) continue;
      const Vec3 axis_point = pose.joints[b.parent] + t * (pose.joints[b.child] - pose.joints[b.parent]);
      if (axis_point.z() < pose.joints[j].z() - radii[i]) {
        labels[j] = JointLabel::kInvisible;
        break;
      }
    }
  }
  return labels;
}

/// Axis-aligned box over included joints, grown by margin_frac of its larger
/// side on every side and clipped to the frame.
inline BBox bbox_from_joints(const Pose2D& pose, const JointLabels& labels,
                             double margin_frac = 0.10) {
  double x0 = std::numeric_limits<double>::infinity(), y0 = x0;
  double x1 = -x0, y1 = -x0;
  bool any = false;
  for (int j = 0; j < kNumJoints; ++j) {
    if (labels[j] == JointLabel::kNotIncluded) continue;
    any = true;
    x0 = std::min(x0, pose.joints[j].x());
    y0 = std::min(y0, pose.joints[j].y());
    x1 = std::max(x1, pose.joints[j].x());
    y1 = std::max(y1, pose.joints[j].y());
  }
  if (!any) throw ValidationError("bbox of a pose with no included joints");
  const double m = margin_frac * std::max(x1 - x0, y1 - y0);
  x0 = std::max(0.0, x0 - m);
  y0 = std::max(0.0, y0 - m);
  x1 = std::min(double(kFrameWidth), x1 + m);
  y1 = std::min(double(kFrameHeight), y1 + m);
  return {x0, y0, x1 - x0, y1 - y0};
}

// ---------------------------------------------------------------------------
// Dataset

struct DatasetSample {
  std::uint64_t id = 0;
  Pose2D joints2d_clean;
  Pose2D joints2d_perturbed;
  Pose3D joints3d;
  PoseParams pose_params;
  BoneScales bone_scales;
  Camera camera;
  JointLabels labels = all_visible();
  BBox bbox;
  PerturbRecord perturb;
  std::uint64_t seed = 0;
};

inline std::uint64_t sample_seed(std::uint64_t base_seed, std::uint64_t k) { return base_seed ^ k; }

/// Builds sample k of a dataset. Depends only on (config, base_seed, k).
///
/// A joint is not-included when either its clean or its perturbed projection
/// leaves the frame, so the bbox covers every included perturbed joint.
inline DatasetSample synth_sample(const SamplerConfig& config, std::uint64_t base_seed,
                                  std::uint64_t k,
                                  const SkeletonTopology& topology = canonical_topology()) {
  DatasetSample s;
  s.id = k;
  s.seed = sample_seed(base_seed, k);
  const SampledPose sp = sample_pose(config, s.seed);
  s.pose_params = sp.pose;
  s.bone_scales = sp.scales;
  s.camera = sp.camera;
  s.joints3d = forward_kinematics(topology, s.pose_params, s.bone_scales);
  s.joints2d_clean = project(s.joints3d, s.camera);
  PerturbationSpec spec = config.perturbation;
  spec.seed = mix_seed(s.seed ^ 0x5eedULL);
  auto [perturbed, record] = perturb_projection(s.joints2d_clean, topology, spec);
  s.joints2d_perturbed = perturbed;
  s.perturb = record;
  s.labels = label_occlusion(s.joints3d, s.camera, config.capsule_radii, topology);
  for (int j = 0; j < kNumJoints; ++j)
    if (!in_frame(s.joints2d_perturbed.joints[j])) s.labels[j] = JointLabel::kNotIncluded;
  s.bbox = bbox_from_joints(s.joints2d_perturbed, s.labels, config.bbox_margin);
  return s;
}

/// Generates samples 0..n-1 and hands each to `sink` in id order.
inline void synth_dataset(const SamplerConfig& config, std::uint64_t n, std::uint64_t base_seed,
                          const std::function<void(const DatasetSample&)>& sink) {
  config.validate();
  if (n < 1) throw ValidationError("dataset size must be at least 1");
  for (std::uint64_t k = 0; k < n; ++k) sink(synth_sample(config, base_seed, k));
}

inline std::vector<DatasetSample> synth_dataset(const SamplerConfig& config, std::uint64_t n,
                                                std::uint64_t base_seed) {
  std::vector<DatasetSample> out;
  out.reserve(n);
  synth_dataset(config, n, base_seed, [&](const DatasetSample& s) { out.push_back(s); });
  return out;
}

}  // namespace sketchpose
