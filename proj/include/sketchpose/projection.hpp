#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <utility>

#include "sketchpose/random.hpp"
#include "sketchpose/skeleton.hpp"
#include "sketchpose/types.hpp"

namespace sketchpose {

/// Weak-perspective camera: u = scale * x + tx, v = -scale * y + ty.
struct Camera {
  double scale = 100.0;  // pixels per meter
  double tx = 0.0;
  double ty = 0.0;

  bool operator==(const Camera&) const = default;

  void validate() const {
    if (!std::isfinite(scale) || !std::isfinite(tx) || !std::isfinite(ty))
      throw ValidationError("camera has non-finite fields");
    if (!(scale > 0.0)) throw ValidationError("camera scale must be positive");
  }
};

inline Vec2 project_point(const Vec3& p, const Camera& camera) {
  return {camera.scale * p.x() + camera.tx, -camera.scale * p.y() + camera.ty};
}

/// Orthographic projection with uniform scale; depth is discarded.
inline Pose2D project(const Pose3D& pose, const Camera& camera) {
  camera.validate();
  Pose2D out;
  for (int j = 0; j < kNumJoints; ++j) out.joints[j] = project_point(pose.joints[j], camera);
  return out;
}

// ---------------------------------------------------------------------------
// Limb-length perturbation

inline constexpr double kDegenerateBone2d = 1e-6;  // pixels

struct PerturbationSpec {
  double bias_range = 0.25;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(bias_range >= 0.0 && bias_range < 1.0))
      throw ValidationError("bias_range must lie in [0, 1)");
  }
};

/// Per-bone relative length change that was applied.
struct PerturbRecord {
  std::array<double, kNumBones> deltas{};
  bool operator==(const PerturbRecord&) const = default;
};

/// Rescales each 2D bone by (1 + delta_i), keeping its direction, and moves
/// the child's whole subtree along with it.
///
/// Bones are visited root to leaf. Because ancestors translate a subtree
/// rigidly, each bone vector seen here equals the unperturbed one. Bones
/// shorter than 1e-6 px are left alone and their delta is reported as 0.
inline std::pair<Pose2D, PerturbRecord> apply_perturbation(
    const Pose2D& pose, const SkeletonTopology& topology,
    const std::array<double, kNumBones>& deltas) {
  Pose2D out = pose;
  PerturbRecord record;
  // Descendant lists follow from the bone order: a bone's child joint is
  // moved with every joint whose path to the anchor crosses that bone.
  for (int i = 0; i < kNumBones; ++i) {
    const Bone& b = topology.bones[i];
    const Vec2 vec = out.joints[b.child] - out.joints[b.parent];
    if (vec.norm() < kDegenerateBone2d || deltas[i] == 0.0) continue;
    record.deltas[i] = deltas[i];
    const Vec2 shift = deltas[i] * vec;
    out.joints[b.child] += shift;
    for (int k = i + 1; k < kNumBones; ++k) {
      // Walk up from bone k's child; if we reach b.child it is a descendant.
      for (int j = topology.bones[k].parent;; ) {
        if (j == b.child) {
          out.joints[topology.bones[k].child] += shift;
          break;
        }
        const int up = topology.bone_to(j);
        if (up < 0) break;
        j = topology.bones[up].parent;
      }
    }
  }
  return {out, record};
}

/// Draws delta_i ~ U(-a, a) for every bone and applies them.
inline std::pair<Pose2D, PerturbRecord> perturb_projection(const Pose2D& pose,
                                                           const SkeletonTopology& topology,
                                                           const PerturbationSpec& spec) {
  spec.validate();
  if (spec.bias_range == 0.0) return {pose, PerturbRecord{}};
  Rng rng(spec.seed);
  std::array<double, kNumBones> deltas{};
  for (double& d : deltas) d = rng.uniform(-spec.bias_range, spec.bias_range);
  return apply_perturbation(pose, topology, deltas);
}

// ---------------------------------------------------------------------------
// Foreshortening ratio

enum class RatioMode {
  kCosine,     // |b2d| / (scale |b3d|), clamped to [0, 1]
  kAsWritten,  // scale |b3d| / max(|b2d|, eps)
};

inline constexpr double kRatioEpsilon = 1e-6;  // pixels

inline double foreshortening_ratio(const Vec3& b3d, const Vec2& b2d, const Camera& camera,
                                   RatioMode mode) {
  const double len3 = b3d.norm();
  if (!(len3 > 0.0)) throw ValidationError("foreshortening ratio of a zero-length 3D bone");
  const double len2 = b2d.norm();
  if (mode == RatioMode::kCosine)
    return std::clamp(len2 / (camera.scale * len3), 0.0, 1.0);
  return camera.scale * len3 / std::max(len2, kRatioEpsilon);
}

}  // namespace sketchpose
