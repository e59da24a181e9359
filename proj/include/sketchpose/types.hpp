#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace sketchpose {

inline constexpr int kNumJoints = 16;
inline constexpr int kNumBones = 15;
// Internal pelvis plus the 16 exported joints.
inline constexpr int kNumNodes = kNumJoints + 1;
inline constexpr int kPelvisNode = kNumJoints;

// Frame size of the 2D guidance image (rows x cols).
inline constexpr int kFrameHeight = 256;
inline constexpr int kFrameWidth = 192;

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

enum Joint : int {
  kHead = 0,
  kNeck,
  kLShoulder,
  kRShoulder,
  kLElbow,
  kRElbow,
  kLWrist,
  kRWrist,
  kLHip,
  kRHip,
  kLKnee,
  kRKnee,
  kLAnkle,
  kRAnkle,
  kLToe,
  kRToe,
};

/// Raised when an input violates a documented precondition.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a numerical routine produces a non-finite value.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 3D joint positions in meters, world frame (y up, camera looks along +z).
struct Pose3D {
  std::array<Vec3, kNumJoints> joints;

  Pose3D() { joints.fill(Vec3::Zero()); }
  bool operator==(const Pose3D&) const = default;
};

/// 2D joint positions in pixels, image frame (origin top-left, v down).
struct Pose2D {
  std::array<Vec2, kNumJoints> joints;

  Pose2D() { joints.fill(Vec2::Zero()); }
  bool operator==(const Pose2D&) const = default;
};

inline bool all_finite(const Pose3D& p) {
  for (const auto& j : p.joints)
    if (!j.allFinite()) return false;
  return true;
}

inline bool all_finite(const Pose2D& p) {
  for (const auto& j : p.joints)
    if (!j.allFinite()) return false;
  return true;
}

}  // namespace sketchpose
