#pragma once

#include <array>
#include <string_view>
#include <vector>

#include "sketchpose/rotation.hpp"
#include "sketchpose/types.hpp"

namespace sketchpose {

struct Bone {
  int parent = -1;  // exported joint
  int child = -1;   // exported joint
};

/// Fixed 16-joint stick skeleton.
///
/// Nodes 0..15 are the exported joints, node 16 is the internal pelvis root.
/// `parent` and `rest_offsets` describe the kinematic tree over all 17 nodes;
/// `bones` lists the 15 exported segments root to leaf. The neck-to-hip bones
/// skip the pelvis, so their rest vector is the difference of two offsets.
struct SkeletonTopology {
  std::array<std::string_view, kNumJoints> joint_names{};
  std::array<int, kNumNodes> parent{};
  std::array<Vec3, kNumNodes> rest_offsets{};
  std::array<Bone, kNumBones> bones{};
  // Exported joint attached to the root by a fixed (unscaled) link.
  int anchor_joint = kNeck;
  // Nodes sorted so that parents precede children.
  std::array<int, kNumNodes> node_order{};
  std::array<Vec3, kNumBones> bone_rest{};
  Vec3 anchor_rest = Vec3::Zero();

  /// Rest position of a node relative to the root.
  Vec3 rest_position(int node) const {
    Vec3 p = Vec3::Zero();
    for (int n = node; n >= 0; n = parent[n]) p += rest_offsets[n];
    return p;
  }

  /// Child joint position minus parent joint position at rest.
  const Vec3& bone_rest_vector(int bone) const { return bone_rest[bone]; }

  /// Anchor joint position relative to the root at rest.
  const Vec3& anchor_offset() const { return anchor_rest; }

  /// Recomputes the cached rest vectors; call after editing offsets or bones.
  void finalize() {
    for (int i = 0; i < kNumBones; ++i)
      bone_rest[i] = rest_position(bones[i].child) - rest_position(bones[i].parent);
    anchor_rest = rest_position(anchor_joint) - rest_position(root_node());
  }

  int root_node() const {
    for (int n = 0; n < kNumNodes; ++n)
      if (parent[n] == -1) return n;
    return -1;
  }

  /// Bone index whose child is `joint`, or -1 for the anchor.
  int bone_to(int joint) const {
    for (int i = 0; i < kNumBones; ++i)
      if (bones[i].child == joint) return i;
    return -1;
  }

  /// Throws ValidationError if the tree or bone list is malformed.
  void validate() const;
};

namespace detail {

inline SkeletonTopology make_canonical_topology() {
  SkeletonTopology t;
  t.joint_names = {"head",       "neck",       "l_shoulder", "r_shoulder",
                   "l_elbow",    "r_elbow",    "l_wrist",    "r_wrist",
                   "l_hip",      "r_hip",      "l_knee",     "r_knee",
                   "l_ankle",    "r_ankle",    "l_toe",      "r_toe"};

  t.parent[kPelvisNode] = -1;
  t.parent[kNeck] = kPelvisNode;
  t.parent[kHead] = kNeck;
  t.parent[kLShoulder] = kNeck;
  t.parent[kRShoulder] = kNeck;
  t.parent[kLElbow] = kLShoulder;
  t.parent[kRElbow] = kRShoulder;
  t.parent[kLWrist] = kLElbow;
  t.parent[kRWrist] = kRElbow;
  t.parent[kLHip] = kPelvisNode;
  t.parent[kRHip] = kPelvisNode;
  t.parent[kLKnee] = kLHip;
  t.parent[kRKnee] = kRHip;
  t.parent[kLAnkle] = kLKnee;
  t.parent[kRAnkle] = kRKnee;
  t.parent[kLToe] = kLAnkle;
  t.parent[kRToe] = kRAnkle;

  // Meters. Subject's left is +x, up is +y, facing the camera (-z).
  // The foot points forward and down so that the rest figure stands 1.70 m.
  const double toe_drop = 0.11;
  const double toe_forward = std::sqrt(0.18 * 0.18 - toe_drop * toe_drop);
  t.rest_offsets[kPelvisNode] = Vec3::Zero();
  t.rest_offsets[kNeck] = {0.0, 0.50, 0.0};
  t.rest_offsets[kHead] = {0.0, 0.25, 0.0};
  t.rest_offsets[kLShoulder] = {0.18, 0.0, 0.0};
  t.rest_offsets[kRShoulder] = {-0.18, 0.0, 0.0};
  t.rest_offsets[kLElbow] = {0.0, -0.28, 0.0};
  t.rest_offsets[kRElbow] = {0.0, -0.28, 0.0};
  t.rest_offsets[kLWrist] = {0.0, -0.25, 0.0};
  t.rest_offsets[kRWrist] = {0.0, -0.25, 0.0};
  t.rest_offsets[kLHip] = {0.10, 0.0, 0.0};
  t.rest_offsets[kRHip] = {-0.10, 0.0, 0.0};
  t.rest_offsets[kLKnee] = {0.0, -0.42, 0.0};
  t.rest_offsets[kRKnee] = {0.0, -0.42, 0.0};
  t.rest_offsets[kLAnkle] = {0.0, -0.42, 0.0};
  t.rest_offsets[kRAnkle] = {0.0, -0.42, 0.0};
  t.rest_offsets[kLToe] = {0.0, -toe_drop, -toe_forward};
  t.rest_offsets[kRToe] = {0.0, -toe_drop, -toe_forward};

  t.bones = {{{kNeck, kHead},
              {kNeck, kLShoulder},
              {kNeck, kRShoulder},
              {kLShoulder, kLElbow},
              {kRShoulder, kRElbow},
              {kLElbow, kLWrist},
              {kRElbow, kRWrist},
              {kNeck, kLHip},
              {kNeck, kRHip},
              {kLHip, kLKnee},
              {kRHip, kRKnee},
              {kLKnee, kLAnkle},
              {kRKnee, kRAnkle},
              {kLAnkle, kLToe},
              {kRAnkle, kRToe}}};

  t.anchor_joint = kNeck;
  t.node_order = {kPelvisNode, kNeck,   kLHip,  kRHip,  kHead,   kLShoulder,
                  kRShoulder,  kLKnee,  kRKnee, kLElbow, kRElbow, kLAnkle,
                  kRAnkle,     kLWrist, kRWrist, kLToe,  kRToe};
  t.finalize();
  return t;
}

}  // namespace detail

/// The canonical 16-joint topology (1.70 m rest figure).
inline const SkeletonTopology& canonical_topology() {
  static const SkeletonTopology topology = detail::make_canonical_topology();
  return topology;
}

inline void SkeletonTopology::validate() const {
  int roots = 0;
  for (int n = 0; n < kNumNodes; ++n) {
    if (parent[n] == -1) {
      ++roots;
      continue;
    }
    if (parent[n] < 0 || parent[n] >= kNumNodes || parent[n] == n)
      throw ValidationError("topology: bad parent index");
    // Walk to the root; more than kNumNodes steps means a cycle.
    int steps = 0;
    for (int m = n; m != -1; m = parent[m]) {
      if (++steps > kNumNodes) throw ValidationError("topology: cycle");
    }
  }
  if (roots != 1) throw ValidationError("topology: expected a single root");

  std::array<int, kNumJoints> as_child{};
  for (const Bone& b : bones) {
    if (b.parent < 0 || b.parent >= kNumJoints || b.child < 0 ||
        b.child >= kNumJoints)
      throw ValidationError("topology: bone references a non-exported joint");
    ++as_child[b.child];
  }
  int orphans = 0;
  for (int j = 0; j < kNumJoints; ++j) {
    if (as_child[j] > 1) throw ValidationError("topology: joint has two parent bones");
    if (as_child[j] == 0) {
      ++orphans;
      if (j != anchor_joint) throw ValidationError("topology: bone list does not reach every joint");
    }
  }
  if (orphans != 1) throw ValidationError("topology: bone list must leave exactly one root joint");

  for (int n = 0; n < kNumNodes; ++n) {
    if (parent[n] != -1 && !(rest_offsets[n].norm() > 0.0))
      throw ValidationError("topology: zero-length rest offset");
  }

  // node_order must list every node once with parents first.
  std::array<bool, kNumNodes> seen{};
  for (int n : node_order) {
    if (n < 0 || n >= kNumNodes || seen[n]) throw ValidationError("topology: bad node order");
    if (parent[n] != -1 && !seen[parent[n]])
      throw ValidationError("topology: node order lists a child before its parent");
    seen[n] = true;
  }
  for (int i = 0; i < kNumBones; ++i) {
    // Bone parent joints must be placed before their children.
    const int p = bones[i].parent;
    if (p != anchor_joint) {
      const int pb = bone_to(p);
      if (pb > i) throw ValidationError("topology: bones not ordered root to leaf");
    }
  }
}

// ---------------------------------------------------------------------------
// Estimation parameters

/// Axis-angle rotations for the root and each exported joint.
///
/// Rotation of a leaf joint (head, wrists, toes) has no effect on joint
/// positions but is still part of the parameter layout.
struct PoseParams {
  Vec3 root_orientation = Vec3::Zero();
  std::array<Vec3, kNumJoints> joint_rotations;
  Vec3 root_position = Vec3::Zero();

  PoseParams() { joint_rotations.fill(Vec3::Zero()); }
  bool operator==(const PoseParams&) const = default;

  static constexpr int kNumRotationParams = 3 * (kNumJoints + 1);

  /// Rotation parameters in layout order: root, then joints 0..15.
  Eigen::Matrix<double, kNumRotationParams, 1> rotation_vector() const {
    Eigen::Matrix<double, kNumRotationParams, 1> v;
    v.segment<3>(0) = root_orientation;
    for (int j = 0; j < kNumJoints; ++j) v.segment<3>(3 + 3 * j) = joint_rotations[j];
    return v;
  }
};

inline constexpr double kMinBoneScale = 0.2;
inline constexpr double kMaxBoneScale = 5.0;

struct BoneScales {
  std::array<double, kNumBones> scales;

  BoneScales() { scales.fill(1.0); }
  bool operator==(const BoneScales&) const = default;

  void validate() const {
    for (double s : scales)
      if (!(s > kMinBoneScale && s < kMaxBoneScale))
        throw ValidationError("bone scale outside (0.2, 5.0)");
  }
};

// ---------------------------------------------------------------------------
// Forward kinematics

/// Intermediate quantities of a forward-kinematics pass, reused by backprop.
struct FkCache {
  std::array<Mat3, kNumNodes> local;   // exp of each node's own rotation
  std::array<Mat3, kNumNodes> global;  // accumulated rotation
  // Joint positions relative to root_position. Bone vectors are taken from
  // these so that they do not depend on the root translation at all.
  std::array<Vec3, kNumJoints> relative;
  Pose3D pose;
};

inline void validate_pose_params(const PoseParams& pose) {
  bool ok = pose.root_orientation.allFinite() && pose.root_position.allFinite();
  for (const auto& r : pose.joint_rotations) ok = ok && r.allFinite();
  if (!ok) throw ValidationError("pose parameters contain non-finite values");
}

/// Forward kinematics that also keeps the per-node rotations for backprop.
inline FkCache forward_kinematics_cached(const SkeletonTopology& topology,
                                         const PoseParams& pose,
                                         const BoneScales& scales) {
  validate_pose_params(pose);
  for (double s : scales.scales)
    if (!(s > 0.0) || !std::isfinite(s)) throw ValidationError("bone scales must be positive");

  FkCache c;
  for (int n : topology.node_order) {
    const Vec3& w = n == kPelvisNode ? pose.root_orientation : pose.joint_rotations[n];
    c.local[n] = exp_so3(w);
    const int p = topology.parent[n];
    c.global[n] = p < 0 ? c.local[n] : Mat3(c.global[p] * c.local[n]);
  }

  const int root = topology.root_node();
  const int anchor = topology.anchor_joint;
  c.relative[anchor] = c.global[root] * topology.anchor_offset();
  for (int i = 0; i < kNumBones; ++i) {
    const Bone& b = topology.bones[i];
    const int frame = topology.parent[b.child];
    c.relative[b.child] = c.relative[b.parent] +
                          c.global[frame] * (scales.scales[i] * topology.bone_rest_vector(i));
  }
  for (int j = 0; j < kNumJoints; ++j) c.pose.joints[j] = pose.root_position + c.relative[j];
  return c;
}

/// 3D joint positions for the given pose and bone-length scales.
inline Pose3D forward_kinematics(const SkeletonTopology& topology, const PoseParams& pose,
                                 const BoneScales& scales) {
  return forward_kinematics_cached(topology, pose, scales).pose;
}

struct FkGradient {
  Vec3 root_orientation = Vec3::Zero();
  std::array<Vec3, kNumJoints> joint_rotations;
  Vec3 root_position = Vec3::Zero();
  std::array<double, kNumBones> scales{};

  FkGradient() { joint_rotations.fill(Vec3::Zero()); }
};

/// Reverse-mode pass: pulls dL/d(joint position) back to the parameters.
inline FkGradient forward_kinematics_backward(const SkeletonTopology& topology,
                                              const PoseParams& pose,
                                              const BoneScales& scales, const FkCache& cache,
                                              const std::array<Vec3, kNumJoints>& d_joints) {
  FkGradient g;
  // Gradient with respect to each joint summed over its subtree.
  std::array<Vec3, kNumJoints> subtree = d_joints;
  std::array<Mat3, kNumNodes> d_global;
  d_global.fill(Mat3::Zero());

  for (int i = kNumBones - 1; i >= 0; --i) {
    const Bone& b = topology.bones[i];
    const int frame = topology.parent[b.child];
    const Vec3 rest = topology.bone_rest_vector(i);
    const Vec3& gc = subtree[b.child];
    g.scales[i] = gc.dot(cache.global[frame] * rest);
    d_global[frame] += gc * (scales.scales[i] * rest).transpose();
    subtree[b.parent] += gc;
  }
  const int root = topology.root_node();
  const int anchor = topology.anchor_joint;
  g.root_position = subtree[anchor];
  d_global[root] += subtree[anchor] * topology.anchor_offset().transpose();

  for (int k = kNumNodes - 1; k >= 0; --k) {
    const int n = topology.node_order[k];
    const int p = topology.parent[n];
    Mat3 d_local;
    if (p < 0) {
      d_local = d_global[n];
    } else {
      d_local = cache.global[p].transpose() * d_global[n];
      d_global[p] += d_global[n] * cache.local[n].transpose();
    }
    const Vec3& w = n == kPelvisNode ? pose.root_orientation : pose.joint_rotations[n];
    const auto dR = exp_so3_derivatives(w, cache.local[n]);
    Vec3 dw;
    for (int a = 0; a < 3; ++a) dw[a] = d_local.cwiseProduct(dR[a]).sum();
    if (n == kPelvisNode)
      g.root_orientation = dw;
    else
      g.joint_rotations[n] = dw;
  }
  return g;
}

/// Bone vectors (child minus parent) of a 3D pose.
inline std::array<Vec3, kNumBones> bone_vectors(const SkeletonTopology& topology,
                                                const Pose3D& pose) {
  std::array<Vec3, kNumBones> out;
  for (int i = 0; i < kNumBones; ++i)
    out[i] = pose.joints[topology.bones[i].child] - pose.joints[topology.bones[i].parent];
  return out;
}

inline std::array<Vec2, kNumBones> bone_vectors(const SkeletonTopology& topology,
                                                const Pose2D& pose) {
  std::array<Vec2, kNumBones> out;
  for (int i = 0; i < kNumBones; ++i)
    out[i] = pose.joints[topology.bones[i].child] - pose.joints[topology.bones[i].parent];
  return out;
}

/// Joint positions at the identity pose with unit scales.
inline Pose3D rest_pose(const SkeletonTopology& topology = canonical_topology()) {
  return forward_kinematics(topology, PoseParams{}, BoneScales{});
}

}  // namespace sketchpose
