#pragma once

#include <cstdio>
#include <optional>
#include <string>

#include "sketchpose/synth.hpp"

namespace sketchpose {

enum class Side { kLeft, kRight, kCenter };

inline Side joint_side(int joint) {
  switch (joint) {
    case kLShoulder: case kLElbow: case kLWrist: case kLHip: case kLKnee: case kLAnkle: case kLToe:
      return Side::kLeft;
    case kRShoulder: case kRElbow: case kRWrist: case kRHip: case kRKnee: case kRAnkle: case kRToe:
      return Side::kRight;
    default:
      return Side::kCenter;
  }
}

inline const char* side_color(Side s) {
  switch (s) {
    case Side::kLeft: return "#1f77b4";
    case Side::kRight: return "#d62728";
    case Side::kCenter: return "#555555";
  }
  return "#000000";
}

struct RenderOptions {
  int width = kFrameWidth;
  int height = kFrameHeight;
  double joint_radius = 2.5;
  double stroke_width = 2.0;
};

namespace render_detail {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace render_detail

/// Stick figure: bones colored by the side of their child joint, joints as
/// circles (dashed outline when invisible), excluded joints and every bone
/// touching them left out, optional box.
inline std::string render_svg(const Pose2D& pose, const JointLabels& labels, const std::optional<BBox>& bbox = {},
                              const RenderOptions& opt = {},
                              const SkeletonTopology& topology = canonical_topology()) {
  using render_detail::num;
  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(opt.width) + "\" height=\"" +
       std::to_string(opt.height) + "\" viewBox=\"0 0 " + std::to_string(opt.width) + " " +
       std::to_string(opt.height) + "\">\n";
  s += "<rect x=\"0\" y=\"0\" width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (bbox)
    s += "<rect x=\"" + num(bbox->x) + "\" y=\"" + num(bbox->y) + "\" width=\"" + num(bbox->w) + "\" height=\"" +
         num(bbox->h) + "\" fill=\"none\" stroke=\"#2ca02c\" stroke-width=\"1\"/>\n";
  for (const Bone& b : topology.bones) {
    if (labels[b.parent] == JointLabel::kNotIncluded || labels[b.child] == JointLabel::kNotIncluded) continue;
    const Vec2 &p = pose.joints[b.parent], &c = pose.joints[b.child];
    s += "<line x1=\"" + num(p.x()) + "\" y1=\"" + num(p.y()) + "\" x2=\"" + num(c.x()) + "\" y2=\"" + num(c.y()) +
         "\" stroke=\"" + side_color(joint_side(b.child)) + "\" stroke-width=\"" + num(opt.stroke_width) +
         "\" stroke-linecap=\"round\"/>\n";
  }
  for (int j = 0; j < kNumJoints; ++j) {
    if (labels[j] == JointLabel::kNotIncluded) continue;
    const bool hidden = labels[j] == JointLabel::kInvisible;
    s += "<circle cx=\"" + num(pose.joints[j].x()) + "\" cy=\"" + num(pose.joints[j].y()) + "\" r=\"" +
         num(opt.joint_radius) + "\" fill=\"" + (hidden ? "white" : side_color(joint_side(j))) + "\" stroke=\"" +
         side_color(joint_side(j)) + "\" stroke-width=\"1\"" + (hidden ? " stroke-dasharray=\"1.5,1\"" : "") +
         "/>\n";
  }
  s += "</svg>\n";
  return s;
}

}  // namespace sketchpose
