#pragma once

#include <array>
#include <cmath>
#include <numbers>

#include "sketchpose/types.hpp"

namespace sketchpose {

inline Mat3 hat(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

/// Rodrigues' formula: rotation matrix of an axis-angle vector.
inline Mat3 exp_so3(const Vec3& w) {
  const double theta2 = w.squaredNorm();
  const Mat3 K = hat(w);
  if (theta2 < 1e-16) {
    return Mat3::Identity() + K + 0.5 * K * K;
  }
  const double theta = std::sqrt(theta2);
  const double a = std::sin(theta) / theta;
  const double b = (1.0 - std::cos(theta)) / theta2;
  return Mat3::Identity() + a * K + b * K * K;
}

/// Partial derivatives dR/dw_i of exp_so3 at w.
///
/// Uses the closed form dR/dw_i = (w_i [w]x + [w x (I - R) e_i]x) R / |w|^2,
/// with a second-order series near the origin where that form is ill
/// conditioned.
inline std::array<Mat3, 3> exp_so3_derivatives(const Vec3& w, const Mat3& R) {
  std::array<Mat3, 3> d;
  const double theta2 = w.squaredNorm();
  if (theta2 < 1e-12) {
    const Mat3 K = hat(w);
    for (int i = 0; i < 3; ++i) {
      const Mat3 Ei = hat(Vec3::Unit(i));
      d[i] = Ei + 0.5 * (Ei * K + K * Ei);
    }
    return d;
  }
  const Mat3 K = hat(w);
  const Mat3 I_minus_R = Mat3::Identity() - R;
  for (int i = 0; i < 3; ++i) {
    const Vec3 c = w.cross(I_minus_R.col(i));
    d[i] = (w[i] * K + hat(c)) * R / theta2;
  }
  return d;
}

/// Maps an axis-angle vector to the equivalent one with magnitude <= pi.
inline Vec3 canonicalize(const Vec3& w) {
  const double theta = w.norm();
  if (theta <= std::numbers::pi) return w;
  const double k = std::round(theta / (2.0 * std::numbers::pi));
  const double reduced = theta - 2.0 * std::numbers::pi * k;
  return w * (reduced / theta);
}

/// Jacobian of canonicalize() with respect to its input.
inline Mat3 canonicalize_jacobian(const Vec3& w) {
  const double theta = w.norm();
  if (theta <= std::numbers::pi) return Mat3::Identity();
  const double k = std::round(theta / (2.0 * std::numbers::pi));
  const double ratio = 1.0 - 2.0 * std::numbers::pi * k / theta;
  const double c = 2.0 * std::numbers::pi * k / (theta * theta * theta);
  return ratio * Mat3::Identity() + c * w * w.transpose();
}

}  // namespace sketchpose
