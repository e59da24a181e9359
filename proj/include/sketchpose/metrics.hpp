#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <vector>

#include "sketchpose/types.hpp"

namespace sketchpose {

/// Hip midpoint, used as the pelvis proxy for root centering.
inline Vec3 hip_midpoint(const Pose3D& p) { return 0.5 * (p.joints[kLHip] + p.joints[kRHip]); }

/// Mean joint distance in millimeters after centering both poses on their hip midpoints.
inline double mpjpe(const Pose3D& pred, const Pose3D& gt) {
  const Vec3 cp = hip_midpoint(pred), cg = hip_midpoint(gt);
  double sum = 0.0;
  for (int j = 0; j < kNumJoints; ++j) sum += ((pred.joints[j] - cp) - (gt.joints[j] - cg)).norm();
  return 1000.0 * sum / kNumJoints;
}

/// x -> scale * rotation * x + translation
struct Similarity {
  double scale = 1.0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  bool degenerate = false;  // rotation could not be determined; identity used

  Vec3 apply(const Vec3& x) const { return scale * (rotation * x) + translation; }
  Pose3D apply(const Pose3D& p) const {
    Pose3D out;
    for (int j = 0; j < kNumJoints; ++j) out.joints[j] = apply(p.joints[j]);
    return out;
  }
};

struct Alignment {
  Similarity transform;
  Pose3D aligned;
};

/// Least-squares similarity taking `pred` onto `gt` (Umeyama), proper rotations only.
///
/// When the cross-covariance has rank below 2 the rotation is ambiguous; the
/// result then keeps R = I, fits scale and translation, and sets `degenerate`.
inline Alignment procrustes_align(const Pose3D& pred, const Pose3D& gt) {
  Vec3 mp = Vec3::Zero(), mg = Vec3::Zero();
  for (int j = 0; j < kNumJoints; ++j) {
    mp += pred.joints[j];
    mg += gt.joints[j];
  }
  mp /= kNumJoints;
  mg /= kNumJoints;
  double var_p = 0.0, var_g = 0.0;
  Mat3 cov = Mat3::Zero();
  for (int j = 0; j < kNumJoints; ++j) {
    const Vec3 a = pred.joints[j] - mp, b = gt.joints[j] - mg;
    var_p += a.squaredNorm();
    var_g += b.squaredNorm();
    cov += b * a.transpose();
  }
  if (!(var_g > 0.0)) throw ValidationError("procrustes target joints are all coincident");

  Similarity s;
  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  const double tiny = 1e-12 * std::sqrt(var_p * var_g);
  if (!(var_p > 0.0) || sv[1] <= tiny) {
    s.degenerate = true;
    double dot = 0.0;
    for (int j = 0; j < kNumJoints; ++j) dot += (pred.joints[j] - mp).dot(gt.joints[j] - mg);
    s.scale = var_p > 0.0 ? std::max(0.0, dot / var_p) : 0.0;
  } else {
    Vec3 d(1.0, 1.0, 1.0);
    if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) d[2] = -1.0;
    s.rotation = svd.matrixU() * d.asDiagonal() * svd.matrixV().transpose();
    s.scale = sv.dot(d) / var_p;
  }
  s.translation = mg - s.scale * (s.rotation * mp);
  return {s, s.apply(pred)};
}

/// Mean joint distance in millimeters after Procrustes alignment.
inline double pa_mpjpe(const Pose3D& pred, const Pose3D& gt) {
  const Pose3D a = procrustes_align(pred, gt).aligned;
  double sum = 0.0;
  for (int j = 0; j < kNumJoints; ++j) sum += (a.joints[j] - gt.joints[j]).norm();
  return 1000.0 * sum / kNumJoints;
}

struct EvalReport {
  double mpjpe_mm = 0.0;
  double pa_mpjpe_mm = 0.0;
  std::vector<double> per_sample_mpjpe;
  std::vector<double> per_sample_pa_mpjpe;
};

inline EvalReport evaluate(const std::vector<Pose3D>& pred, const std::vector<Pose3D>& gt) {
  if (pred.size() != gt.size()) throw ValidationError("prediction and ground-truth counts differ");
  EvalReport r;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    r.per_sample_mpjpe.push_back(mpjpe(pred[k], gt[k]));
    r.per_sample_pa_mpjpe.push_back(pa_mpjpe(pred[k], gt[k]));
    r.mpjpe_mm += r.per_sample_mpjpe.back();
    r.pa_mpjpe_mm += r.per_sample_pa_mpjpe.back();
  }
  if (!pred.empty()) {
    r.mpjpe_mm /= pred.size();
    r.pa_mpjpe_mm /= pred.size();
  }
  return r;
}

// ---------------------------------------------------------------------------
// Timing

struct TimingStats {
  double median = 0.0;  // seconds per sample
  double p95 = 0.0;
  std::vector<double> samples;
};

/// Linear-interpolated quantile of unsorted data.
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = q * (v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - lo) * (v[hi] - v[lo]);
}

inline TimingStats summarize_times(std::vector<double> t) {
  TimingStats s;
  s.median = quantile(t, 0.5);
  s.p95 = quantile(t, 0.95);
  s.samples = std::move(t);
  return s;
}

/// Wall-clock seconds of `run(k)` for each sample k, after one untimed warmup call.
inline TimingStats time_per_sample(const std::function<void(std::size_t)>& run, std::size_t n) {
  if (n == 0) return {};
  run(0);
  std::vector<double> t(n);
  for (std::size_t k = 0; k < n; ++k) {
    const auto a = std::chrono::steady_clock::now();
    run(k);
    t[k] = std::chrono::duration<double>(std::chrono::steady_clock::now() - a).count();
  }
  return summarize_times(std::move(t));
}

struct BenchReport {
  TimingStats slow;  // per-sample times of the last repetition
  TimingStats fast;
  std::vector<double> ratios;  // median ratio of each repetition
  double speedup = 0.0;        // median of `ratios`
};

/// Times two methods on the same n inputs, `repetitions` times, alternating.
inline BenchReport bench(const std::function<void(std::size_t)>& slow,
                         const std::function<void(std::size_t)>& fast, std::size_t n, int repetitions) {
  if (n < 20) throw ValidationError("bench needs at least 20 samples");
  if (repetitions < 3) throw ValidationError("bench needs at least 3 repetitions");
  BenchReport r;
  for (int rep = 0; rep < repetitions; ++rep) {
    r.slow = time_per_sample(slow, n);
    r.fast = time_per_sample(fast, n);
    r.ratios.push_back(r.fast.median > 0.0 ? r.slow.median / r.fast.median
                                           : std::numeric_limits<double>::infinity());
  }
  r.speedup = quantile(r.ratios, 0.5);
  return r;
}

}  // namespace sketchpose
