#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "sketchpose/projection.hpp"
#include "test_util.hpp"

namespace sketchpose {
namespace {

const SkeletonTopology& topo() { return canonical_topology(); }

Pose2D random_projection(Rng& rng) {
  const PoseParams pose = testing::random_pose(rng);
  const BoneScales scales = testing::random_scales(rng);
  Camera cam{rng.uniform(80, 120), rng.uniform(60, 130), rng.uniform(80, 170)};
  return project(forward_kinematics(topo(), pose, scales), cam);
}

TEST(Project, UnitCameraDropsDepth) {
  Pose3D p;
  p.joints[0] = {0.5, 0.2, 7.3};
  const Pose2D q = project(p, Camera{1.0, 0.0, 0.0});
  EXPECT_DOUBLE_EQ(q.joints[0].x(), 0.5);
  EXPECT_DOUBLE_EQ(q.joints[0].y(), -0.2);
  p.joints[0].z() = -100.0;
  EXPECT_EQ(project(p, Camera{1.0, 0.0, 0.0}).joints[0], q.joints[0]);
}

TEST(Project, TranslationOnly) {
  Pose3D p;
  const Pose2D q = project(p, Camera{100.0, 128.0, 96.0});
  EXPECT_EQ(q.joints[0], Vec2(128.0, 96.0));
}

TEST(Project, RestPoseHeightInPixels) {
  const Pose2D q = project(rest_pose(), Camera{100.0, 0.0, 0.0});
  EXPECT_NEAR(q.joints[kLToe].y() - q.joints[kHead].y(), 170.0, 1e-9);
}

TEST(Project, TranslationEquivariance) {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const Pose3D p = forward_kinematics(topo(), testing::random_pose(rng), BoneScales{});
    const Camera cam{rng.uniform(50, 150), rng.uniform(-50, 50), rng.uniform(-50, 50)};
    const Vec2 dt(rng.uniform(-10, 10), rng.uniform(-10, 10));
    Camera moved = cam;
    moved.tx += dt.x();
    moved.ty += dt.y();
    const Pose2D a = project(p, cam), b = project(p, moved);
    for (int j = 0; j < kNumJoints; ++j) {
      // u = s*x + tx is one rounding; compare against the same expression.
      EXPECT_EQ(b.joints[j].x(), cam.scale * p.joints[j].x() + moved.tx);
      EXPECT_NEAR((b.joints[j] - (a.joints[j] + dt)).norm(), 0.0, 1e-12);
    }
  }
}

TEST(Project, RejectsBadCamera) {
  EXPECT_THROW(project(Pose3D{}, Camera{0.0, 0.0, 0.0}), ValidationError);
  EXPECT_THROW(project(Pose3D{}, Camera{1.0, NAN, 0.0}), ValidationError);
}

TEST(Perturb, ZeroRangeIsIdentity) {
  Rng rng(3);
  const Pose2D p = random_projection(rng);
  auto [out, rec] = perturb_projection(p, topo(), PerturbationSpec{0.0, 99});
  EXPECT_TRUE(out == p);
  for (double d : rec.deltas) EXPECT_EQ(d, 0.0);
}

TEST(Perturb, SingleForearmBone) {
  Rng rng(4);
  const Pose2D p = random_projection(rng);
  const int forearm = topo().bone_to(kLWrist);
  std::array<double, kNumBones> deltas{};
  deltas[forearm] = 0.5;
  auto [out, rec] = apply_perturbation(p, topo(), deltas);
  const Vec2 bone = p.joints[kLWrist] - p.joints[kLElbow];
  EXPECT_NEAR((out.joints[kLWrist] - out.joints[kLElbow]).norm(), 1.5 * bone.norm(), 1e-9);
  EXPECT_NEAR((out.joints[kLWrist] - (p.joints[kLWrist] + 0.5 * bone)).norm(), 0.0, 1e-12);
  for (int j = 0; j < kNumJoints; ++j) {
    if (j == kLWrist) continue;
    EXPECT_EQ(out.joints[j], p.joints[j]) << j;
  }
  EXPECT_EQ(rec.deltas[forearm], 0.5);
}

// Oracle: every joint moves by the sum of delta_i * b_i over the bones on its
// path to the anchor, with b_i the unperturbed 2D bone vectors.
Pose2D accumulate_oracle(const Pose2D& p, const std::array<double, kNumBones>& deltas) {
  const auto bones = bone_vectors(topo(), p);
  Pose2D out = p;
  for (int j = 0; j < kNumJoints; ++j) {
    for (int k = j; topo().bone_to(k) >= 0; k = topo().bones[topo().bone_to(k)].parent) {
      const int i = topo().bone_to(k);
      out.joints[j] += deltas[i] * bones[i];
    }
  }
  return out;
}

TEST(Perturb, MatchesSubtreeAccumulationOracle) {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const Pose2D p = random_projection(rng);
    const PerturbationSpec spec{0.25, 7 + static_cast<std::uint64_t>(trial)};
    auto [out, rec] = perturb_projection(p, topo(), spec);
    const Pose2D oracle = accumulate_oracle(p, rec.deltas);
    for (int j = 0; j < kNumJoints; ++j)
      EXPECT_NEAR((out.joints[j] - oracle.joints[j]).norm(), 0.0, 1e-9) << j;
    for (double d : rec.deltas) EXPECT_LE(std::abs(d), 0.25);
  }
}

TEST(Perturb, PreservesBoneDirections) {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const Pose2D p = random_projection(rng);
    auto [out, rec] = perturb_projection(p, topo(), PerturbationSpec{0.9, rng.next()});
    const auto a = bone_vectors(topo(), p), b = bone_vectors(topo(), out);
    for (int i = 0; i < kNumBones; ++i) {
      if (a[i].norm() < kDegenerateBone2d) continue;
      EXPECT_NEAR((a[i].normalized() - b[i].normalized()).norm(), 0.0, 1e-9);
      EXPECT_NEAR(b[i].norm(), a[i].norm() * (1.0 + rec.deltas[i]), 1e-9);
    }
  }
}

TEST(Perturb, ReapplyingRecordReproduces) {
  Rng rng(10);
  const Pose2D p = random_projection(rng);
  auto [out, rec] = perturb_projection(p, topo(), PerturbationSpec{0.3, 5});
  auto [again, rec2] = apply_perturbation(p, topo(), rec.deltas);
  for (int j = 0; j < kNumJoints; ++j) EXPECT_NEAR((again.joints[j] - out.joints[j]).norm(), 0.0, 1e-9);
  EXPECT_TRUE(rec == rec2);
}

TEST(Perturb, DegenerateBoneSkipped) {
  Rng rng(12);
  Pose2D p = random_projection(rng);
  p.joints[kLWrist] = p.joints[kLElbow];
  std::array<double, kNumBones> deltas;
  deltas.fill(0.2);
  auto [out, rec] = apply_perturbation(p, topo(), deltas);
  EXPECT_EQ(rec.deltas[topo().bone_to(kLWrist)], 0.0);
  EXPECT_NEAR((out.joints[kLWrist] - out.joints[kLElbow]).norm(), 0.0, 1e-12);
}

TEST(Perturb, LengthChangeHasZeroMean) {
  Rng rng(13);
  const Pose2D p = random_projection(rng);
  const auto orig = bone_vectors(topo(), p);
  double orig_total = 0.0;
  for (const auto& b : orig) orig_total += b.norm();
  const int n = 10000;
  double sum = 0.0, sum2 = 0.0;
  for (int s = 0; s < n; ++s) {
    auto [out, rec] = perturb_projection(p, topo(), PerturbationSpec{0.25, std::uint64_t(s)});
    double total = 0.0;
    for (const auto& b : bone_vectors(topo(), out)) total += b.norm();
    const double d = total - orig_total;
    sum += d;
    sum2 += d * d;
  }
  const double mean = sum / n;
  const double sd = std::sqrt(sum2 / n - mean * mean);
  EXPECT_LT(std::abs(mean), 3.0 * sd / std::sqrt(double(n)));
}

TEST(Perturb, RejectsBadRange) {
  EXPECT_THROW(perturb_projection(Pose2D{}, topo(), PerturbationSpec{1.0, 0}), ValidationError);
  EXPECT_THROW(perturb_projection(Pose2D{}, topo(), PerturbationSpec{-0.1, 0}), ValidationError);
}

TEST(ForeshorteningRatio, CosineCases) {
  const Camera cam{100.0, 0.0, 0.0};
  auto ratio = [&](const Vec3& b) {
    const Vec2 b2 = project_point(b, cam) - project_point(Vec3::Zero(), cam);
    return foreshortening_ratio(b, b2, cam, RatioMode::kCosine);
  };
  EXPECT_NEAR(ratio({0.3, 0.1, 0.0}), 1.0, 1e-12);
  EXPECT_NEAR(ratio({0.0, 0.0, 0.4}), 0.0, 1e-12);
  const double a = std::numbers::pi / 3.0;  // 60 degrees out of the image plane
  EXPECT_NEAR(ratio({0.2 * std::cos(a), 0.0, 0.2 * std::sin(a)}), 0.5, 1e-9);
}

TEST(ForeshorteningRatio, AsWrittenCases) {
  const Camera cam{100.0, 0.0, 0.0};
  const Vec3 b(0.1, 0.0, std::sqrt(3.0) * 0.1);  // |b3| = 0.2, |b2| = 10 px
  EXPECT_NEAR(foreshortening_ratio(b, Vec2(10.0, 0.0), cam, RatioMode::kAsWritten), 2.0, 1e-12);
  // Point-projected bone is bounded by the epsilon floor.
  EXPECT_NEAR(foreshortening_ratio(Vec3(0, 0, 1), Vec2::Zero(), cam, RatioMode::kAsWritten), 100.0 / 1e-6,
              1e-3);
  EXPECT_THROW(foreshortening_ratio(Vec3::Zero(), Vec2(1, 0), cam, RatioMode::kCosine), ValidationError);
}

TEST(ForeshorteningRatio, CosineClampsPerturbedLengths) {
  const Camera cam{100.0, 0.0, 0.0};
  EXPECT_EQ(foreshortening_ratio(Vec3(0.1, 0, 0), Vec2(12.0, 0.0), cam, RatioMode::kCosine), 1.0);
}

}  // namespace
}  // namespace sketchpose
