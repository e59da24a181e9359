#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sketchpose/fitter.hpp"
#include "sketchpose/metrics.hpp"
#include "sketchpose/random.hpp"

namespace sketchpose {

inline constexpr int kInputSize = 2 * kNumJoints;
inline constexpr int kPoseOutputs = PoseParams::kNumRotationParams;  // 51
inline constexpr int kScaleOutputs = kNumBones;                      // 15
inline constexpr int kCameraOutputs = 3;
inline constexpr double kScaleFloor = 0.2;

// ---------------------------------------------------------------------------
// Input normalization

/// Where the normalized frame sits in pixels.
struct NormalizationFrame {
  Vec2 origin = Vec2::Zero();  // hip midpoint
  double torso = 1.0;          // hip midpoint to neck, pixels
};

inline constexpr double kMinTorsoPixels = 1e-6;

inline NormalizationFrame normalization_frame(const Pose2D& pose, const JointLabels& labels) {
  if (count_included(labels) < kMinFitJoints)
    throw ValidationError("normalization needs at least 8 included joints");
  for (int j : {kNeck, kLHip, kRHip})
    if (labels[j] == JointLabel::kNotIncluded)
      throw ValidationError("normalization needs the neck and both hips");
  NormalizationFrame f;
  f.origin = 0.5 * (pose.joints[kLHip] + pose.joints[kRHip]);
  f.torso = (pose.joints[kNeck] - f.origin).norm();
  if (!std::isfinite(f.torso) || f.torso < kMinTorsoPixels)
    throw ValidationError("torso length is degenerate");
  return f;
}

/// Hip-midpoint centered joints in torso units, (u, v) per joint; excluded joints are 0.
inline Eigen::VectorXd normalize_joints(const Pose2D& pose, const JointLabels& labels) {
  const NormalizationFrame f = normalization_frame(pose, labels);
  Eigen::VectorXd x(kInputSize);
  for (int j = 0; j < kNumJoints; ++j) {
    const Vec2 p = labels[j] == JointLabel::kNotIncluded ? Vec2::Zero()
                                                          : Vec2((pose.joints[j] - f.origin) / f.torso);
    x[2 * j] = p.x();
    x[2 * j + 1] = p.y();
  }
  return x;
}

/// Camera in the normalized frame: (log(scale / torso), (tx - ox) / torso, (ty - oy) / torso).
inline Vec3 camera_to_normalized(const Camera& c, const NormalizationFrame& f) {
  return {std::log(c.scale / f.torso), (c.tx - f.origin.x()) / f.torso, (c.ty - f.origin.y()) / f.torso};
}

inline Camera camera_from_normalized(const Vec3& n, const NormalizationFrame& f) {
  return {f.torso * std::exp(n[0]), f.origin.x() + f.torso * n[1], f.origin.y() + f.torso * n[2]};
}

// ---------------------------------------------------------------------------
// Parameters

/// Trunk of two rectified hidden layers and three linear heads (pose, bone
/// scales, camera). All tensors are stored as matrices; biases are columns.
struct MLPParams {
  enum Tensor { kW1, kB1, kW2, kB2, kWPose, kBPose, kWScale, kBScale, kWCamera, kBCamera, kNumTensors };

  int hidden1 = 256;
  int hidden2 = 256;
  bool rectify = true;  // false turns the trunk into a linear map
  std::array<Eigen::MatrixXd, kNumTensors> t;

  std::array<std::pair<int, int>, kNumTensors> shapes() const {
    return {{{hidden1, kInputSize},
             {hidden1, 1},
             {hidden2, hidden1},
             {hidden2, 1},
             {kPoseOutputs, hidden2},
             {kPoseOutputs, 1},
             {kScaleOutputs, hidden2},
             {kScaleOutputs, 1},
             {kCameraOutputs, hidden2},
             {kCameraOutputs, 1}}};
  }

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& m : t) n += m.size();
    return n;
  }

  /// Flat access in tensor order, column-major within a tensor.
  double& at(std::size_t k) {
    for (auto& m : t) {
      if (k < static_cast<std::size_t>(m.size())) return m.data()[k];
      k -= m.size();
    }
    throw std::out_of_range("parameter index");
  }

  void validate() const {
    const auto sh = shapes();
    for (int i = 0; i < kNumTensors; ++i) {
      if (t[i].rows() != sh[i].first || t[i].cols() != sh[i].second)
        throw ValidationError("regressor tensor shapes are inconsistent");
      if (!t[i].allFinite()) throw ValidationError("regressor parameters are not finite");
    }
  }

  bool operator==(const MLPParams& o) const {
    if (hidden1 != o.hidden1 || hidden2 != o.hidden2 || rectify != o.rectify) return false;
    for (int i = 0; i < kNumTensors; ++i)
      if (t[i].rows() != o.t[i].rows() || t[i].cols() != o.t[i].cols() || t[i] != o.t[i]) return false;
    return true;
  }
};

/// Bias of the scale head that puts every bone scale at 1.
inline double unit_scale_bias() { return std::log(std::expm1(1.0 - kScaleFloor)); }

inline MLPParams zero_params(int hidden1 = 256, int hidden2 = 256) {
  MLPParams p;
  p.hidden1 = hidden1;
  p.hidden2 = hidden2;
  const auto sh = p.shapes();
  for (int i = 0; i < MLPParams::kNumTensors; ++i) p.t[i] = Eigen::MatrixXd::Zero(sh[i].first, sh[i].second);
  return p;
}

/// He-normal trunk, small heads, biases at the rest pose with unit scales.
inline MLPParams init_params(std::uint64_t seed, int hidden1 = 256, int hidden2 = 256) {
  MLPParams p = zero_params(hidden1, hidden2);
  Rng rng(seed);
  auto fill = [&](Eigen::MatrixXd& m, double sd) {
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = sd * rng.normal();
  };
  fill(p.t[MLPParams::kW1], std::sqrt(2.0 / kInputSize));
  fill(p.t[MLPParams::kW2], std::sqrt(2.0 / hidden1));
  fill(p.t[MLPParams::kWPose], 0.1 * std::sqrt(1.0 / hidden2));
  fill(p.t[MLPParams::kWScale], 0.1 * std::sqrt(1.0 / hidden2));
  fill(p.t[MLPParams::kWCamera], 0.1 * std::sqrt(1.0 / hidden2));
  p.t[MLPParams::kBScale].setConstant(unit_scale_bias());
  return p;
}

// ---------------------------------------------------------------------------
// Forward pass

namespace detail {

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace detail

struct RegressorOutput {
  PoseParams pose;       // root position stays at the origin
  BoneScales scales;
  Vec3 camera = Vec3::Zero();  // normalized frame, see camera_to_normalized
};

/// Preallocated buffers so that repeated single-sample inference does not allocate.
struct Workspace {
  Eigen::VectorXd h1, h2, pose, scale, camera;
};

inline RegressorOutput decode_heads(const Eigen::Ref<const Eigen::VectorXd>& pose,
                                    const Eigen::Ref<const Eigen::VectorXd>& scale,
                                    const Eigen::Ref<const Eigen::VectorXd>& camera) {
  RegressorOutput out;
  out.pose.root_orientation = pose.segment<3>(0);
  for (int j = 0; j < kNumJoints; ++j) out.pose.joint_rotations[j] = pose.segment<3>(3 + 3 * j);
  for (int i = 0; i < kNumBones; ++i) out.scales.scales[i] = detail::softplus(scale[i]) + kScaleFloor;
  out.camera = camera.head<3>();
  return out;
}

inline RegressorOutput forward(const MLPParams& p, const Eigen::Ref<const Eigen::VectorXd>& input,
                               Workspace& ws) {
  using T = MLPParams;
  if (input.size() != kInputSize || !input.allFinite())
    throw ValidationError("regressor input must be 32 finite values");
  ws.h1.resize(p.hidden1);
  ws.h2.resize(p.hidden2);
  ws.pose.resize(kPoseOutputs);
  ws.scale.resize(kScaleOutputs);
  ws.camera.resize(kCameraOutputs);
  ws.h1.noalias() = p.t[T::kW1] * input;
  ws.h1 += p.t[T::kB1];
  if (p.rectify) ws.h1 = ws.h1.cwiseMax(0.0);
  ws.h2.noalias() = p.t[T::kW2] * ws.h1;
  ws.h2 += p.t[T::kB2];
  if (p.rectify) ws.h2 = ws.h2.cwiseMax(0.0);
  ws.pose.noalias() = p.t[T::kWPose] * ws.h2;
  ws.pose += p.t[T::kBPose];
  ws.scale.noalias() = p.t[T::kWScale] * ws.h2;
  ws.scale += p.t[T::kBScale];
  ws.camera.noalias() = p.t[T::kWCamera] * ws.h2;
  ws.camera += p.t[T::kBCamera];
  return decode_heads(ws.pose, ws.scale, ws.camera);
}

inline RegressorOutput forward(const MLPParams& p, const Eigen::Ref<const Eigen::VectorXd>& input) {
  Workspace ws;
  return forward(p, input, ws);
}

/// Full prediction from 2D joints: normalizes, runs the network and maps the
/// camera back to pixels.
inline EstimationState predict(const MLPParams& p, const Pose2D& pose2d, const JointLabels& labels,
                               Workspace& ws) {
  const NormalizationFrame f = normalization_frame(pose2d, labels);
  const RegressorOutput o = forward(p, normalize_joints(pose2d, labels), ws);
  return {o.pose, o.scales, camera_from_normalized(o.camera, f)};
}

inline EstimationState predict(const MLPParams& p, const Pose2D& pose2d, const JointLabels& labels) {
  Workspace ws;
  return predict(p, pose2d, labels, ws);
}

// ---------------------------------------------------------------------------
// Training objective

/// One prepared training example.
struct TrainExample {
  Eigen::VectorXd input;
  LossTargets targets;
  Vec3 camera;  // normalized ground-truth camera
};

/// Targets follow the fitter's convention: perturbed 2D joints, clean 3D
/// joints, ground-truth parameters, and bones touching excluded joints masked.
inline TrainExample make_example(const DatasetSample& s, const SkeletonTopology& topology = canonical_topology()) {
  TrainExample e;
  e.input = normalize_joints(s.joints2d_perturbed, s.labels);
  const NormalizationFrame f = normalization_frame(s.joints2d_perturbed, s.labels);
  e.targets.joints2d = s.joints2d_perturbed;
  e.targets.joints3d = s.joints3d;
  e.targets.camera = s.camera;
  e.targets.pose = s.pose_params;
  e.targets.scales = s.bone_scales;
  e.targets.bone_mask = detail::bone_mask_from(included_mask(s.labels), topology);
  e.camera = camera_to_normalized(s.camera, f);
  return e;
}

/// Loss on one example and its gradient with respect to the raw head outputs.
///
/// The total loss never sees the camera (every term is built from bone
/// directions and ratios), so the camera head is fitted by an extra mean-L1
/// term in the normalized frame.
struct HeadLoss {
  double total = 0.0;   // objective including the camera term
  double objective = 0.0;  // total loss only
  Eigen::VectorXd d_pose, d_scale, d_camera;
};

inline HeadLoss head_loss(const Eigen::Ref<const Eigen::VectorXd>& pose, const Eigen::Ref<const Eigen::VectorXd>& scale,
                          const Eigen::Ref<const Eigen::VectorXd>& camera, const TrainExample& ex,
                          const LossWeights& weights, double camera_weight, RatioMode mode,
                          const SkeletonTopology& topology) {
  const RegressorOutput o = decode_heads(pose, scale, camera);
  EstimationState st{o.pose, o.scales, ex.targets.camera};
  const LossBreakdown b = total_loss(st, ex.targets, weights, topology, mode);
  HeadLoss h;
  h.objective = b.total;
  h.d_pose = b.gradient.segment(layout::kRootOrientation, kPoseOutputs);
  h.d_scale.resize(kScaleOutputs);
  for (int i = 0; i < kNumBones; ++i)
    h.d_scale[i] = b.gradient[layout::kBoneScales + i] * detail::sigmoid(scale[i]);
  h.d_camera.resize(kCameraOutputs);
  double cam = 0.0;
  for (int k = 0; k < kCameraOutputs; ++k) {
    const double d = camera[k] - ex.camera[k];
    cam += std::abs(d) / kCameraOutputs;
    h.d_camera[k] = camera_weight * detail::sign(d) / kCameraOutputs;
  }
  h.total = b.total + camera_weight * cam;
  return h;
}

struct TrainConfig {
  int epochs = 50;
  int batch_size = 64;
  double learning_rate = 1e-3;
  double lr_decay = 0.95;  // per epoch
  LossWeights weights;
  double camera_weight = 1.0;
  RatioMode ratio_mode = RatioMode::kCosine;
  std::uint64_t seed = 0;
  double val_fraction = 0.1;
  int hidden1 = 256;
  int hidden2 = 256;
  // Leading epochs trained on the pose and shape terms only; the direction
  // terms have many flipped-depth minima that a fresh network falls into.
  int warmup_epochs = 10;

  void validate() const {
    if (warmup_epochs < 0) throw ValidationError("warmup_epochs must be non-negative");
    if (epochs < 1) throw ValidationError("epochs must be at least 1");
    if (batch_size < 1) throw ValidationError("batch_size must be at least 1");
    if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be positive");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ValidationError("lr_decay must lie in (0, 1]");
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ValidationError("val_fraction must lie in (0, 1)");
    if (!(camera_weight >= 0.0)) throw ValidationError("camera_weight must be non-negative");
    if (hidden1 < 1 || hidden2 < 1) throw ValidationError("hidden widths must be positive");
    weights.validate();
  }
};

struct Gradients {
  std::array<Eigen::MatrixXd, MLPParams::kNumTensors> t;
};

namespace detail {

// Forward and backward over a batch of examples (columns of `X`). Returns the
// mean objective, the mean total-loss part, and accumulates mean gradients.
struct BatchResult {
  double total = 0.0;
  double objective = 0.0;
};

inline BatchResult batch_gradients(const MLPParams& p, const std::vector<const TrainExample*>& batch,
                                   const TrainConfig& cfg, const SkeletonTopology& topology,
                                   Gradients* grads, const LossWeights* weights = nullptr) {
  using T = MLPParams;
  const Eigen::Index n = static_cast<Eigen::Index>(batch.size());
  Eigen::MatrixXd X(kInputSize, n);
  for (Eigen::Index k = 0; k < n; ++k) X.col(k) = batch[k]->input;
  Eigen::MatrixXd A1 = (p.t[T::kW1] * X).colwise() + p.t[T::kB1].col(0);
  const Eigen::MatrixXd H1 = p.rectify ? Eigen::MatrixXd(A1.cwiseMax(0.0)) : A1;
  Eigen::MatrixXd A2 = (p.t[T::kW2] * H1).colwise() + p.t[T::kB2].col(0);
  const Eigen::MatrixXd H2 = p.rectify ? Eigen::MatrixXd(A2.cwiseMax(0.0)) : A2;
  const Eigen::MatrixXd P = (p.t[T::kWPose] * H2).colwise() + p.t[T::kBPose].col(0);
  const Eigen::MatrixXd S = (p.t[T::kWScale] * H2).colwise() + p.t[T::kBScale].col(0);
  const Eigen::MatrixXd C = (p.t[T::kWCamera] * H2).colwise() + p.t[T::kBCamera].col(0);

  Eigen::MatrixXd dP(kPoseOutputs, n), dS(kScaleOutputs, n), dC(kCameraOutputs, n);
  BatchResult r;
  for (Eigen::Index k = 0; k < n; ++k) {
    const HeadLoss h = head_loss(P.col(k), S.col(k), C.col(k), *batch[k], weights ? *weights : cfg.weights,
                                 cfg.camera_weight, cfg.ratio_mode, topology);
    r.total += h.total;
    r.objective += h.objective;
    dP.col(k) = h.d_pose;
    dS.col(k) = h.d_scale;
    dC.col(k) = h.d_camera;
  }
  r.total /= n;
  r.objective /= n;
  if (!grads) return r;

  const double inv = 1.0 / n;
  dP *= inv;
  dS *= inv;
  dC *= inv;
  auto& g = grads->t;
  g[T::kWPose].noalias() = dP * H2.transpose();
  g[T::kBPose] = dP.rowwise().sum();
  g[T::kWScale].noalias() = dS * H2.transpose();
  g[T::kBScale] = dS.rowwise().sum();
  g[T::kWCamera].noalias() = dC * H2.transpose();
  g[T::kBCamera] = dC.rowwise().sum();
  Eigen::MatrixXd dH2 = p.t[T::kWPose].transpose() * dP;
  dH2.noalias() += p.t[T::kWScale].transpose() * dS;
  dH2.noalias() += p.t[T::kWCamera].transpose() * dC;
  if (p.rectify) dH2 = dH2.cwiseProduct((A2.array() > 0.0).cast<double>().matrix());
  g[T::kW2].noalias() = dH2 * H1.transpose();
  g[T::kB2] = dH2.rowwise().sum();
  Eigen::MatrixXd dH1 = p.t[T::kW2].transpose() * dH2;
  if (p.rectify) dH1 = dH1.cwiseProduct((A1.array() > 0.0).cast<double>().matrix());
  g[T::kW1].noalias() = dH1 * X.transpose();
  g[T::kB1] = dH1.rowwise().sum();
  return r;
}

}  // namespace detail

struct EpochStats {
  double train_loss = 0.0;  // mean loss over training batches, warm-up weights during warm-up
  double val_loss = 0.0;    // mean total loss on the validation split
};

struct TrainResult {
  MLPParams params;
  std::vector<EpochStats> history;
  std::vector<std::size_t> train_indices;  // dataset positions
  std::vector<std::size_t> val_indices;
  std::size_t skipped = 0;  // samples whose input could not be normalized
  bool diverged = false;
};

/// Seeded split of n samples; the validation part is the last
/// round(n * fraction) entries of a shuffled order.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double fraction,
                                                                                   std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(mix_seed(seed) ^ 0x5111);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.next() % i]);
  const std::size_t nval = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(n * fraction)), 1, n - 1);
  std::vector<std::size_t> train(order.begin(), order.end() - nval), val(order.end() - nval, order.end());
  return {train, val};
}

/// Mini-batch Adam on the total loss through forward kinematics.
///
/// Deterministic for a fixed seed: shuffles come from the seed and the
/// gradient is summed in batch order. A non-finite loss stops training and
/// returns the parameters from the start of that epoch.
inline TrainResult train(const std::vector<DatasetSample>& dataset, const TrainConfig& cfg,
                         const std::function<void(int, const EpochStats&)>& on_epoch = {},
                         const SkeletonTopology& topology = canonical_topology()) {
  cfg.validate();
  if (dataset.size() < 100) throw ValidationError("training needs at least 100 samples");
  TrainResult res;
  std::tie(res.train_indices, res.val_indices) = split_indices(dataset.size(), cfg.val_fraction, cfg.seed);

  auto prepare = [&](const std::vector<std::size_t>& idx) {
    std::vector<TrainExample> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) {
      try {
        out.push_back(make_example(dataset[i], topology));
      } catch (const ValidationError&) {
        ++res.skipped;
      }
    }
    return out;
  };
  const std::vector<TrainExample> train_set = prepare(res.train_indices);
  const std::vector<TrainExample> val_set = prepare(res.val_indices);
  if (train_set.empty()) throw ValidationError("no usable training samples");

  MLPParams p = init_params(cfg.seed, cfg.hidden1, cfg.hidden2);
  Gradients g;
  std::array<Eigen::MatrixXd, MLPParams::kNumTensors> m, v;
  for (int i = 0; i < MLPParams::kNumTensors; ++i) {
    m[i] = Eigen::MatrixXd::Zero(p.t[i].rows(), p.t[i].cols());
    v[i] = m[i];
  }
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  long step = 0;
  Rng rng(mix_seed(cfg.seed) ^ 0x7a11);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  auto mean_loss = [&](const std::vector<TrainExample>& set) {
    double sum = 0.0;
    std::vector<const TrainExample*> batch;
    for (std::size_t s = 0; s < set.size(); s += cfg.batch_size) {
      batch.clear();
      for (std::size_t k = s; k < std::min(set.size(), s + cfg.batch_size); ++k) batch.push_back(&set[k]);
      sum += detail::batch_gradients(p, batch, cfg, topology, nullptr).objective * batch.size();
    }
    return set.empty() ? 0.0 : sum / set.size();
  };

  std::vector<const TrainExample*> batch;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const MLPParams epoch_start = p;
    const double lr = cfg.learning_rate * std::pow(cfg.lr_decay, epoch);
    LossWeights active = cfg.weights;
    if (epoch < cfg.warmup_epochs && (active.pose > 0.0 || active.shape > 0.0))
      active.parallel = active.foreshortening = 0.0;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.next() % i]);
    double sum = 0.0;
    bool finite = true;
    for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) {
      batch.clear();
      for (std::size_t k = s; k < std::min(order.size(), s + cfg.batch_size); ++k)
        batch.push_back(&train_set[order[k]]);
      double objective;
      try {
        objective = detail::batch_gradients(p, batch, cfg, topology, &g, &active).objective;
      } catch (const NumericalError&) {
        objective = std::numeric_limits<double>::quiet_NaN();
      }
      if (!std::isfinite(objective)) {
        finite = false;
        break;
      }
      sum += objective * batch.size();
      ++step;
      const double c1 = 1.0 - std::pow(kBeta1, step), c2 = 1.0 - std::pow(kBeta2, step);
      for (int i = 0; i < MLPParams::kNumTensors; ++i) {
        m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g.t[i];
        v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g.t[i].cwiseProduct(g.t[i]);
        p.t[i].array() -= lr * (m[i].array() / c1) / ((v[i].array() / c2).sqrt() + kEps);
      }
    }
    if (!finite || !std::all_of(p.t.begin(), p.t.end(), [](const auto& t) { return t.allFinite(); })) {
      res.diverged = true;
      p = epoch_start;
      break;
    }
    EpochStats st{sum / order.size(), mean_loss(val_set)};
    res.history.push_back(st);
    if (on_epoch) on_epoch(epoch, st);
  }
  res.params = std::move(p);
  return res;
}

/// Mean PA-MPJPE of the regressor and of the constant rest pose (unit scales)
/// over the given dataset positions, from the perturbed 2D joints. Samples the
/// network cannot take are counted in `skipped` and left out of both means.
struct SplitScore {
  double pa_mpjpe_mm = 0.0;
  double rest_pa_mpjpe_mm = 0.0;
  std::size_t count = 0;
  std::size_t skipped = 0;
};

inline SplitScore score_split(const MLPParams& params, const std::vector<DatasetSample>& dataset,
                              const std::vector<std::size_t>& indices,
                              const SkeletonTopology& topology = canonical_topology()) {
  SplitScore s;
  const Pose3D rest = forward_kinematics(topology, PoseParams{}, BoneScales{});
  Workspace ws;
  for (std::size_t i : indices) {
    const DatasetSample& d = dataset.at(i);
    EstimationState st;
    try {
      st = predict(params, d.joints2d_perturbed, d.labels, ws);
    } catch (const ValidationError&) {
      ++s.skipped;
      continue;
    }
    s.pa_mpjpe_mm += pa_mpjpe(forward_kinematics(topology, st.pose, st.scales), d.joints3d);
    s.rest_pa_mpjpe_mm += pa_mpjpe(rest, d.joints3d);
    ++s.count;
  }
  if (s.count) {
    s.pa_mpjpe_mm /= s.count;
    s.rest_pa_mpjpe_mm /= s.count;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Gradient check

struct BackpropReport {
  std::size_t checked = 0;
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
};

/// Backpropagated weight gradients against central differences on a seeded
/// random 1% of the parameters (at least one), for one example.
///
/// The loss sits around 10 to 20 while single weights can have gradients near
/// 1e-8, where central differences carry only rounding noise (about eps*|f|/h).
/// Each entry is therefore divided by max(|analytic|, |numeric|, 1e6 * eps*|f|/h),
/// so rounding alone can never contribute more than 1e-6.
inline BackpropReport backprop_check(const MLPParams& params, const TrainExample& example, double h,
                                     const TrainConfig& cfg = {}, std::uint64_t seed = 0,
                                     double fraction = 0.01,
                                     const SkeletonTopology& topology = canonical_topology()) {
  if (!(h > 1e-8 && h < 1e-3)) throw ValidationError("finite-difference step must lie in (1e-8, 1e-3)");
  const std::vector<const TrainExample*> batch{&example};
  Gradients g;
  const double f0 = detail::batch_gradients(params, batch, cfg, topology, &g).total;
  const double floor = 1e6 * std::numeric_limits<double>::epsilon() * std::abs(f0) / h;
  std::vector<double> analytic;
  analytic.reserve(params.size());
  for (const auto& t : g.t) analytic.insert(analytic.end(), t.data(), t.data() + t.size());

  BackpropReport rep;
  MLPParams p = params;
  Rng rng(seed);
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (rng.uniform() >= fraction && !(k + 1 == p.size() && rep.checked == 0)) continue;
    const double x = p.at(k);
    p.at(k) = x + h;
    const double fp = detail::batch_gradients(p, batch, cfg, topology, nullptr).total;
    p.at(k) = x - h;
    const double fm = detail::batch_gradients(p, batch, cfg, topology, nullptr).total;
    p.at(k) = x;
    const double numeric = (fp - fm) / (2.0 * h);
    const double scale = std::max({std::abs(analytic[k]), std::abs(numeric), floor});
    const double err = scale > 0.0 ? std::abs(analytic[k] - numeric) / scale : 0.0;
    ++rep.checked;
    if (err > rep.max_relative_error) {
      rep.max_relative_error = err;
      rep.worst_index = k;
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Checkpoint: "SKPM", u32 version, u32 input, hidden1, hidden2, pose, scale,
// camera, u32 flags (bit 0: rectify), then every tensor row-major as
// little-endian float64 in tensor order.

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_le(std::ostream& os, std::uint64_t v, int bytes) {
  char b[8];
  for (int i = 0; i < bytes; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b, bytes);
}

inline std::uint64_t get_le(std::istream& is, int bytes) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), bytes)) throw std::runtime_error("checkpoint truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= std::uint64_t(b[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const MLPParams& p) {
  p.validate();
  os.write("SKPM", 4);
  for (std::uint32_t v : {kCheckpointVersion, std::uint32_t(kInputSize), std::uint32_t(p.hidden1),
                          std::uint32_t(p.hidden2), std::uint32_t(kPoseOutputs), std::uint32_t(kScaleOutputs),
                          std::uint32_t(kCameraOutputs), std::uint32_t(p.rectify ? 1 : 0)})
    detail::put_le(os, v, 4);
  for (const auto& t : p.t)
    for (Eigen::Index r = 0; r < t.rows(); ++r)
      for (Eigen::Index c = 0; c < t.cols(); ++c) detail::put_le(os, std::bit_cast<std::uint64_t>(t(r, c)), 8);
  if (!os) throw std::runtime_error("failed to write checkpoint");
}

inline MLPParams read_checkpoint(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != "SKPM") throw std::runtime_error("not a regressor checkpoint");
  if (detail::get_le(is, 4) != kCheckpointVersion) throw std::runtime_error("unsupported checkpoint version");
  const auto in = detail::get_le(is, 4);
  const auto h1 = detail::get_le(is, 4), h2 = detail::get_le(is, 4);
  const auto np = detail::get_le(is, 4), ns = detail::get_le(is, 4), nc = detail::get_le(is, 4);
  const auto flags = detail::get_le(is, 4);
  if (in != kInputSize || np != kPoseOutputs || ns != kScaleOutputs || nc != kCameraOutputs || h1 == 0 ||
      h2 == 0 || h1 > 65536 || h2 > 65536)
    throw std::runtime_error("checkpoint layer dimensions do not match");
  MLPParams p = zero_params(static_cast<int>(h1), static_cast<int>(h2));
  p.rectify = flags & 1u;
  for (auto& t : p.t)
    for (Eigen::Index r = 0; r < t.rows(); ++r)
      for (Eigen::Index c = 0; c < t.cols(); ++c) t(r, c) = std::bit_cast<double>(detail::get_le(is, 8));
  p.validate();
  return p;
}

}  // namespace sketchpose
