#pragma once

#include <cmath>
#include <fstream>
#include <functional>
#include <istream>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sketchpose/fitter.hpp"
#include "sketchpose/synth.hpp"

namespace sketchpose {

using Json = nlohmann::json;

/// A file could not be opened, read or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed record; `line` is 1-based, 0 when not tied to a line.
class DataError : public std::runtime_error {
 public:
  DataError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what), line(line) {}
  std::size_t line;
};

namespace io_detail {

template <int N>
Json vec_json(const Eigen::Matrix<double, N, 1>& v) {
  Json a = Json::array();
  for (int i = 0; i < N; ++i) a.push_back(v[i]);
  return a;
}

template <int N>
Eigen::Matrix<double, N, 1> json_vec(const Json& j) {
  if (!j.is_array() || j.size() != N) throw DataError("expected an array of " + std::to_string(N) + " numbers");
  Eigen::Matrix<double, N, 1> v;
  for (int i = 0; i < N; ++i) {
    if (!j[i].is_number()) throw DataError("expected a number");
    v[i] = j[i].get<double>();
    if (!std::isfinite(v[i])) throw DataError("non-finite number");
  }
  return v;
}

template <class Pose>
Json pose_json(const Pose& p) {
  Json a = Json::array();
  for (const auto& j : p.joints) a.push_back(vec_json(j));
  return a;
}

template <class Pose>
Pose json_pose(const Json& j) {
  if (!j.is_array() || j.size() != kNumJoints) throw DataError("expected 16 joints");
  Pose p;
  constexpr int dim = decltype(p.joints)::value_type::RowsAtCompileTime;
  for (int k = 0; k < kNumJoints; ++k) p.joints[k] = json_vec<dim>(j[k]);
  return p;
}

inline double json_number(const Json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_number()) throw DataError(std::string("missing number '") + key + "'");
  const double v = j.at(key).get<double>();
  if (!std::isfinite(v)) throw DataError(std::string("non-finite '") + key + "'");
  return v;
}

inline const Json& field(const Json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw DataError(std::string("missing field '") + key + "'");
  return j.at(key);
}

inline std::uint64_t json_u64(const Json& j, const char* key) {
  const Json& v = field(j, key);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
    throw DataError(std::string("field '") + key + "' must be a non-negative integer");
  return v.get<std::uint64_t>();
}

template <std::size_t N>
std::array<double, N> json_doubles(const Json& j) {
  if (!j.is_array() || j.size() != N) throw DataError("expected an array of " + std::to_string(N) + " numbers");
  std::array<double, N> a;
  for (std::size_t i = 0; i < N; ++i) {
    if (!j[i].is_number()) throw DataError("expected a number");
    a[i] = j[i].get<double>();
    if (!std::isfinite(a[i])) throw DataError("non-finite number");
  }
  return a;
}

}  // namespace io_detail

// ---------------------------------------------------------------------------
// Parameter blocks

inline Json to_json(const PoseParams& p) {
  Json rot = Json::array();
  for (const auto& r : p.joint_rotations) rot.push_back(io_detail::vec_json(r));
  return {{"root_orientation", io_detail::vec_json(p.root_orientation)},
          {"root_position", io_detail::vec_json(p.root_position)},
          {"joint_rotations", rot}};
}

inline PoseParams pose_params_from_json(const Json& j) {
  using namespace io_detail;
  PoseParams p;
  p.root_orientation = json_vec<3>(field(j, "root_orientation"));
  p.root_position = json_vec<3>(field(j, "root_position"));
  const Json& rot = field(j, "joint_rotations");
  if (!rot.is_array() || rot.size() != kNumJoints) throw DataError("joint_rotations needs 16 entries");
  for (int k = 0; k < kNumJoints; ++k) p.joint_rotations[k] = json_vec<3>(rot[k]);
  return p;
}

inline Json to_json(const Camera& c) { return {{"scale", c.scale}, {"tx", c.tx}, {"ty", c.ty}}; }

inline Camera camera_from_json(const Json& j) {
  Camera c{io_detail::json_number(j, "scale"), io_detail::json_number(j, "tx"), io_detail::json_number(j, "ty")};
  if (!(c.scale > 0.0)) throw DataError("camera scale must be positive");
  return c;
}

inline BoneScales bone_scales_from_json(const Json& j) {
  BoneScales s;
  s.scales = io_detail::json_doubles<kNumBones>(j);
  for (double v : s.scales)
    if (!(v > 0.0)) throw DataError("bone scales must be positive");
  return s;
}

inline Json labels_json(const JointLabels& labels) {
  Json a = Json::array();
  for (auto l : labels) a.push_back(std::string(to_string(l)));
  return a;
}

inline JointLabels labels_from_json(const Json& j) {
  if (!j.is_array() || j.size() != kNumJoints) throw DataError("labels needs 16 entries");
  JointLabels l;
  for (int k = 0; k < kNumJoints; ++k) {
    if (!j[k].is_string()) throw DataError("labels must be strings");
    try {
      l[k] = parse_joint_label(j[k].get<std::string>());
    } catch (const ValidationError&) {
      throw DataError("unknown label '" + j[k].get<std::string>() + "'");
    }
  }
  return l;
}

// ---------------------------------------------------------------------------
// Dataset samples

inline Json to_json(const DatasetSample& s) {
  return {{"id", s.id},
          {"joints2d_clean", io_detail::pose_json(s.joints2d_clean)},
          {"joints2d_perturbed", io_detail::pose_json(s.joints2d_perturbed)},
          {"joints3d", io_detail::pose_json(s.joints3d)},
          {"pose_params", to_json(s.pose_params)},
          {"bone_scales", s.bone_scales.scales},
          {"camera", to_json(s.camera)},
          {"labels", labels_json(s.labels)},
          {"bbox", {s.bbox.x, s.bbox.y, s.bbox.w, s.bbox.h}},
          {"perturb", s.perturb.deltas},
          {"seed", s.seed}};
}

inline DatasetSample sample_from_json(const Json& j) {
  using namespace io_detail;
  if (!j.is_object()) throw DataError("sample must be a JSON object");
  DatasetSample s;
  s.id = json_u64(j, "id");
  s.joints2d_clean = json_pose<Pose2D>(field(j, "joints2d_clean"));
  s.joints2d_perturbed = json_pose<Pose2D>(field(j, "joints2d_perturbed"));
  s.joints3d = json_pose<Pose3D>(field(j, "joints3d"));
  s.pose_params = pose_params_from_json(field(j, "pose_params"));
  s.bone_scales = bone_scales_from_json(field(j, "bone_scales"));
  s.camera = camera_from_json(field(j, "camera"));
  s.labels = labels_from_json(field(j, "labels"));
  const auto b = json_doubles<4>(field(j, "bbox"));
  s.bbox = {b[0], b[1], b[2], b[3]};
  s.perturb.deltas = json_doubles<kNumBones>(field(j, "perturb"));
  s.seed = json_u64(j, "seed");
  return s;
}

// ---------------------------------------------------------------------------
// Predictions

/// One estimate for one dataset sample, from either the fitter or the regressor.
struct Prediction {
  std::uint64_t id = 0;
  EstimationState state;
  Pose3D joints3d;  // forward kinematics of `state`
  std::optional<double> loss;
  std::optional<int> iterations;
  std::optional<bool> converged;
};

inline Prediction make_prediction(std::uint64_t id, const EstimationState& state,
                                  const SkeletonTopology& topology = canonical_topology()) {
  return {id, state, forward_kinematics(topology, state.pose, state.scales), {}, {}, {}};
}

inline Json to_json(const Prediction& p) {
  Json j = {{"id", p.id},
            {"pose_params", to_json(p.state.pose)},
            {"bone_scales", p.state.scales.scales},
            {"camera", to_json(p.state.camera)},
            {"joints3d", io_detail::pose_json(p.joints3d)}};
  if (p.loss) j["loss"] = *p.loss;
  if (p.iterations) j["iterations"] = *p.iterations;
  if (p.converged) j["converged"] = *p.converged;
  return j;
}

inline Prediction prediction_from_json(const Json& j) {
  using namespace io_detail;
  if (!j.is_object()) throw DataError("prediction must be a JSON object");
  Prediction p;
  p.id = json_u64(j, "id");
  p.state.pose = pose_params_from_json(field(j, "pose_params"));
  p.state.scales = bone_scales_from_json(field(j, "bone_scales"));
  p.state.camera = camera_from_json(field(j, "camera"));
  p.joints3d = json_pose<Pose3D>(field(j, "joints3d"));
  if (j.contains("loss")) p.loss = json_number(j, "loss");
  if (j.contains("iterations")) p.iterations = static_cast<int>(json_number(j, "iterations"));
  if (j.contains("converged")) {
    if (!j.at("converged").is_boolean()) throw DataError("'converged' must be a boolean");
    p.converged = j.at("converged").get<bool>();
  }
  return p;
}

// ---------------------------------------------------------------------------
// JSON Lines

inline void write_jsonl_line(std::ostream& os, const Json& j) { os << j.dump() << '\n'; }

/// Calls `on_record(json, line_number)` for every non-blank line. Parse errors
/// and DataErrors thrown by the callback are reported with the line number.
inline void read_jsonl(std::istream& is, const std::function<void(const Json&, std::size_t)>& on_record) {
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::parse_error& e) {
      throw DataError(std::string("invalid JSON: ") + e.what(), n);
    }
    try {
      on_record(j, n);
    } catch (const DataError& e) {
      if (e.line) throw;
      throw DataError(e.what(), n);
    }
  }
  if (is.bad()) throw IoError("read failed");
}

inline std::vector<DatasetSample> read_dataset(std::istream& is) {
  std::vector<DatasetSample> out;
  read_jsonl(is, [&](const Json& j, std::size_t) { out.push_back(sample_from_json(j)); });
  return out;
}

inline std::vector<Prediction> read_predictions(std::istream& is) {
  std::vector<Prediction> out;
  read_jsonl(is, [&](const Json& j, std::size_t) { out.push_back(prediction_from_json(j)); });
  return out;
}

// ---------------------------------------------------------------------------
// Files

inline std::ifstream open_input(const std::string& path, bool binary = false) {
  std::ifstream f(path, binary ? std::ios::in | std::ios::binary : std::ios::in);
  if (!f) throw IoError("cannot open '" + path + "' for reading");
  return f;
}

inline std::ofstream open_output(const std::string& path, bool binary = false) {
  std::ofstream f(path, binary ? std::ios::out | std::ios::binary | std::ios::trunc
                               : std::ios::out | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  return f;
}

inline void finish_output(std::ofstream& f, const std::string& path) {
  f.flush();
  if (!f) throw IoError("failed writing '" + path + "'");
}

inline std::vector<DatasetSample> load_dataset(const std::string& path) {
  auto f = open_input(path);
  return read_dataset(f);
}

inline std::vector<Prediction> load_predictions(const std::string& path) {
  auto f = open_input(path);
  return read_predictions(f);
}

inline void save_json(const std::string& path, const Json& j) {
  auto f = open_output(path);
  f << j.dump(2) << '\n';
  finish_output(f, path);
}

}  // namespace sketchpose
