// Acceptance run: one PASS/FAIL line per criterion.
//
// Exits 0 when the set of failing criteria equals the --expect-fail set, so a
// known, analysed failure stays visible without breaking the test run.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <numbers>
#include <set>
#include <sstream>
#include <string>

#include "sketchpose/sketchpose.hpp"

using namespace sketchpose;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

const SkeletonTopology& topo() { return canonical_topology(); }

Vec3 rand3(Rng& rng, double lo, double hi) { return {rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)}; }

Mat3 rotation(const Vec3& w) {
  const double t = w.norm();
  return t == 0.0 ? Mat3::Identity() : Eigen::AngleAxisd(t, w / t).toRotationMatrix();
}

Pose2D random_pose2d(Rng& rng) {
  const EstimationState s = random_state(rng);
  return project(forward_kinematics(topo(), s.pose, s.scales), s.camera);
}

Pose2D rotate_leaf(const Pose2D& p, int parent, int leaf, double angle) {
  Pose2D out = p;
  out.joints[leaf] = p.joints[parent] + Eigen::Rotation2Dd(angle) * (p.joints[leaf] - p.joints[parent]);
  return out;
}

// ---------------------------------------------------------------------------

Outcome loss_identities() {
  const auto t0 = Clock::now();
  Rng rng(101);
  double worst = 0.0;
  bool zero = true;
  for (int k = 0; k < 50; ++k) {
    const EstimationState s = random_state(rng);
    const Pose3D p3 = forward_kinematics(topo(), s.pose, s.scales);
    const Pose2D p2 = project(p3, s.camera);
    zero = zero && loss_parallel(p2, p2) == 0.0 &&
           loss_foreshortening(p3, p2, s.camera, p3, p2, s.camera, RatioMode::kCosine) == 0.0 &&
           loss_foreshortening(p3, p2, s.camera, p3, p2, s.camera, RatioMode::kAsWritten) == 0.0;
    worst = std::max(worst, std::abs(loss_parallel(p2, rotate_leaf(p2, kLElbow, kLWrist, std::numbers::pi / 2)) - 1.0));
    worst = std::max(worst, std::abs(loss_parallel(p2, rotate_leaf(p2, kRElbow, kRWrist, std::numbers::pi / 4)) - 0.5));
  }
  std::array<double, kNumBones> gt, pred;
  gt.fill(1.0);
  pred.fill(1.0);
  gt[3] = 2.0;
  worst = std::max(worst, std::abs(loss_foreshortening_ratios(gt, pred) - 1.0));
  gt[3] = 0.5;
  worst = std::max(worst, std::abs(loss_foreshortening_ratios(gt, pred) - 0.25));
  const double secs = seconds_since(t0);
  return {zero && worst < 1e-9 && secs < 1.0,
          fmt("exact zeros %s, max single-bone deviation %.2e, %.3f s", zero ? "yes" : "no", worst, secs)};
}

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  const GradientSweep g = sweep_gradients(100, 1, 1e-5);
  const auto data = synth_dataset(default_sampler_config(), 100, 202);
  const MLPParams params = init_params(5);
  double bp = 0.0;
  for (std::size_t k = 0; k < data.size(); ++k)
    bp = std::max(bp, backprop_check(params, make_example(data[k]), 1e-5, {}, k).max_relative_error);
  const double secs = seconds_since(t0);
  return {g.checked == 100 && g.max_relative_error < 1e-4 && bp < 1e-3 && secs < 60.0,
          fmt("losses %.2e over %d states (%d kink states replaced), backprop %.2e over 100 examples, %.1f s",
              g.max_relative_error, g.checked, g.skipped, bp, secs)};
}

Outcome parallel_invariances() {
  Rng rng(303);
  double scale_dev = 0.0, rot_dev = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const Pose2D gt = random_pose2d(rng), pred = random_pose2d(rng);
    std::array<double, kNumBones> dg, dp;
    for (int i = 0; i < kNumBones; ++i) {
      dg[i] = rng.uniform(-0.8, 3.0);
      dp[i] = rng.uniform(-0.8, 3.0);
    }
    const double base = loss_parallel(gt, pred);
    scale_dev = std::max(scale_dev, std::abs(loss_parallel(apply_perturbation(gt, topo(), dg).first,
                                                           apply_perturbation(pred, topo(), dp).first) -
                                             base) /
                                        std::max(1.0, base));
    const Eigen::Rotation2Dd R(rng.uniform(-std::numbers::pi, std::numbers::pi));
    Pose2D gr, pr;
    for (int j = 0; j < kNumJoints; ++j) {
      gr.joints[j] = R * gt.joints[j];
      pr.joints[j] = R * pred.joints[j];
    }
    rot_dev = std::max(rot_dev, std::abs(loss_parallel(gr, pr) - base));
  }
  return {scale_dev <= 1e-12 && rot_dev <= 1e-9,
          fmt("rescaling %.2e (<= 1e-12), rotation %.2e (<= 1e-9), 1000 cases", scale_dev, rot_dev)};
}

// Oracle set shared by criteria 4 and 7: noiseless 2D targets.
const std::vector<DatasetSample>& oracle_set() {
  static const auto data = synth_dataset(default_sampler_config(), 200, 1);
  return data;
}

double fitted_error(const FitResult& r, const DatasetSample& s) {
  return pa_mpjpe(forward_kinematics(topo(), r.state.pose, r.state.scales), s.joints3d);
}

Outcome oracle_recovery() {
  int good = 0;
  double slowest = 0.0, mean = 0.0;
  for (const auto& s : oracle_set()) {
    const auto t0 = Clock::now();
    const FitResult r = fit_pose(s.joints2d_clean, s.labels, FitConfig{}, supervision_from_sample(s));
    slowest = std::max(slowest, seconds_since(t0));
    const double e = fitted_error(r, s);
    good += e < 5.0;
    mean += e / oracle_set().size();
  }
  const double frac = double(good) / oracle_set().size();
  return {frac >= 0.95 && slowest < 2.0,
          fmt("%.1f%% under 5 mm (mean %.4f mm), slowest fit %.3f s", 100.0 * frac, mean, slowest)};
}

struct Trained {
  MLPParams params;
  SplitScore score;
  double seconds = 0.0;
};

const Trained& trained_regressor() {
  static const Trained t = [] {
    const auto t0 = Clock::now();
    const auto data = synth_dataset(default_sampler_config(), 10000, 1);
    const TrainResult r = train(data, TrainConfig{});
    return Trained{r.params, score_split(r.params, data, r.val_indices), seconds_since(t0)};
  }();
  return t;
}

Outcome learn_from_synthesis() {
  const Trained& t = trained_regressor();
  const double ratio = t.score.pa_mpjpe_mm / t.score.rest_pa_mpjpe_mm;
  return {ratio <= 0.5 && t.seconds < 1800.0,
          fmt("val PA-MPJPE %.2f mm vs rest pose %.2f mm (ratio %.3f, need <= 0.5), %zu samples, %.0f s",
              t.score.pa_mpjpe_mm, t.score.rest_pa_mpjpe_mm, ratio, t.score.count, t.seconds)};
}

Outcome speedup() {
  const MLPParams& params = trained_regressor().params;
  const auto data = synth_dataset(default_sampler_config(), 200, 606);
  const FitConfig cfg;
  Workspace ws;
  const BenchReport r = bench(
      [&](std::size_t k) {
        fit_pose(data[k].joints2d_perturbed, data[k].labels, cfg, supervision_from_sample(data[k]));
      },
      [&](std::size_t k) {
        const EstimationState s = predict(params, data[k].joints2d_perturbed, data[k].labels, ws);
        forward_kinematics(topo(), s.pose, s.scales);
      },
      data.size(), 3);
  return {r.speedup >= 50.0, fmt("fitter %.2f ms vs regressor %.4f ms median, speedup %.0fx (need >= 50)",
                                 1e3 * r.slow.median, 1e3 * r.fast.median, r.speedup)};
}

Outcome ablation() {
  auto mean_error = [](const FitConfig& cfg) {
    const auto res = fit_batch(oracle_set(), cfg, FitTarget::kClean);
    double m = 0.0;
    for (std::size_t k = 0; k < res.size(); ++k) m += fitted_error(*res[k].result, oracle_set()[k]) / res.size();
    return m;
  };
  FitConfig full, no_par, no_fore;
  no_par.weights.parallel = 0.0;
  no_fore.weights.foreshortening = 0.0;
  const double f = mean_error(full), p = mean_error(no_par), q = mean_error(no_fore);
  return {p > f && p >= q, fmt("full %.4f mm, without parallel %.4f mm, without foreshortening %.4f mm", f, p, q)};
}

// The per-sample inequality is checked on two prediction sets: jittered
// ground truth, and the trained regressor's predictions on a fresh set.
Outcome metric_properties() {
  const auto data = synth_dataset(default_sampler_config(), 1000, 808);
  Rng rng(808);
  int jitter_violations = 0, regressor_violations = 0, regressor_cases = 0;
  double worst_excess = 0.0, worst_similarity = 0.0;
  auto check = [&](const Pose3D& pred, const Pose3D& gt, int& violations) {
    const double excess = pa_mpjpe(pred, gt) - mpjpe(pred, gt);
    if (excess > 1e-9) ++violations;
    worst_excess = std::max(worst_excess, excess);
  };
  for (const auto& s : data) {
    Pose3D pred = s.joints3d;
    for (auto& j : pred.joints) j += rand3(rng, -0.02, 0.02);
    check(pred, s.joints3d, jitter_violations);
    Similarity t;
    t.scale = rng.uniform(0.2, 5.0);
    t.rotation = rotation(rand3(rng, -3.0, 3.0));
    t.translation = rand3(rng, -2.0, 2.0);
    worst_similarity = std::max(worst_similarity, pa_mpjpe(t.apply(s.joints3d), s.joints3d));
  }
  Workspace ws;
  for (const auto& s : data) {
    try {
      const EstimationState st = predict(trained_regressor().params, s.joints2d_perturbed, s.labels, ws);
      check(forward_kinematics(topo(), st.pose, st.scales), s.joints3d, regressor_violations);
      ++regressor_cases;
    } catch (const ValidationError&) {
    }
  }
  return {jitter_violations + regressor_violations == 0 && worst_similarity <= 1e-9,
          fmt("PA-MPJPE > MPJPE in %d of 1000 jittered and %d of %d regressor predictions (worst excess %.3f mm); "
              "similarity residual %.2e mm",
              jitter_violations, regressor_violations, regressor_cases, worst_excess, worst_similarity)};
}

Outcome heatmap_round_trip() {
  Rng rng(909);
  std::array<bool, kNumJoints> inc;
  inc.fill(true);
  double worst = 0.0;
  int count = 0;
  while (count < 10000) {
    Pose2D p;
    for (auto& j : p.joints) j = Vec2(rng.uniform(0.0, kFrameWidth), rng.uniform(0.0, kFrameHeight));
    const Pose2D d = decode_heatmap(encode_heatmap(p, inc, kDefaultHeatmapHeight, kDefaultHeatmapWidth, 4.0, 2.0)).first;
    for (int j = 0; j < kNumJoints && count < 10000; ++j, ++count)
      worst = std::max(worst, (d.joints[j] - p.joints[j]).norm());
  }
  return {worst < 0.5, fmt("max decode error %.4f px over 10000 joints", worst)};
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

Outcome determinism(const std::string& cli, const std::string& workdir) {
  bool synth_same = false;
  std::string synth_note = "no CLI given";
  if (!cli.empty()) {
    const std::string a = workdir + "/accept_synth_a.jsonl", b = workdir + "/accept_synth_b.jsonl";
    const int ra = std::system((cli + " synth --n 1000 --seed 1 --out " + a + " > /dev/null").c_str());
    const int rb = std::system((cli + " synth --n 1000 --seed 1 --out " + b + " > /dev/null").c_str());
    const std::string fa = slurp(a), fb = slurp(b);
    synth_same = ra == 0 && rb == 0 && !fa.empty() && fa == fb;
    synth_note = fmt("synth files %s (%zu bytes)", synth_same ? "identical" : "differ", fa.size());
  }
  const auto data = synth_dataset(default_sampler_config(), 500, 1010);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.warmup_epochs = 1;
  std::ostringstream a, b;
  write_checkpoint(a, train(data, cfg).params);
  write_checkpoint(b, train(data, cfg).params);
  const bool train_same = a.str() == b.str();
  return {synth_same && train_same,
          synth_note + fmt(", checkpoints %s (%zu bytes)", train_same ? "identical" : "differ", a.str().size())};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::string cli, workdir = ".";
  std::vector<int> expect_fail, only;
  app.add_option("--cli", cli, "path to the sketchpose executable");
  app.add_option("--workdir", workdir, "scratch directory");
  app.add_option("--expect-fail", expect_fail, "criteria known to fail");
  app.add_option("--only", only, "run only these criteria");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"loss identities", loss_identities},
      {"gradient suite", gradient_suite},
      {"parallel-loss invariances", parallel_invariances},
      {"oracle recovery", oracle_recovery},
      {"learn from synthesis", learn_from_synthesis},
      {"speedup", speedup},
      {"ablation direction", ablation},
      {"metric properties", metric_properties},
      {"heatmap round trip", heatmap_round_trip},
      {"determinism", [&] { return determinism(cli, workdir); }},
  };

  std::set<int> failed;
  const std::set<int> expected(expect_fail.begin(), expect_fail.end());
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) failed.insert(id);
    std::printf("criterion %2d %-26s %s  %s%s\n", id, criteria[k].first, o.pass ? "PASS" : "FAIL", o.detail.c_str(),
                !o.pass && expected.count(id) ? "  (expected)" : "");
    std::fflush(stdout);
  }
  std::set<int> expected_run;
  for (int id : expected)
    if (only.empty() || std::find(only.begin(), only.end(), id) != only.end()) expected_run.insert(id);
  if (failed != expected_run) {
    std::printf("failing set differs from the expected set\n");
    return 1;
  }
  std::printf("%zu failing, all expected\n", failed.size());
  return 0;
}
