// Command-line driver: dataset synthesis, fitting, training, inference,
// evaluation, benchmarking, rendering and gradient checks.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <map>
#include <memory>
#include <unordered_map>

#include "sketchpose/sketchpose.hpp"

namespace sp = sketchpose;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitIo = 2;
constexpr int kExitData = 3;

struct Command {
  CLI::App* app = nullptr;
  sp::Settings settings;
  std::map<std::string, std::unique_ptr<std::string>> flags;
  std::map<std::string, CLI::Option*> options;
  std::string config_path;
  std::string name;
  std::function<int(Command&)> run;

  /// Declares a setting and its `--flag`.
  void add(const std::string& key, const std::string& default_value, const std::string& help) {
    settings.declare(key, default_value);
    auto& slot = flags[key];
    slot = std::make_unique<std::string>();
    std::string flag = "--" + key;
    for (char& c : flag)
      if (c == '_') c = '-';
    options[key] = app->add_option(flag, *slot, help + (default_value.empty() ? "" : " [" + default_value + "]"));
  }

  /// Defaults, then the config file, then SKETCHPOSE_SEED, then flags.
  void resolve() {
    if (!config_path.empty()) {
      auto f = sp::open_input(config_path);
      settings.merge(sp::parse_config(f));
    }
    settings.apply_seed_env();
    for (const auto& [key, opt] : options)
      if (opt->count() > 0) settings.set(key, *flags[key]);
  }

  const sp::Settings& s() const { return settings; }

  sp::Json header() const {
    sp::Json settings_json = sp::Json::object();
    for (const auto& [k, v] : settings.all()) settings_json[k] = v;
    return {{"tool", "sketchpose"}, {"command", name}, {"settings", settings_json}};
  }
};

// Config objects are built before any work; their validation errors are usage errors.
template <class F>
auto prepare(F&& f) {
  try {
    return f();
  } catch (const sp::ValidationError& e) {
    throw sp::UsageError(e.what());
  }
}

void write_meta(const Command& c, const std::string& out, sp::Json extra = sp::Json::object()) {
  sp::Json j = c.header();
  for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
  sp::save_json(out + ".meta.json", j);
}

void add_weight_settings(Command& c) {
  c.add("w_parallel", "3", "weight of the bone-direction term");
  c.add("w_foreshortening", "3", "weight of the foreshortening term");
  c.add("w_pose", "2", "weight of the pose-parameter term");
  c.add("w_shape", "1", "weight of the bone-scale term");
  c.add("ratio_mode", "cosine", "foreshortening ratio convention: cosine or as-written");
}

sp::LossWeights weights_from(const sp::Settings& s) {
  sp::LossWeights w{s.real("w_parallel"), s.real("w_foreshortening"), s.real("w_pose"), s.real("w_shape")};
  w.validate();
  return w;
}

sp::RatioMode ratio_mode_from(const sp::Settings& s) {
  return s.choice("ratio_mode", {"cosine", "as-written"}) == "cosine" ? sp::RatioMode::kCosine
                                                                      : sp::RatioMode::kAsWritten;
}

void add_fit_settings(Command& c) {
  c.add("max_iters", "500", "iterations per restart");
  c.add("learning_rate", "0.05", "initial step size");
  c.add("decay", "0.5", "step-size decay factor");
  c.add("decay_every", "150", "iterations between decays");
  c.add("tol", "1e-9", "relative convergence tolerance");
  c.add("restarts", "4", "number of restarts");
  c.add("init_noise", "0.05", "initial rotation noise, radians");
  c.add("warmup_iters", "150", "iterations on the parameter terms first");
  c.add("use_3d_supervision", "true", "use ground-truth pose and bone scales as targets");
  c.add("target", "perturbed", "which 2D joints to fit: perturbed or clean");
  c.add("seed", "0", "random seed");
  add_weight_settings(c);
}

sp::FitConfig fit_config_from(const sp::Settings& s) {
  sp::FitConfig f;
  f.max_iters = s.positive("max_iters");
  f.learning_rate = s.real("learning_rate");
  f.decay = s.real("decay");
  f.decay_every = s.positive("decay_every");
  f.tol = s.real("tol");
  f.restarts = s.positive("restarts");
  f.init_noise = s.real("init_noise");
  f.warmup_iters = static_cast<int>(s.integer("warmup_iters"));
  f.use_3d_supervision = s.boolean("use_3d_supervision");
  f.seed = s.u64("seed");
  f.weights = weights_from(s);
  f.ratio_mode = ratio_mode_from(s);
  f.keep_traces = false;
  f.validate();
  return f;
}

sp::FitTarget target_from(const sp::Settings& s) {
  return s.choice("target", {"perturbed", "clean"}) == "clean" ? sp::FitTarget::kClean : sp::FitTarget::kPerturbed;
}

const sp::Pose2D& input_joints(const sp::DatasetSample& d, sp::FitTarget t) {
  return t == sp::FitTarget::kClean ? d.joints2d_clean : d.joints2d_perturbed;
}

sp::MLPParams load_model(const std::string& path) {
  auto f = sp::open_input(path, true);
  try {
    return sp::read_checkpoint(f);
  } catch (const sp::ValidationError& e) {
    throw sp::DataError(path + ": " + e.what());
  } catch (const std::runtime_error& e) {
    throw sp::DataError(path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------

int cmd_synth(Command& c) {
  const auto& s = c.s();
  const std::string out = s.required("out");
  const std::uint64_t n = s.u64("n"), seed = s.u64("seed");
  const std::string heatmaps = s.str("heatmaps");
  const sp::SamplerConfig cfg = prepare([&] {
    if (n < 1) throw sp::UsageError("setting 'n' must be at least 1");
    sp::SamplerConfig k = sp::default_sampler_config();
    k.perturbation.bias_range = s.real("bias_range");
    k.scale_jitter = s.real("scale_jitter");
    k.camera_scale_min = s.real("camera_scale_min");
    k.camera_scale_max = s.real("camera_scale_max");
    k.center_jitter = s.real("center_jitter");
    k.bbox_margin = s.real("bbox_margin");
    k.validate();
    return k;
  });
  const double sigma = s.real("heatmap_sigma");
  const int stride = s.positive("heatmap_stride");
  if (!(sigma > 0.0)) throw sp::UsageError("setting 'heatmap_sigma' must be positive");

  auto f = sp::open_output(out);
  std::ofstream hm;
  if (!heatmaps.empty()) hm = sp::open_output(heatmaps, true);
  const int h = (sp::kFrameHeight + stride - 1) / stride, w = (sp::kFrameWidth + stride - 1) / stride;
  sp::synth_dataset(cfg, n, seed, [&](const sp::DatasetSample& d) {
    sp::write_jsonl_line(f, sp::to_json(d));
    if (hm.is_open())
      sp::write_heatmap_blob(hm, sp::encode_heatmap(d.joints2d_perturbed, sp::included_mask(d.labels), h, w,
                                                    stride, sigma));
  });
  sp::finish_output(f, out);
  if (hm.is_open()) sp::finish_output(hm, heatmaps);
  write_meta(c, out);
  std::printf("wrote %llu samples to %s (seed %llu)\n", static_cast<unsigned long long>(n), out.c_str(),
              static_cast<unsigned long long>(seed));
  return kExitOk;
}

int cmd_fit(Command& c) {
  const auto& s = c.s();
  const std::string data = s.required("data"), out = s.required("out");
  const sp::FitConfig cfg = prepare([&] { return fit_config_from(s); });
  const sp::FitTarget target = target_from(s);
  const int threads = s.positive("threads");
  const auto samples = sp::load_dataset(data);
  const auto results = sp::fit_batch(samples, cfg, target, threads);

  auto f = sp::open_output(out);
  std::size_t ok = 0, converged = 0;
  double loss = 0.0;
  for (std::size_t k = 0; k < results.size(); ++k) {
    if (!results[k].result) {
      std::fprintf(stderr, "sample %llu skipped: %s\n", static_cast<unsigned long long>(samples[k].id),
                   results[k].error.c_str());
      continue;
    }
    const sp::FitResult& r = *results[k].result;
    sp::Prediction p = sp::make_prediction(samples[k].id, r.state);
    p.loss = r.loss.total;
    p.iterations = r.iterations;
    p.converged = r.converged;
    sp::write_jsonl_line(f, sp::to_json(p));
    ++ok;
    converged += r.converged;
    loss += r.loss.total;
  }
  sp::finish_output(f, out);
  write_meta(c, out, {{"fitted", ok}, {"skipped", samples.size() - ok}});
  std::printf("fitted %zu of %zu samples, %zu converged, mean final loss %.6g\n", ok, samples.size(), converged,
              ok ? loss / ok : 0.0);
  return ok == 0 && !samples.empty() ? kExitData : kExitOk;
}

int cmd_train(Command& c) {
  const auto& s = c.s();
  const std::string data = s.required("data"), out = s.required("out");
  const sp::TrainConfig cfg = prepare([&] {
    sp::TrainConfig t;
    t.epochs = s.positive("epochs");
    t.batch_size = s.positive("batch_size");
    t.learning_rate = s.real("learning_rate");
    t.lr_decay = s.real("lr_decay");
    t.val_fraction = s.real("val_fraction");
    t.seed = s.u64("seed");
    t.weights = weights_from(s);
    t.ratio_mode = ratio_mode_from(s);
    t.camera_weight = s.real("camera_weight");
    t.warmup_epochs = static_cast<int>(s.integer("warmup_epochs"));
    t.hidden1 = s.positive("hidden1");
    t.hidden2 = s.positive("hidden2");
    t.validate();
    return t;
  });
  const auto samples = sp::load_dataset(data);
  sp::TrainResult r;
  try {
    r = sp::train(samples, cfg, [](int e, const sp::EpochStats& st) {
      std::printf("epoch %d  train %.6f  val %.6f\n", e + 1, st.train_loss, st.val_loss);
      std::fflush(stdout);
    });
  } catch (const sp::ValidationError& e) {
    throw sp::DataError(e.what());
  }
  auto f = sp::open_output(out, true);
  sp::write_checkpoint(f, r.params);
  sp::finish_output(f, out);

  const sp::SplitScore score = sp::score_split(r.params, samples, r.val_indices);
  sp::Json history = sp::Json::array();
  for (const auto& h : r.history) history.push_back({{"train_loss", h.train_loss}, {"val_loss", h.val_loss}});
  write_meta(c, out,
             {{"history", history},
              {"diverged", r.diverged},
              {"skipped_samples", r.skipped},
              {"train_size", r.train_indices.size()},
              {"val_size", r.val_indices.size()},
              {"val_pa_mpjpe_mm", score.pa_mpjpe_mm},
              {"val_rest_pose_pa_mpjpe_mm", score.rest_pa_mpjpe_mm}});
  std::printf("validation PA-MPJPE %.2f mm (rest pose %.2f mm) over %zu samples\n", score.pa_mpjpe_mm,
              score.rest_pa_mpjpe_mm, score.count);
  if (r.diverged) {
    std::fprintf(stderr, "training diverged after %zu epochs; saved the last finite parameters\n",
                 r.history.size());
    return kExitData;
  }
  return kExitOk;
}

int cmd_infer(Command& c) {
  const auto& s = c.s();
  const std::string data = s.required("data"), model = s.required("model"), out = s.required("out");
  const sp::FitTarget target = target_from(s);
  const sp::MLPParams params = load_model(model);
  const auto samples = sp::load_dataset(data);
  auto f = sp::open_output(out);
  sp::Workspace ws;
  std::size_t ok = 0;
  for (const auto& d : samples) {
    try {
      const sp::EstimationState st = sp::predict(params, input_joints(d, target), d.labels, ws);
      sp::write_jsonl_line(f, sp::to_json(sp::make_prediction(d.id, st)));
      ++ok;
    } catch (const sp::ValidationError& e) {
      std::fprintf(stderr, "sample %llu skipped: %s\n", static_cast<unsigned long long>(d.id), e.what());
    }
  }
  sp::finish_output(f, out);
  write_meta(c, out, {{"predicted", ok}, {"skipped", samples.size() - ok}});
  std::printf("predicted %zu of %zu samples\n", ok, samples.size());
  return kExitOk;
}

int cmd_eval(Command& c) {
  const auto& s = c.s();
  const std::string data = s.required("data"), pred = s.required("pred"), out = s.required("out");
  const auto samples = sp::load_dataset(data);
  const auto preds = sp::load_predictions(pred);
  std::unordered_map<std::uint64_t, std::size_t> by_id;
  for (std::size_t k = 0; k < samples.size(); ++k) by_id[samples[k].id] = k;
  std::vector<sp::Pose3D> p3, g3;
  std::vector<std::uint64_t> ids;
  for (const auto& p : preds) {
    const auto it = by_id.find(p.id);
    if (it == by_id.end()) throw sp::DataError("prediction id " + std::to_string(p.id) + " not in the dataset");
    p3.push_back(p.joints3d);
    g3.push_back(samples[it->second].joints3d);
    ids.push_back(p.id);
  }
  const sp::EvalReport r = sp::evaluate(p3, g3);
  sp::Json per = sp::Json::array();
  for (std::size_t k = 0; k < ids.size(); ++k)
    per.push_back({{"id", ids[k]}, {"mpjpe_mm", r.per_sample_mpjpe[k]}, {"pa_mpjpe_mm", r.per_sample_pa_mpjpe[k]}});
  sp::Json j = c.header();
  j["count"] = ids.size();
  j["missing"] = samples.size() - std::min(samples.size(), ids.size());
  j["mpjpe_mm"] = r.mpjpe_mm;
  j["pa_mpjpe_mm"] = r.pa_mpjpe_mm;
  j["mpve"] = "unavailable: no body mesh";
  j["per_sample"] = per;
  sp::save_json(out, j);
  std::printf("evaluated %zu predictions: MPJPE %.3f mm, PA-MPJPE %.3f mm\n", ids.size(), r.mpjpe_mm,
              r.pa_mpjpe_mm);
  return kExitOk;
}

int cmd_bench(Command& c) {
  const auto& s = c.s();
  const std::string data = s.required("data"), model = s.required("model"), out = s.required("out");
  const std::string csv = s.str("csv");
  const sp::FitConfig cfg = prepare([&] { return fit_config_from(s); });
  const sp::FitTarget target = target_from(s);
  const int n = s.positive("n"), reps = s.positive("repetitions");
  if (n < 20) throw sp::UsageError("setting 'n' must be at least 20");
  if (reps < 3) throw sp::UsageError("setting 'repetitions' must be at least 3");
  const sp::MLPParams params = load_model(model);
  const auto all = sp::load_dataset(data);

  // Identical inputs for both methods: the first n samples both can take.
  std::vector<const sp::DatasetSample*> inputs;
  for (const auto& d : all) {
    if (static_cast<int>(inputs.size()) == n) break;
    try {
      sp::normalize_joints(input_joints(d, target), d.labels);
      inputs.push_back(&d);
    } catch (const sp::ValidationError&) {
    }
  }
  if (static_cast<int>(inputs.size()) < n)
    throw sp::DataError("dataset has only " + std::to_string(inputs.size()) + " usable samples, need " +
                        std::to_string(n));
  sp::Workspace ws;
  const sp::BenchReport r = sp::bench(
      [&](std::size_t k) {
        const auto& d = *inputs[k];
        sp::fit_pose(input_joints(d, target), d.labels, cfg, sp::supervision_from_sample(d));
      },
      [&](std::size_t k) {
        const auto& d = *inputs[k];
        const sp::EstimationState st = sp::predict(params, input_joints(d, target), d.labels, ws);
        sp::forward_kinematics(sp::canonical_topology(), st.pose, st.scales);
      },
      inputs.size(), reps);

  sp::Json j = c.header();
  j["n"] = inputs.size();
  j["repetitions"] = reps;
  j["fitter"] = {{"median_s", r.slow.median}, {"p95_s", r.slow.p95}};
  j["regressor"] = {{"median_s", r.fast.median}, {"p95_s", r.fast.p95}};
  j["ratios"] = r.ratios;
  j["speedup"] = r.speedup;
  sp::save_json(out, j);
  if (!csv.empty()) {
    auto f = sp::open_output(csv);
    f << "index,id,fitter_s,regressor_s\n";
    for (std::size_t k = 0; k < inputs.size(); ++k)
      f << k << ',' << inputs[k]->id << ',' << r.slow.samples[k] << ',' << r.fast.samples[k] << '\n';
    sp::finish_output(f, csv);
  }
  std::printf("fitter median %.6f s, regressor median %.6f s, speedup %.1fx\n", r.slow.median, r.fast.median,
              r.speedup);
  return kExitOk;
}

int cmd_render(Command& c) {
  const auto& s = c.s();
  const std::string data = s.str("data"), pred = s.str("pred"), out = s.required("out");
  const std::uint64_t id = s.u64("id");
  const bool clean = s.choice("joints", {"perturbed", "clean"}) == "clean";
  const bool box = s.boolean("bbox");
  if (data.empty() && pred.empty()) throw sp::UsageError("render needs --data or --pred");

  std::optional<sp::DatasetSample> sample;
  if (!data.empty()) {
    for (auto& d : sp::load_dataset(data))
      if (d.id == id) sample = std::move(d);
    if (!sample) throw sp::DataError("no sample with id " + std::to_string(id));
  }
  sp::Pose2D joints;
  sp::JointLabels labels = sample ? sample->labels : sp::all_visible();
  std::optional<sp::BBox> bbox;
  if (!pred.empty()) {
    std::optional<sp::Prediction> p;
    for (auto& q : sp::load_predictions(pred))
      if (q.id == id) p = std::move(q);
    if (!p) throw sp::DataError("no prediction with id " + std::to_string(id));
    joints = sp::project(p->joints3d, p->state.camera);
    if (box) bbox = sp::bbox_from_joints(joints, labels);
  } else {
    joints = clean ? sample->joints2d_clean : sample->joints2d_perturbed;
    if (box) bbox = sample->bbox;
  }
  auto f = sp::open_output(out);
  f << sp::render_svg(joints, labels, bbox);
  sp::finish_output(f, out);
  std::printf("wrote %s\n", out.c_str());
  return kExitOk;
}

int cmd_check_grad(Command& c) {
  const auto& s = c.s();
  const int n = s.positive("n");
  const double h = s.real("step");
  if (!(h > 1e-8 && h < 1e-3)) throw sp::UsageError("setting 'step' must lie in (1e-8, 1e-3)");
  const sp::LossWeights w = prepare([&] { return weights_from(s); });
  const sp::GradientSweep g = sp::sweep_gradients(n, s.u64("seed"), h, ratio_mode_from(s), w);
  std::printf("checked %d states (%d skipped next to L1 kinks): max relative error %.3e (case %llu)\n", g.checked,
              g.skipped, g.max_relative_error, static_cast<unsigned long long>(g.worst_case));
  const std::string out = s.str("out");
  if (!out.empty()) {
    sp::Json j = c.header();
    j["checked"] = g.checked;
    j["skipped"] = g.skipped;
    j["max_relative_error"] = g.max_relative_error;
    j["worst_case"] = g.worst_case;
    sp::save_json(out, j);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stick-figure 3D pose estimation toolkit"};
  app.require_subcommand(1);
  std::vector<std::unique_ptr<Command>> commands;

  auto make = [&](CLI::App* parent, const std::string& name, const std::string& help,
                  std::function<int(Command&)> run) -> Command& {
    auto c = std::make_unique<Command>();
    c->app = parent->add_subcommand(name, help);
    c->name = name;
    c->run = std::move(run);
    c->app->add_option("--config", c->config_path, "key = value settings file");
    commands.push_back(std::move(c));
    return *commands.back();
  };

  {
    Command& c = make(&app, "synth", "generate a synthetic dataset (JSON Lines)", cmd_synth);
    c.add("n", "100", "number of samples");
    c.add("seed", "0", "base seed; sample k uses seed XOR k");
    c.add("out", "", "output dataset path");
    c.add("bias_range", "0.25", "2D bone-length perturbation range");
    c.add("scale_jitter", "0.1", "bone scales drawn from 1 +- jitter");
    c.add("camera_scale_min", "85", "smallest camera scale, px per meter");
    c.add("camera_scale_max", "115", "largest camera scale, px per meter");
    c.add("center_jitter", "8", "camera center jitter, px");
    c.add("bbox_margin", "0.1", "bounding-box margin fraction");
    c.add("heatmaps", "", "optional binary heatmap sidecar path");
    c.add("heatmap_sigma", "2", "heatmap Gaussian sigma, px");
    c.add("heatmap_stride", "4", "input pixels per heatmap cell");
  }
  {
    Command& c = make(&app, "fit", "fit poses to dataset samples by optimization", cmd_fit);
    c.add("data", "", "input dataset");
    c.add("out", "", "output predictions (JSON Lines)");
    c.add("threads", "1", "worker threads");
    add_fit_settings(c);
  }
  {
    Command& c = make(&app, "train", "train the regressor", cmd_train);
    c.add("data", "", "training dataset");
    c.add("out", "", "checkpoint path");
    c.add("epochs", "50", "training epochs");
    c.add("batch_size", "64", "mini-batch size");
    c.add("learning_rate", "0.001", "initial learning rate");
    c.add("lr_decay", "0.95", "learning-rate factor per epoch");
    c.add("val_fraction", "0.1", "held-out fraction");
    c.add("seed", "0", "random seed");
    c.add("camera_weight", "1", "weight of the camera regression term");
    c.add("warmup_epochs", "10", "epochs on the parameter terms only");
    c.add("hidden1", "256", "width of the first hidden layer");
    c.add("hidden2", "256", "width of the second hidden layer");
    add_weight_settings(c);
  }
  {
    Command& c = make(&app, "infer", "predict poses with a trained regressor", cmd_infer);
    c.add("data", "", "input dataset");
    c.add("model", "", "checkpoint");
    c.add("out", "", "output predictions (JSON Lines)");
    c.add("target", "perturbed", "which 2D joints to use: perturbed or clean");
  }
  {
    Command& c = make(&app, "eval", "score predictions against ground truth", cmd_eval);
    c.add("data", "", "ground-truth dataset");
    c.add("pred", "", "predictions");
    c.add("out", "", "report path (JSON)");
  }
  {
    Command& c = make(&app, "bench", "time the fitter against the regressor", cmd_bench);
    c.add("data", "", "input dataset");
    c.add("model", "", "regressor checkpoint");
    c.add("out", "", "report path (JSON)");
    c.add("csv", "", "optional per-sample timings (CSV)");
    c.add("n", "200", "number of inputs");
    c.add("repetitions", "3", "timed repetitions");
    add_fit_settings(c);
  }
  {
    Command& c = make(&app, "render", "draw a sample or prediction as SVG", cmd_render);
    c.add("data", "", "dataset");
    c.add("pred", "", "predictions");
    c.add("id", "0", "sample id");
    c.add("out", "", "SVG path");
    c.add("joints", "perturbed", "sample joints to draw: perturbed or clean");
    c.add("bbox", "true", "draw the bounding box");
  }
  CLI::App* losses = app.add_subcommand("losses", "loss utilities");
  losses->require_subcommand(1);
  {
    Command& c = make(losses, "check-grad", "compare loss gradients with finite differences", cmd_check_grad);
    c.add("n", "100", "number of random states");
    c.add("seed", "0", "first case seed");
    c.add("step", "1e-5", "finite-difference step");
    c.add("out", "", "optional report path (JSON)");
    add_weight_settings(c);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  for (auto& c : commands) {
    if (!c->app->parsed()) continue;
    try {
      c->resolve();
      return c->run(*c);
    } catch (const sp::UsageError& e) {
      std::fprintf(stderr, "error: %s\n", e.what());
      return kExitUsage;
    } catch (const sp::IoError& e) {
      std::fprintf(stderr, "error: %s\n", e.what());
      return kExitIo;
    } catch (const sp::DataError& e) {
      std::fprintf(stderr, "error: %s\n", e.what());
      return kExitData;
    } catch (const sp::ValidationError& e) {
      std::fprintf(stderr, "error: %s\n", e.what());
      return kExitData;
    } catch (const sp::NumericalError& e) {
      std::fprintf(stderr, "error: %s\n", e.what());
      return kExitData;
    }
  }
  return kExitUsage;
}
