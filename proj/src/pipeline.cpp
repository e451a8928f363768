#include "convexdyn/pipeline.hpp"

#include "convexdyn/serialization.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace convexdyn {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::FileIO, "cannot create " + dir.string() + ": " + ec.message());
}

void ensure_parent(const fs::path& file) {
  if (file.has_parent_path()) ensure_dir(file.parent_path());
}

json record_json(const EvaluationRecord& r) {
  return {{"iteration", r.iteration}, {"log10_E", r.log10_E}, {"nu", r.nu}, {"loss", r.loss}};
}

IdentifyOptions identify_options(const SceneConfig& cfg, const fs::path& records_file) {
  IdentifyOptions opt;
  opt.max_iterations = cfg.identify.max_iterations;
  opt.background = cfg.render.background;
  opt.finetune_skinning = cfg.identify.finetune_skinning;
  opt.skinning_learning_rate = cfg.identify.skinning_learning_rate;
  if (!records_file.empty()) {
    ensure_parent(records_file);
    opt.on_evaluation = [records_file](const EvaluationRecord& r) {
      append_jsonl(records_file, record_json(r));
    };
  }
  return opt;
}

int total_hull_points(const ConvexField& field) {
  int n = 0;
  for (const ConvexPrimitive& p : field.rest_primitives) n += static_cast<int>(p.points().size());
  return n;
}

}  // namespace

PreparedScene prepare_scene(const SceneConfig& cfg) {
  PreparedScene scene;
  scene.rest_field = build_rest_field(cfg);
  scene.cubature =
      sample_cubature(scene.rest_field, cfg.sim.cubature_points, cfg.seed, cfg.material.density());
  return scene;
}

std::string frame_name(int index, const char* extension) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%04d%s", index, extension);
  return buf;
}

SkinningField cmd_train_skinning(const SceneConfig& cfg, const fs::path& out_file) {
  const ConvexField rest = build_rest_field(cfg);
  SkinningField field = train_skinning(rest, cfg.material, cfg.sim.handles, cfg.skinning);
  if (!out_file.empty()) {
    ensure_parent(out_file);
    write_skinning(out_file, field);
  }
  return field;
}

Trajectory cmd_simulate(const SceneConfig& cfg, const fs::path& skinning_file, const fs::path& out_file) {
  const PreparedScene scene = prepare_scene(cfg);
  const SkinningField skinning = read_skinning(skinning_file);
  if (skinning.num_handles() != cfg.sim.handles)
    throw Error(ErrorKind::ShapeMismatch, "skinning file has " + std::to_string(skinning.num_handles()) +
                                              " handles, config asks for " +
                                              std::to_string(cfg.sim.handles));
  const ReducedSimulator sim(scene.rest_field, skinning, cfg.material, scene.cubature, cfg.conditions);
  Trajectory traj = simulate(sim, cfg.sim.steps, cfg.sim.dt);
  if (!out_file.empty()) {
    ensure_parent(out_file);
    write_trajectory(out_file, traj);
  }
  return traj;
}

void cmd_render(const fs::path& trajectory_file, const SceneConfig& cfg, const fs::path& out_dir) {
  const Trajectory traj = read_trajectory(trajectory_file);
  const std::vector<Camera> cams = cfg.cameras();
  for (std::size_t c = 0; c < cams.size(); ++c) {
    fs::path dir = out_dir;
    if (cams.size() > 1) {
      char sub[16];
      std::snprintf(sub, sizeof sub, "cam_%02zu", c);
      dir /= sub;
    }
    ensure_dir(dir);
    for (std::size_t f = 0; f < traj.frames.size(); ++f) {
      const int idx = static_cast<int>(f);
      write_ppm(dir / frame_name(idx), render(traj.frames[f].field, cams[c], cfg.render.background));
      std::ofstream side(dir / frame_name(idx, ".json"));
      side << json{{"frame", idx}, {"time", traj.frames[f].state.time}, {"camera", camera_json(cams[c])}}
                  .dump(2)
           << '\n';
      if (!side) throw Error(ErrorKind::FileIO, "failed writing sidecar in " + dir.string());
    }
  }
}

IdentificationResult cmd_identify(const SceneConfig& cfg, const fs::path& skinning_file,
                                  const fs::path& reference_dir, const fs::path& records_file) {
  const PreparedScene scene = prepare_scene(cfg);
  const SkinningField skinning = read_skinning(skinning_file);
  FrameSequence ref;
  ref.camera = cfg.cameras().front();
  ref.dt = cfg.sim.dt;
  ref.first_frame = 1;
  for (int s = 1; s <= cfg.identify.observed_frames; ++s)
    ref.frames.push_back(read_ppm(reference_dir / frame_name(s)));
  const ForwardModel model{&scene.rest_field, &skinning, &scene.cubature, cfg.conditions,
                           cfg.material.density()};
  const MaterialParams init =
      cfg.material.with_elastic(cfg.identify.init_youngs_modulus, cfg.identify.init_poissons_ratio);
  return identify_parameters(ref, model, init, identify_options(cfg, records_file));
}

json cmd_evaluate(const fs::path& rendered_dir, const fs::path& reference_dir) {
  if (!fs::is_directory(rendered_dir)) throw Error(ErrorKind::FileIO, rendered_dir.string() + " is not a directory");
  if (!fs::is_directory(reference_dir)) throw Error(ErrorKind::FileIO, reference_dir.string() + " is not a directory");
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(rendered_dir)) {
    const std::string n = entry.path().filename().string();
    if (n.rfind("frame_", 0) == 0 && entry.path().extension() == ".ppm" &&
        fs::exists(reference_dir / n))
      names.push_back(n);
  }
  if (names.empty()) throw Error(ErrorKind::FileIO, "no matching frame_*.ppm files to compare");
  std::sort(names.begin(), names.end());
  json frames = json::array();
  double sum_psnr = 0.0, sum_ssim = 0.0;
  for (const std::string& n : names) {
    const Image a = read_ppm(rendered_dir / n);
    const Image b = read_ppm(reference_dir / n);
    const double p = psnr(a, b), s = ssim(a, b);
    sum_psnr += p;
    sum_ssim += s;
    frames.push_back({{"frame", n}, {"psnr", p}, {"ssim", s}});
  }
  const double count = static_cast<double>(names.size());
  return {{"frames", frames}, {"mean_psnr", sum_psnr / count}, {"mean_ssim", sum_ssim / count}};
}

RestFitResult cmd_fit_rest(const SceneConfig& cfg, const std::vector<fs::path>& views,
                           const fs::path& out_file, int iterations) {
  const std::vector<Camera> cams = cfg.cameras();
  if (views.size() != cams.size())
    throw Error(ErrorKind::ShapeMismatch, "need one view image per config camera (" +
                                              std::to_string(cams.size()) + ")");
  std::vector<View> data;
  for (std::size_t i = 0; i < views.size(); ++i) data.push_back({cams[i], read_ppm(views[i])});
  RestFitHyper hyper;
  hyper.iterations = iterations;
  hyper.background = cfg.render.background;
  RestFitResult result = fit_rest_field(data, build_rest_field(cfg), hyper);
  if (!out_file.empty()) {
    ensure_parent(out_file);
    write_field(out_file, result.field);
  }
  return result;
}

json ExperimentSummary::to_json() const {
  return {{"true_log10_E", true_log10_E},
          {"true_nu", true_nu},
          {"log10_E", result.log10_E},
          {"nu", result.nu},
          {"abs_err_log10_E", std::abs(result.log10_E - true_log10_E)},
          {"abs_err_nu", std::abs(result.nu - true_nu)},
          {"iterations", result.iterations},
          {"evaluations", result.evaluations},
          {"final_loss", result.loss_curve.back()},
          {"heldout_psnr", heldout_psnr},
          {"mean_heldout_psnr", mean_heldout_psnr},
          {"primitives", primitive_count},
          {"hull_points", hull_points},
          {"handles", handles}};
}

ExperimentSummary run_experiment(const SceneConfig& cfg, const fs::path& records_file) {
  const int observed = cfg.identify.observed_frames;
  if (cfg.sim.steps <= observed)
    throw Error(ErrorKind::InvalidArgument, "sim.steps must exceed identify.observed_frames");
  const PreparedScene scene = prepare_scene(cfg);
  const SkinningField skinning = train_skinning(scene.rest_field, cfg.material, cfg.sim.handles, cfg.skinning);
  const Camera cam = cfg.cameras().front();
  const ForwardModel model{&scene.rest_field, &skinning, &scene.cubature, cfg.conditions,
                           cfg.material.density()};
  const Rgb bg = cfg.render.background;
  const std::vector<Image> all = render_sequence(model, cfg.material, cam, cfg.sim.dt, 1, cfg.sim.steps, bg);

  FrameSequence ref{{all.begin(), all.begin() + observed}, cam, cfg.sim.dt, 1};
  const MaterialParams init =
      cfg.material.with_elastic(cfg.identify.init_youngs_modulus, cfg.identify.init_poissons_ratio);

  ExperimentSummary out;
  out.true_log10_E = std::log10(cfg.material.youngs_modulus());
  out.true_nu = cfg.material.poissons_ratio();
  out.result = identify_parameters(ref, model, init, identify_options(cfg, records_file));
  out.primitive_count = static_cast<int>(scene.rest_field.size());
  out.hull_points = total_hull_points(scene.rest_field);
  out.handles = cfg.sim.handles;

  ForwardModel fitted = model;
  std::optional<SkinningField> tuned;
  if (out.result.skinning_parameters) {
    tuned = skinning;
    tuned->mutable_parameters() = *out.result.skinning_parameters;
    fitted.skinning = &*tuned;
  }
  const MaterialParams identified =
      cfg.material.with_elastic(std::pow(10.0, out.result.log10_E), out.result.nu);
  const std::vector<Image> predicted =
      render_sequence(fitted, identified, cam, cfg.sim.dt, observed + 1, cfg.sim.steps - observed, bg);
  for (std::size_t s = 0; s < predicted.size(); ++s)
    out.heldout_psnr.push_back(psnr(predicted[s], all[observed + s]));
  double sum = 0.0;
  for (double p : out.heldout_psnr) sum += p;
  out.mean_heldout_psnr = sum / static_cast<double>(out.heldout_psnr.size());
  return out;
}

}  // namespace convexdyn
