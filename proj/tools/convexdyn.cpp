#include "convexdyn/parallel.hpp"
#include "convexdyn/pipeline.hpp"
#include "convexdyn/serialization.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

using namespace convexdyn;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void print(const json& j) { std::cout << j.dump() << std::endl; }

SceneConfig load(const std::string& path, const std::optional<std::uint64_t>& seed) {
  SceneConfig cfg = load_scene_config(path);
  if (seed) {
    cfg.seed = *seed;
    cfg.skinning.seed = *seed;
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reduced-order convex-primitive dynamics: simulate, render, identify."};
  app.require_subcommand(1);

  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  auto common = [&](CLI::App* sub, bool needs_config, const std::string& out_help) {
    auto* opt = sub->add_option("--config", config, "Scene config (JSON)")->check(CLI::ExistingFile);
    if (needs_config) opt->required();
    sub->add_option("--seed", seed, "Override the config seed");
    sub->add_option("--out", out, out_help)->required();
  };

  auto* train = app.add_subcommand("train-skinning", "Train the skinning basis; writes a skinning file");
  common(train, true, "Output skinning file");

  std::string skinning_file;
  auto* sim = app.add_subcommand("simulate", "Simulate the config scene; writes a trajectory file");
  common(sim, true, "Output trajectory file");
  sim->add_option("--skinning", skinning_file, "Skinning file")->required()->check(CLI::ExistingFile);

  std::string trajectory_file;
  auto* rend = app.add_subcommand("render", "Render a trajectory to frame_%04d.ppm files");
  common(rend, true, "Output frame directory");
  rend->add_option("--trajectory", trajectory_file, "Trajectory file")->required()->check(CLI::ExistingFile);

  std::string reference_dir;
  std::optional<double> init_E, init_nu;
  std::optional<int> max_iterations;
  auto* ident = app.add_subcommand("identify", "Identify (E, nu) from reference frames");
  common(ident, true, "Output JSONL file (one record per evaluation, then the result)");
  ident->add_option("--skinning", skinning_file, "Skinning file")->required()->check(CLI::ExistingFile);
  ident->add_option("--reference", reference_dir, "Reference frame directory")->required()->check(CLI::ExistingDirectory);
  ident->add_option("--init-E", init_E, "Initial Young's modulus (Pa)");
  ident->add_option("--init-nu", init_nu, "Initial Poisson ratio");
  ident->add_option("--max-iterations", max_iterations, "Outer iteration cap");

  std::string rendered_dir;
  auto* eval = app.add_subcommand("evaluate", "PSNR/SSIM between two frame directories");
  eval->add_option("--rendered", rendered_dir, "Rendered frames")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--reference", reference_dir, "Reference frames")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--out", out, "Optional metrics file (JSON)");

  std::vector<std::string> views;
  int fit_iterations = 500;
  auto* fit = app.add_subcommand("fit-rest", "Fit the rest field to one image per config camera");
  common(fit, true, "Output field file");
  fit->add_option("--views", views, "One PPM per config camera, in order")->required()->check(CLI::ExistingFile);
  fit->add_option("--iterations", fit_iterations, "Optimizer iterations")->check(CLI::NonNegativeNumber);

  auto* exp = app.add_subcommand("experiment", "Closed-loop identification and held-out prediction");
  common(exp, true, "Output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      const SkinningField f = cmd_train_skinning(load(config, seed), out);
      print({{"command", "train-skinning"}, {"out", out}, {"parameters", f.parameters().size()}});
    } else if (*sim) {
      const Trajectory t = cmd_simulate(load(config, seed), skinning_file, out);
      print({{"command", "simulate"}, {"out", out}, {"frames", t.frames.size()}});
    } else if (*rend) {
      cmd_render(trajectory_file, load(config, seed), out);
      print({{"command", "render"}, {"out", out}});
    } else if (*ident) {
      SceneConfig cfg = load(config, seed);
      if (init_E) cfg.identify.init_youngs_modulus = *init_E;
      if (init_nu) cfg.identify.init_poissons_ratio = *init_nu;
      if (max_iterations) cfg.identify.max_iterations = *max_iterations;
      if (fs::exists(out)) fs::remove(out);
      const IdentificationResult r = cmd_identify(cfg, skinning_file, reference_dir, out);
      const json rec = {{"result", true},
                        {"log10_E", r.log10_E},
                        {"E", std::pow(10.0, r.log10_E)},
                        {"nu", r.nu},
                        {"iterations", r.iterations},
                        {"evaluations", r.evaluations},
                        {"loss", r.loss_curve.back()}};
      append_jsonl(out, rec);
      print(rec);
    } else if (*eval) {
      const json m = cmd_evaluate(rendered_dir, reference_dir);
      if (!out.empty()) {
        std::ofstream f(out);
        f << m.dump(2) << '\n';
        if (!f) throw Error(ErrorKind::FileIO, "failed writing " + out);
      }
      print({{"mean_psnr", m["mean_psnr"]}, {"mean_ssim", m["mean_ssim"]}, {"frames", m["frames"].size()}});
    } else if (*fit) {
      std::vector<fs::path> paths(views.begin(), views.end());
      const RestFitResult r = cmd_fit_rest(load(config, seed), paths, out, fit_iterations);
      print({{"command", "fit-rest"}, {"out", out}, {"initial_loss", r.loss_curve.front()},
             {"final_loss", r.loss_curve.back()}});
    } else if (*exp) {
      fs::create_directories(out);
      const fs::path records = fs::path(out) / "metrics.jsonl";
      if (fs::exists(records)) fs::remove(records);
      const ExperimentSummary s = run_experiment(load(config, seed), records);
      std::ofstream f(fs::path(out) / "summary.json");
      f << s.to_json().dump(2) << '\n';
      print(s.to_json());
    }
  } catch (const Error& e) {
    std::cerr << json{{"error", std::string(error_kind_name(e.kind()))}, {"message", e.what()}}.dump()
              << std::endl;
    return 2;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", "Internal"}, {"message", e.what()}}.dump() << std::endl;
    return 3;
  }
  return 0;
}
