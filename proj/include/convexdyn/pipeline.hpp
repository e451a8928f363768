#pragma once

#include "convexdyn/scene.hpp"
#include "convexdyn/sysid.hpp"

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace convexdyn {

/// Rest field plus the simulation cubature drawn from it with the config seed.
struct PreparedScene {
  ConvexField rest_field;
  CubatureSet cubature;
};
PreparedScene prepare_scene(const SceneConfig& config);

/// "frame_0007.ppm"
std::string frame_name(int index, const char* extension = ".ppm");

SkinningField cmd_train_skinning(const SceneConfig& config, const std::filesystem::path& out_file);

Trajectory cmd_simulate(const SceneConfig& config, const std::filesystem::path& skinning_file,
                        const std::filesystem::path& out_file);

/// Writes frame_%04d.ppm plus a JSON sidecar (camera, time) per frame. With
/// several cameras each gets its own cam_%02d subdirectory.
void cmd_render(const std::filesystem::path& trajectory_file, const SceneConfig& config,
                const std::filesystem::path& out_dir);

/// Identifies (E, nu) from frames 1..observed_frames in `reference_dir`
/// (camera 0 of the config), starting from the config's initial guess.
/// Appends one record per evaluation to `records_file` when non-empty.
IdentificationResult cmd_identify(const SceneConfig& config, const std::filesystem::path& skinning_file,
                                  const std::filesystem::path& reference_dir,
                                  const std::filesystem::path& records_file);

/// PSNR/SSIM per frame_*.ppm present in both directories, plus means.
nlohmann::json cmd_evaluate(const std::filesystem::path& rendered_dir,
                            const std::filesystem::path& reference_dir);

/// Fits the config's rest field to one image per config camera.
RestFitResult cmd_fit_rest(const SceneConfig& config, const std::vector<std::filesystem::path>& views,
                           const std::filesystem::path& out_file, int iterations);

struct ExperimentSummary {
  double true_log10_E = 0.0;
  double true_nu = 0.0;
  IdentificationResult result;
  std::vector<double> heldout_psnr;
  double mean_heldout_psnr = 0.0;
  int primitive_count = 0;
  int hull_points = 0;
  int handles = 0;

  nlohmann::json to_json() const;
};

/// Closed loop: train skinning, simulate and render the reference at the
/// config material, identify from the observed frames, score held-out frames.
ExperimentSummary run_experiment(const SceneConfig& config, const std::filesystem::path& records_file);

}  // namespace convexdyn
