#pragma once

#include "convexdyn/convex_field.hpp"
#include "convexdyn/image_metrics.hpp"
#include "convexdyn/materials.hpp"
#include "convexdyn/reduced_sim.hpp"
#include "convexdyn/renderer.hpp"
#include "convexdyn/skinning.hpp"

#include <functional>
#include <optional>
#include <vector>

namespace convexdyn {

/// Frames seen by one camera. frames[s] shows trajectory frame first_frame + s.
struct FrameSequence {
  std::vector<Image> frames;
  Camera camera;
  double dt = 0.0;
  int first_frame = 1;

  /// Throws ShapeMismatch when empty or when frame sizes disagree with the camera.
  void validate() const;
};

/// (1/SP) sum_s sum_p |rendered - reference|^2. Throws ShapeMismatch.
double loss_sim(const FrameSequence& rendered, const FrameSequence& reference);
double loss_sim(std::span<const Image> rendered, std::span<const Image> reference);

struct View {
  Camera camera;
  Image image;
};

struct RestFitHyper {
  int iterations = 500;
  double lr_points = 1e-3;
  double lr_color = 1e-2;
  double lr_opacity = 1e-2;
  double lambda_dssim = 0.2;
  double beta_opacity = 0.0;
  Rgb background = Rgb::Zero();
};

struct RestFitResult {
  ConvexField field;
  std::vector<double> loss_curve;
};

/// (1-lambda) L1 + lambda (1 - SSIM)/2 + beta mean(opacity), averaged over views.
double rest_fit_loss(const ConvexField& field, std::span<const View> views, const RestFitHyper& hyper);

/// Adam over hull points, colors and opacities with learning-rate backoff.
/// Returns the lowest-loss field; the last curve entry is its loss.
/// Throws InvalidArgument (fewer than 2 views) or NonFiniteLoss.
RestFitResult fit_rest_field(std::span<const View> views, const ConvexField& init_field,
                             const RestFitHyper& hyper);

struct EvaluationRecord {
  int iteration = 0;
  double log10_E = 0.0;
  double nu = 0.0;
  double loss = 0.0;
};

struct IdentifyOptions {
  int max_iterations = 400;
  double log10_E_step = 1e-2;  // relative to max(1, |log10 E|)
  double nu_step = 5e-3;
  double nu_min = 0.05;
  double nu_max = 0.45;
  /// Loss recorded for evaluations whose simulation fails.
  double diverged_loss = 1e10;
  /// Stop once the trust radii fall below these.
  double log10_E_tolerance = 1e-4;
  double nu_tolerance = 1e-5;
  Rgb background = Rgb::Zero();
  bool finetune_skinning = false;
  double skinning_learning_rate = 5e-7;
  std::function<void(const EvaluationRecord&)> on_evaluation;
};

struct IdentificationResult {
  double log10_E = 0.0;
  double nu = 0.0;
  std::vector<double> loss_curve;
  int iterations = 0;
  int evaluations = 0;
  /// Fine-tuned skinning parameters when fine-tuning was enabled.
  std::optional<VecX> skinning_parameters;
};

/// Everything needed to turn material parameters into rendered frames.
struct ForwardModel {
  const ConvexField* rest_field = nullptr;
  const SkinningBasis* skinning = nullptr;
  const CubatureSet* cubature = nullptr;
  SceneConditions conditions;
  double density = 1.0;
};

/// Simulates first_frame + count - 1 steps and renders frames
/// first_frame .. first_frame + count - 1 with `camera`.
std::vector<Image> render_sequence(const ForwardModel& model, const MaterialParams& material,
                                   const Camera& camera, double dt, int first_frame, int count,
                                   const Rgb& background);

/// Minimizes loss_sim over (log10 E, nu) with central finite differences,
/// curvature-scaled steps, per-coordinate trust radii and backtracking.
IdentificationResult identify_parameters(const FrameSequence& reference, const ForwardModel& model,
                                         const MaterialParams& init, const IdentifyOptions& options = {});

}  // namespace convexdyn
