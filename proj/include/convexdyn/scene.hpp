#pragma once

#include "convexdyn/convex_field.hpp"
#include "convexdyn/materials.hpp"
#include "convexdyn/reduced_sim.hpp"
#include "convexdyn/renderer.hpp"
#include "convexdyn/skinning.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace convexdyn {

/// Procedural rest shape. Every primitive is a box cell carrying
/// `points_per_primitive` of its hull points, except explicit point lists
/// and fields loaded from disk.
struct ShapeSpec {
  enum class Kind { Box, Grid, SphereCluster, TorusSegments, Points, FieldFile };

  Kind kind = Kind::Grid;
  Vec3 center = Vec3(0.0, 0.15, 0.0);
  Vec3 size = Vec3::Constant(0.2);  // box and grid extent
  std::array<int, 3> cells = {2, 2, 2};  // grid resolution
  int count = 8;                     // sphere cluster primitives / torus segments
  double radius = 0.1;               // cluster radius / torus major radius
  double cell_size = 0.05;           // cluster / torus cell edge
  std::vector<std::vector<Vec3>> points;  // explicit primitives
  std::vector<Rgb> colors;           // per primitive; cycled when shorter
  std::string field_path;
  double opacity = 1.0;
  double smoothness = 100.0;
  double sharpness = 1.0;
};

struct SimSpec {
  double dt = 0.02;
  int steps = 24;
  int handles = 10;
  int points_per_primitive = 6;
  int cubature_points = 256;
};

struct CameraSpec {
  Vec3 eye = Vec3(0.0, 0.2, -1.0);
  Vec3 target = Vec3(0.0, 0.1, 0.0);
  Vec3 up = Vec3::UnitY();
  double focal = 96.0;
};

struct RenderSpec {
  std::vector<CameraSpec> cameras = {CameraSpec{}};
  int width = 64;
  int height = 64;
  Rgb background = Rgb::Zero();
};

struct IdentifySpec {
  double init_youngs_modulus = 80000.0;
  double init_poissons_ratio = 0.2;
  int max_iterations = 400;
  int observed_frames = 16;
  bool finetune_skinning = false;
  double skinning_learning_rate = 5e-7;
};

struct SceneConfig {
  ShapeSpec shape;
  MaterialParams material{8000.0, 0.4, 1000.0};
  SceneConditions conditions;
  SimSpec sim;
  SkinningHyper skinning;
  RenderSpec render;
  IdentifySpec identify;
  std::uint64_t seed = 0;

  std::vector<Camera> cameras() const;
};

/// Strict parse: unknown keys, wrong types and out-of-range values raise ConfigParse.
SceneConfig parse_scene_config(const nlohmann::json& doc);
SceneConfig load_scene_config(const std::filesystem::path& path);
nlohmann::json to_json(const SceneConfig& config);

/// K hull points of the axis-aligned box [lo, hi]: the inscribed
/// tetrahedron corners, then the remaining corners, then face centers.
/// Requires 4 <= K <= 14.
std::vector<Vec3> box_cell_points(const Vec3& lo, const Vec3& hi, int K);

/// Builds the rest field described by the shape section.
ConvexField build_rest_field(const SceneConfig& config);

}  // namespace convexdyn
