#pragma once

#include "convexdyn/common.hpp"
#include "convexdyn/convex_field.hpp"

#include <span>
#include <vector>

namespace convexdyn {

/// Pinhole camera. `rotation` maps world to camera axes; the camera looks
/// along +z with image x to the right and image y down. The principal point
/// is the image center.
struct Camera {
  Vec3 position = Vec3::Zero();
  Mat3 rotation = Mat3::Identity();
  double focal = 1.0;
  int width = 1;
  int height = 1;
  double near = 1e-3;

  void validate() const;
  Vec3 to_camera(const Vec3& x) const { return rotation * (x - position); }
  Vec2 principal_point() const { return {0.5 * width, 0.5 * height}; }

  static Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double focal,
                        int width, int height, double near = 1e-3);
};

struct Image {
  int width = 0;
  int height = 0;
  std::vector<Rgb> pixels;

  static Image filled(int width, int height, const Rgb& color);
  Rgb& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  const Rgb& at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::size_t size() const { return pixels.size(); }
};

struct Projection {
  std::vector<Vec2> points;  // pixel coordinates
  double depth = 0.0;        // camera-space depth of the primitive centroid
};

/// Perspective projection of every hull point. Points behind the near plane
/// are projected at the near depth. Throws BehindCamera when no point is in front.
Projection project_primitive(const ConvexPrimitive& primitive, const Camera& camera);

/// Counter-clockwise 2D hull (indices into `points`), collinear points dropped.
/// Throws DegenerateProjection when fewer than 3 vertices remain.
std::vector<int> hull_2d(std::span<const Vec2> points);

/// Smooth 2D occupancy of pixel q: edge distances are in pixels divided by
/// `focal`, combined by log-sum-exp with alpha and squashed by
/// sigmoid(-beta phi). Throws DegenerateProjection.
double occupancy_2d(std::span<const Vec2> projected, const Vec2& q, double focal, double smoothness,
                    double sharpness);

/// Alpha-blends the field front to back (by centroid depth, ties by index)
/// over the background. Primitives behind the camera or with degenerate
/// projections are skipped.
Image render(const ConvexField& field, const Camera& camera, const Rgb& background);

struct PrimitiveGradient {
  std::vector<Vec3> points;
  Rgb color = Rgb::Zero();
  double opacity = 0.0;
};

struct RenderGradients {
  double loss = 0.0;
  std::vector<PrimitiveGradient> primitives;
};

/// Back-propagates per-pixel color adjoints dL/dC through blending,
/// occupancy, the 2D edge half-planes and projection. The hull combinatorics
/// and depth order are held fixed.
std::vector<PrimitiveGradient> render_backward(const ConvexField& field, const Camera& camera,
                                               const Rgb& background,
                                               std::span<const Rgb> pixel_adjoint);

/// Loss (1/P) sum_p |C_p - target_p|^2 and its gradient with respect to
/// hull points, colors and opacities.
RenderGradients render_gradients(const ConvexField& field, const Camera& camera,
                                 const Rgb& background, const Image& target);

}  // namespace convexdyn
