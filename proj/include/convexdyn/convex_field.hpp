#pragma once

#include "convexdyn/common.hpp"

#include <functional>
#include <span>
#include <vector>

namespace convexdyn {

/// Oriented plane n.x + d = 0 with unit outward normal.
struct Plane {
  Vec3 normal = Vec3::UnitZ();
  double offset = 0.0;
};

/// Outward face planes of a convex hull; the hull is {x : n_h.x + d_h <= 0 for all h}.
struct HalfSpaceSet {
  std::vector<Plane> planes;

  std::size_t size() const { return planes.size(); }
};

/// One smooth convex: hull of `points`, plus appearance and softness.
///
/// `smoothness` (alpha) sharpens the log-sum-exp over face distances,
/// `sharpness` (beta) scales the sigmoid that turns it into occupancy.
/// Half-spaces are derived from the points at construction and never
/// integrated independently.
class ConvexPrimitive {
 public:
  ConvexPrimitive() = default;

  /// Validates attributes and builds the hull. Throws DegenerateHull or InvalidArgument.
  static ConvexPrimitive create(std::vector<Vec3> points, Rgb color, double opacity,
                                double smoothness, double sharpness);

  const std::vector<Vec3>& points() const { return points_; }
  const HalfSpaceSet& halfspaces() const { return halfspaces_; }
  const Rgb& color() const { return color_; }
  double opacity() const { return opacity_; }
  double smoothness() const { return smoothness_; }
  double sharpness() const { return sharpness_; }

  Vec3 centroid() const;
  double bounding_diagonal() const;

 private:
  std::vector<Vec3> points_;
  HalfSpaceSet halfspaces_;
  Rgb color_ = Rgb::Zero();
  double opacity_ = 1.0;
  double smoothness_ = 1.0;
  double sharpness_ = 1.0;
};

/// Deformed primitives together with their rest-state copies.
struct ConvexField {
  std::vector<ConvexPrimitive> primitives;
  std::vector<ConvexPrimitive> rest_primitives;

  static ConvexField from_rest(std::vector<ConvexPrimitive> rest);

  std::size_t size() const { return primitives.size(); }
  /// Throws ShapeMismatch when primitive and rest counts disagree.
  void validate() const;
};

/// Outward, deduplicated face planes of the hull of `points`.
/// Throws DegenerateHull when the centered points have rank < 3.
HalfSpaceSet compute_hull(std::span<const Vec3> points);

/// Hull volume by triangulating the faces. Throws DegenerateHull.
double hull_volume(std::span<const Vec3> points);

inline double plane_distance(const Plane& plane, const Vec3& x) {
  return plane.normal.dot(x) + plane.offset;
}

/// log(sum_h exp(alpha f_h(x))), evaluated with max subtraction.
double smooth_sdf(const HalfSpaceSet& halfspaces, const Vec3& x, double smoothness);

/// Numerically stable logistic function.
double sigmoid(double x);

/// sigmoid(-beta * smooth_sdf(x)); always in the open interval (0, 1)
/// except where double precision saturates.
double occupancy(const ConvexPrimitive& primitive, const Vec3& x);

/// Maps every point of `rest` through `deform` and rebuilds the hull.
/// Appearance attributes are copied unchanged.
ConvexPrimitive advect_primitive(const ConvexPrimitive& rest,
                                 const std::function<Vec3(const Vec3&)>& deform);

}  // namespace convexdyn
