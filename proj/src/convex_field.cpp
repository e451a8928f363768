#include "convexdyn/convex_field.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <utility>

namespace convexdyn {

namespace {

constexpr double kMergeAngle = 1e-6;
constexpr double kRankRatio = 1e-8;

double bounding_diagonal_of(std::span<const Vec3> points) {
  if (points.empty()) return 0.0;
  Vec3 lo = points[0], hi = points[0];
  for (const Vec3& p : points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  return (hi - lo).norm();
}

void check_rank(std::span<const Vec3> points) {
  if (points.size() < 4)
    throw Error(ErrorKind::DegenerateHull, "convex hull needs at least 4 points, got " +
                                               std::to_string(points.size()));
  Vec3 mean = Vec3::Zero();
  for (const Vec3& p : points) mean += p;
  mean /= static_cast<double>(points.size());
  MatX centered(points.size(), 3);
  for (std::size_t i = 0; i < points.size(); ++i) centered.row(i) = (points[i] - mean).transpose();
  Eigen::JacobiSVD<MatX> svd(centered);
  const Vec3 s = svd.singularValues();
  if (!(s[0] > 0.0) || s[2] / s[0] < kRankRatio)
    throw Error(ErrorKind::DegenerateHull, "hull points are coplanar or collinear");
}

struct Face {
  std::array<int, 3> v;
  Vec3 normal;
  double offset;
  bool alive = true;
};

Face make_face(std::span<const Vec3> pts, int a, int b, int c, const Vec3& interior) {
  Face f{{a, b, c}, Vec3::Zero(), 0.0};
  Vec3 n = (pts[b] - pts[a]).cross(pts[c] - pts[a]);
  const double len = n.norm();
  if (len > 0.0) n /= len;
  if (n.dot(interior - pts[a]) > 0.0) {
    std::swap(f.v[1], f.v[2]);
    n = -n;
  }
  f.normal = n;
  f.offset = -n.dot(pts[a]);
  return f;
}

// Incremental hull. Returns outward-wound triangles.
std::vector<std::array<int, 3>> hull_triangles(std::span<const Vec3> pts) {
  check_rank(pts);
  const int n = static_cast<int>(pts.size());
  const double tol = 1e-10 * std::max(bounding_diagonal_of(pts), 1e-300);

  int i0 = 0;
  for (int i = 1; i < n; ++i)
    if (pts[i].x() < pts[i0].x()) i0 = i;
  int i1 = i0;
  double best = -1.0;
  for (int i = 0; i < n; ++i) {
    const double d = (pts[i] - pts[i0]).squaredNorm();
    if (d > best) best = d, i1 = i;
  }
  const Vec3 axis = (pts[i1] - pts[i0]).normalized();
  int i2 = i0;
  best = -1.0;
  for (int i = 0; i < n; ++i) {
    const Vec3 r = pts[i] - pts[i0];
    const double d = (r - r.dot(axis) * axis).squaredNorm();
    if (d > best) best = d, i2 = i;
  }
  const Vec3 pn = (pts[i1] - pts[i0]).cross(pts[i2] - pts[i0]).normalized();
  int i3 = i0;
  best = -1.0;
  for (int i = 0; i < n; ++i) {
    const double d = std::abs(pn.dot(pts[i] - pts[i0]));
    if (d > best) best = d, i3 = i;
  }
  if (best <= tol) throw Error(ErrorKind::DegenerateHull, "hull points are coplanar");

  const Vec3 interior = (pts[i0] + pts[i1] + pts[i2] + pts[i3]) / 4.0;
  std::vector<Face> faces;
  faces.push_back(make_face(pts, i0, i1, i2, interior));
  faces.push_back(make_face(pts, i0, i1, i3, interior));
  faces.push_back(make_face(pts, i0, i2, i3, interior));
  faces.push_back(make_face(pts, i1, i2, i3, interior));

  std::vector<char> visible;
  for (int p = 0; p < n; ++p) {
    if (p == i0 || p == i1 || p == i2 || p == i3) continue;
    visible.assign(faces.size(), 0);
    bool any = false;
    for (std::size_t f = 0; f < faces.size(); ++f) {
      if (!faces[f].alive) continue;
      if (faces[f].normal.dot(pts[p]) + faces[f].offset > tol) visible[f] = 1, any = true;
    }
    if (!any) continue;

    // Directed edges of live faces; an edge of a visible face whose twin
    // belongs to a hidden face lies on the horizon.
    std::map<std::pair<int, int>, std::size_t> edge_owner;
    for (std::size_t f = 0; f < faces.size(); ++f) {
      if (!faces[f].alive) continue;
      for (int e = 0; e < 3; ++e) edge_owner[{faces[f].v[e], faces[f].v[(e + 1) % 3]}] = f;
    }
    std::vector<std::pair<int, int>> horizon;
    for (std::size_t f = 0; f < faces.size(); ++f) {
      if (!faces[f].alive || !visible[f]) continue;
      for (int e = 0; e < 3; ++e) {
        const int a = faces[f].v[e], b = faces[f].v[(e + 1) % 3];
        auto twin = edge_owner.find({b, a});
        if (twin == edge_owner.end() || !visible[twin->second]) horizon.emplace_back(a, b);
      }
    }
    for (std::size_t f = 0; f < faces.size(); ++f)
      if (visible[f]) faces[f].alive = false;
    for (const auto& [a, b] : horizon) faces.push_back(make_face(pts, a, b, p, interior));
  }

  std::vector<std::array<int, 3>> tris;
  for (const Face& f : faces)
    if (f.alive) tris.push_back(f.v);
  return tris;
}

}  // namespace

HalfSpaceSet compute_hull(std::span<const Vec3> points) {
  const auto tris = hull_triangles(points);

  struct Accum {
    Vec3 weighted_normal;
    Vec3 unit;
  };
  std::vector<Accum> groups;
  const double cos_tol = std::cos(kMergeAngle);
  for (const auto& t : tris) {
    const Vec3 cross = (points[t[1]] - points[t[0]]).cross(points[t[2]] - points[t[0]]);
    const double area2 = cross.norm();
    if (!(area2 > 0.0)) continue;
    const Vec3 unit = cross / area2;
    bool merged = false;
    for (Accum& g : groups) {
      if (g.unit.dot(unit) >= cos_tol) {
        g.weighted_normal += cross;
        g.unit = g.weighted_normal.normalized();
        merged = true;
        break;
      }
    }
    if (!merged) groups.push_back({cross, unit});
  }

  HalfSpaceSet out;
  out.planes.reserve(groups.size());
  for (const Accum& g : groups) {
    Plane plane;
    plane.normal = g.unit;
    double support = -std::numeric_limits<double>::infinity();
    for (const Vec3& x : points) support = std::max(support, plane.normal.dot(x));
    plane.offset = -support;
    out.planes.push_back(plane);
  }
  return out;
}

double hull_volume(std::span<const Vec3> points) {
  const auto tris = hull_triangles(points);
  Vec3 ref = Vec3::Zero();
  for (const Vec3& p : points) ref += p;
  ref /= static_cast<double>(points.size());
  double volume = 0.0;
  for (const auto& t : tris)
    volume += (points[t[0]] - ref).dot((points[t[1]] - ref).cross(points[t[2]] - ref)) / 6.0;
  return std::abs(volume);
}

double smooth_sdf(const HalfSpaceSet& halfspaces, const Vec3& x, double smoothness) {
  double peak = -std::numeric_limits<double>::infinity();
  for (const Plane& p : halfspaces.planes) peak = std::max(peak, smoothness * plane_distance(p, x));
  double sum = 0.0;
  for (const Plane& p : halfspaces.planes) sum += std::exp(smoothness * plane_distance(p, x) - peak);
  return peak + std::log(sum);
}

double sigmoid(double x) {
  double s;
  if (x >= 0.0) {
    s = 1.0 / (1.0 + std::exp(-x));
  } else {
    const double e = std::exp(x);
    s = e / (1.0 + e);
  }
  constexpr double kHi = 1.0 - std::numeric_limits<double>::epsilon() / 2.0;
  return std::clamp(s, std::numeric_limits<double>::denorm_min(), kHi);
}

double occupancy(const ConvexPrimitive& primitive, const Vec3& x) {
  return sigmoid(-primitive.sharpness() * smooth_sdf(primitive.halfspaces(), x, primitive.smoothness()));
}

ConvexPrimitive ConvexPrimitive::create(std::vector<Vec3> points, Rgb color, double opacity,
                                        double smoothness, double sharpness) {
  if (!(opacity >= 0.0 && opacity <= 1.0))
    throw Error(ErrorKind::InvalidArgument, "opacity must lie in [0,1]");
  if (!(smoothness > 0.0) || !(sharpness > 0.0))
    throw Error(ErrorKind::InvalidArgument, "smoothness and sharpness must be positive");
  if (!(color.minCoeff() >= 0.0 && color.maxCoeff() <= 1.0))
    throw Error(ErrorKind::InvalidArgument, "color channels must lie in [0,1]");
  for (const Vec3& p : points)
    if (!p.allFinite()) throw Error(ErrorKind::NonFinite, "non-finite hull point");
  ConvexPrimitive prim;
  prim.halfspaces_ = compute_hull(points);
  prim.points_ = std::move(points);
  prim.color_ = color;
  prim.opacity_ = opacity;
  prim.smoothness_ = smoothness;
  prim.sharpness_ = sharpness;
  return prim;
}

Vec3 ConvexPrimitive::centroid() const {
  Vec3 c = Vec3::Zero();
  for (const Vec3& p : points_) c += p;
  return points_.empty() ? c : Vec3(c / static_cast<double>(points_.size()));
}

double ConvexPrimitive::bounding_diagonal() const { return bounding_diagonal_of(points_); }

ConvexField ConvexField::from_rest(std::vector<ConvexPrimitive> rest) {
  ConvexField field;
  field.primitives = rest;
  field.rest_primitives = std::move(rest);
  return field;
}

void ConvexField::validate() const {
  if (primitives.size() != rest_primitives.size())
    throw Error(ErrorKind::ShapeMismatch, "primitive and rest primitive counts differ");
  for (std::size_t i = 0; i < primitives.size(); ++i)
    if (primitives[i].points().size() != rest_primitives[i].points().size())
      throw Error(ErrorKind::ShapeMismatch,
                  "primitive " + std::to_string(i) + " point count differs from its rest state");
}

ConvexPrimitive advect_primitive(const ConvexPrimitive& rest,
                                 const std::function<Vec3(const Vec3&)>& deform) {
  std::vector<Vec3> moved;
  moved.reserve(rest.points().size());
  for (const Vec3& X : rest.points()) moved.push_back(deform(X));
  return ConvexPrimitive::create(std::move(moved), rest.color(), rest.opacity(), rest.smoothness(),
                                 rest.sharpness());
}

}  // namespace convexdyn
