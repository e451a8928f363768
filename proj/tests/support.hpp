#pragma once

#include "convexdyn/convex_field.hpp"
#include "convexdyn/skinning.hpp"

#include <Eigen/Geometry>

#include <random>
#include <vector>

namespace testing {

using namespace convexdyn;

inline std::vector<Vec3> cube_corners(const Vec3& lo, const Vec3& hi) {
  std::vector<Vec3> pts;
  for (int i = 0; i < 8; ++i)
    pts.emplace_back(i & 1 ? hi.x() : lo.x(), i & 2 ? hi.y() : lo.y(), i & 4 ? hi.z() : lo.z());
  return pts;
}

inline ConvexPrimitive cube(const Vec3& center, double edge, const Rgb& color = Rgb(0.8, 0.2, 0.1),
                            double opacity = 1.0, double alpha = 100.0, double beta = 1.0) {
  const Vec3 h = Vec3::Constant(0.5 * edge);
  return ConvexPrimitive::create(cube_corners(center - h, center + h), color, opacity, alpha, beta);
}

inline Mat3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  return q.toRotationMatrix();
}

inline Vec3 random_vec(std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  return {u(rng), u(rng), u(rng)};
}

// Max over entries of |a - b| / max(|b|, floor).
inline double rel_err(const MatX& a, const MatX& b, double floor = 1e-8) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(b.cwiseAbs().maxCoeff(), floor);
}

}  // namespace testing
