#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

using namespace convexdyn;
using namespace testing;

namespace {

// Supporting planes found by checking every point triple.
std::vector<Plane> brute_force_faces(const std::vector<Vec3>& pts, double tol) {
  std::vector<Plane> out;
  const std::size_t n = pts.size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      for (std::size_t k = j + 1; k < n; ++k) {
        Vec3 nrm = (pts[j] - pts[i]).cross(pts[k] - pts[i]);
        if (nrm.norm() < 1e-9) continue;
        nrm.normalize();
        bool pos = false, neg = false;
        for (const Vec3& p : pts) {
          const double s = nrm.dot(p - pts[i]);
          pos |= s > tol;
          neg |= s < -tol;
        }
        if (pos && neg) continue;
        if (pos) nrm = -nrm;
        const bool dup = std::any_of(out.begin(), out.end(), [&](const Plane& p) {
          return (p.normal - nrm).norm() < 1e-6;
        });
        if (!dup) out.push_back({nrm, -nrm.dot(pts[i])});
      }
  return out;
}

bool same_plane_sets(const std::vector<Plane>& a, const std::vector<Plane>& b, double tol) {
  if (a.size() != b.size()) return false;
  for (const Plane& p : a) {
    const bool found = std::any_of(b.begin(), b.end(), [&](const Plane& q) {
      return (p.normal - q.normal).norm() < tol && std::abs(p.offset - q.offset) < tol;
    });
    if (!found) return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("convex_field") {

TEST_CASE("regular tetrahedron has four faces") {
  const std::vector<Vec3> tet = {{1, 1, 1}, {1, -1, -1}, {-1, 1, -1}, {-1, -1, 1}};
  const HalfSpaceSet hs = compute_hull(tet);
  CHECK(hs.size() == 4);
  for (const Plane& p : hs.planes) CHECK(p.normal.norm() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("coplanar points are rejected") {
  const std::vector<Vec3> flat = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {1, 1, 0}, {0.3, 0.2, 0}};
  CHECK_THROWS_AS(compute_hull(flat), Error);
  try {
    compute_hull(flat);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DegenerateHull);
  }
  const std::vector<Vec3> three = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  CHECK_THROWS_AS(compute_hull(three), Error);
}

TEST_CASE("centered unit cube gives six axis planes at distance one half") {
  const auto pts = cube_corners(Vec3::Constant(-0.5), Vec3::Constant(0.5));
  const HalfSpaceSet hs = compute_hull(pts);
  REQUIRE(hs.size() == 6);
  for (const Plane& p : hs.planes) {
    CHECK(p.normal.cwiseAbs().maxCoeff() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(p.offset) == doctest::Approx(0.5).epsilon(1e-12));
    int support = 0;
    for (const Vec3& x : pts) {
      CHECK(plane_distance(p, x) <= 1e-12);
      if (std::abs(plane_distance(p, x)) < 1e-12) ++support;
    }
    CHECK(support >= 3);
  }
}

TEST_CASE("hull matches brute-force face enumeration on random clouds") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Vec3> pts;
    const int n = 5 + trial % 10;
    for (int i = 0; i < n; ++i) pts.push_back(random_vec(rng, -1.0, 1.0));
    double diag = 0.0;
    for (const Vec3& a : pts)
      for (const Vec3& b : pts) diag = std::max(diag, (a - b).norm());
    const HalfSpaceSet hs = compute_hull(pts);
    for (const Plane& p : hs.planes) {
      CHECK(std::abs(p.normal.norm() - 1.0) < 1e-9);
      int support = 0;
      for (const Vec3& x : pts) {
        CHECK(plane_distance(p, x) <= 1e-7 * diag);
        if (std::abs(plane_distance(p, x)) < 1e-9) ++support;
      }
      CHECK(support >= 3);
    }
    CHECK(same_plane_sets(hs.planes, brute_force_faces(pts, 1e-10), 1e-8));
  }
}

TEST_CASE("plane distance examples") {
  CHECK(plane_distance({Vec3(0, 0, 1), 0.0}, Vec3(0, 0, 2)) == 2.0);
  CHECK(plane_distance({Vec3(0, 0, 1), -1.0}, Vec3(5, -3, 1)) == 0.0);
  CHECK(plane_distance({Vec3(1, 0, 0), -0.5}, Vec3(0.2, 9, 9)) == doctest::Approx(-0.3).epsilon(1e-15));
}

TEST_CASE("smooth sdf identities") {
  HalfSpaceSet one{{{Vec3(0, 0, 1), 0.0}}};
  CHECK(smooth_sdf(one, Vec3(0, 0, 0.25), 8.0) == doctest::Approx(2.0).epsilon(1e-14));

  HalfSpaceSet cube_hs = compute_hull(cube_corners(Vec3::Constant(-0.5), Vec3::Constant(0.5)));
  // At the center every face is at distance -0.5.
  CHECK(smooth_sdf(cube_hs, Vec3::Zero(), 10.0) == doctest::Approx(-5.0 + std::log(6.0)).epsilon(1e-13));

  // Overflow safety.
  CHECK(std::isfinite(smooth_sdf(cube_hs, Vec3(1e3, 0, 0), 1e4)));
}

TEST_CASE("log-sum-exp stays within ln(H)/alpha of the max plane distance") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> alpha_dist(0.5, 200.0);
  for (int trial = 0; trial < 1000; ++trial) {
    HalfSpaceSet hs;
    for (int h = 0; h < 6; ++h) {
      Vec3 n = random_vec(rng, -1.0, 1.0);
      if (n.norm() < 1e-3) n = Vec3::UnitX();
      hs.planes.push_back({n.normalized(), random_vec(rng, -1, 1)[0]});
    }
    const Vec3 x = random_vec(rng, -2.0, 2.0);
    const double alpha = alpha_dist(rng);
    double max_f = -std::numeric_limits<double>::infinity();
    for (const Plane& p : hs.planes) max_f = std::max(max_f, plane_distance(p, x));
    const double phi = smooth_sdf(hs, x, alpha);
    CHECK(phi / alpha - max_f >= -1e-12);
    CHECK(phi / alpha - max_f <= std::log(6.0) / alpha + 1e-12);
  }
}

TEST_CASE("occupancy examples") {
  CHECK(sigmoid(0.0) == 0.5);
  HalfSpaceSet one{{{Vec3(0, 0, 1), 0.0}}};
  const double occ = sigmoid(-1.0 * smooth_sdf(one, Vec3(0, 0, -0.1), 10.0));
  CHECK(occ == doctest::Approx(0.7310585786300049).epsilon(1e-14));

  const ConvexPrimitive c = cube(Vec3::Zero(), 1.0, Rgb(1, 0, 0), 1.0, 200.0, 1.0);
  CHECK(occupancy(c, Vec3::Zero()) > 1.0 - 1e-12);
  for (double d : {2.0, 50.0, 1e6}) {
    const double far = occupancy(c, Vec3(d, 0, 0));
    CHECK(far > 0.0);
    CHECK(far < 1e-12);
  }
  CHECK(occupancy(c, Vec3::Zero()) < 1.0);
}

TEST_CASE("occupancy separates inside from outside") {
  std::mt19937_64 rng(5);
  const auto pts = cube_corners(Vec3(-0.3, -0.2, -0.1), Vec3(0.5, 0.4, 0.3));
  const double diag = (Vec3(0.5, 0.4, 0.3) - Vec3(-0.3, -0.2, -0.1)).norm();
  const ConvexPrimitive c = ConvexPrimitive::create(pts, Rgb(0, 1, 0), 1.0, 50.0 / diag, 1.0);
  int inside = 0, outside = 0;
  for (int i = 0; i < 20000; ++i) {
    const Vec3 x = random_vec(rng, -1.0, 1.0);
    double max_f = -1e300;
    for (const Plane& p : c.halfspaces().planes) max_f = std::max(max_f, plane_distance(p, x));
    if (max_f <= -0.05 * diag) {
      CHECK(occupancy(c, x) > 0.5);
      ++inside;
    } else if (max_f >= 0.05 * diag) {
      CHECK(occupancy(c, x) < 0.5);
      ++outside;
    }
  }
  CHECK(inside > 50);
  CHECK(outside > 50);
}

TEST_CASE("smooth sdf is monotone along rays leaving through a face") {
  const ConvexPrimitive c = cube(Vec3::Zero(), 1.0);
  std::mt19937_64 rng(9);
  for (const Plane& p : c.halfspaces().planes) {
    for (int r = 0; r < 10; ++r) {
      // Face-interior point: project a random point onto the face, keep it away from edges.
      Vec3 x = 0.6 * random_vec(rng, -0.5, 0.5);
      x -= plane_distance(p, x) * p.normal;
      double prev = -1e300;
      for (int s = 0; s <= 40; ++s) {
        const double phi = smooth_sdf(c.halfspaces(), x + (0.05 * s) * p.normal, 20.0);
        CHECK(phi >= prev);
        prev = phi;
      }
    }
  }
}

TEST_CASE("primitive construction validates attributes") {
  const auto pts = cube_corners(Vec3::Zero(), Vec3::Ones());
  CHECK_THROWS_AS(ConvexPrimitive::create(pts, Rgb(0, 0, 0), 1.5, 1.0, 1.0), Error);
  CHECK_THROWS_AS(ConvexPrimitive::create(pts, Rgb(0, 0, 0), 0.5, 0.0, 1.0), Error);
  CHECK_THROWS_AS(ConvexPrimitive::create(pts, Rgb(0, 0, 0), 0.5, 1.0, -1.0), Error);
  CHECK_THROWS_AS(ConvexPrimitive::create(pts, Rgb(2, 0, 0), 0.5, 1.0, 1.0), Error);
  CHECK_THROWS_AS(ConvexPrimitive::create({pts[0], pts[1], pts[2]}, Rgb(0, 0, 0), 0.5, 1.0, 1.0), Error);
  ConvexField bad;
  bad.primitives.push_back(cube(Vec3::Zero(), 1.0));
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("interior points are kept but contribute no planes") {
  auto pts = cube_corners(Vec3::Zero(), Vec3::Ones());
  pts.push_back(Vec3::Constant(0.5));
  const ConvexPrimitive c = ConvexPrimitive::create(pts, Rgb(0, 0, 0), 1.0, 1.0, 1.0);
  CHECK(c.points().size() == 9);
  CHECK(c.halfspaces().size() == 6);
}

TEST_CASE("advection: identity, translation and scaling") {
  const ConvexPrimitive rest = ConvexPrimitive::create(
      {{0, 0, 0}, {1, 0.1, 0}, {0.2, 1, 0.1}, {0.1, 0.2, 1}, {0.9, 0.8, 0.7}, {0.5, 0.1, 0.6}},
      Rgb(0.1, 0.2, 0.3), 0.7, 12.0, 3.0);

  const ConvexPrimitive same = advect_primitive(rest, [](const Vec3& x) { return x; });
  CHECK(same.points() == rest.points());
  CHECK(same.color() == rest.color());
  CHECK(same.opacity() == rest.opacity());
  CHECK(same.smoothness() == rest.smoothness());
  CHECK(same.sharpness() == rest.sharpness());
  CHECK(same_plane_sets(same.halfspaces().planes, rest.halfspaces().planes, 1e-9));

  const Vec3 t(1, 0, 0);
  const ConvexPrimitive moved = advect_primitive(rest, [&](const Vec3& x) { return Vec3(x + t); });
  std::vector<Plane> expected;
  for (const Plane& p : rest.halfspaces().planes) expected.push_back({p.normal, p.offset - p.normal.dot(t)});
  CHECK(same_plane_sets(moved.halfspaces().planes, expected, 1e-9));

  const Vec3 c = rest.centroid();
  const ConvexPrimitive big = advect_primitive(rest, [&](const Vec3& x) { return Vec3(c + 2.0 * (x - c)); });
  const double v0 = hull_volume(rest.points());
  CHECK(hull_volume(big.points()) == doctest::Approx(8.0 * v0).epsilon(1e-12));

  // Independent Monte Carlo volume estimate for the scaled hull.
  std::mt19937_64 rng(17);
  Vec3 lo = big.points()[0], hi = lo;
  for (const Vec3& x : big.points()) {
    lo = lo.cwiseMin(x);
    hi = hi.cwiseMax(x);
  }
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int samples = 400000;
  int hits = 0;
  for (int i = 0; i < samples; ++i) {
    const Vec3 x = lo + Vec3(u(rng), u(rng), u(rng)).cwiseProduct(hi - lo);
    bool in = true;
    for (const Plane& p : big.halfspaces().planes) in &= plane_distance(p, x) <= 0.0;
    hits += in;
  }
  const double mc = (hi - lo).prod() * hits / samples;
  CHECK(mc == doctest::Approx(8.0 * v0).epsilon(0.01));

  const auto collapse = [](const Vec3& x) { return Vec3(x.x(), x.y(), 0.0); };
  CHECK_THROWS_AS(advect_primitive(rest, collapse), Error);
}

TEST_CASE("hull volume of the unit cube") {
  CHECK(hull_volume(cube_corners(Vec3::Zero(), Vec3::Ones())) == doctest::Approx(1.0).epsilon(1e-14));
}

}
