#include "convexdyn/renderer.hpp"

#include "convexdyn/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>

namespace convexdyn {

namespace {

constexpr std::size_t kRowChunk = 4;
// Alphas below this are exactly zero, so primitives whose tails do not reach
// a pixel leave it bitwise untouched.
constexpr double kMinAlpha = 1e-12;

double flushed(double a) { return a < kMinAlpha ? 0.0 : a; }

double cross2(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

// A primitive ready for rasterization: projected hull with outward edge normals.
struct Splat {
  std::size_t index = 0;
  double depth = 0.0;
  std::vector<Vec3> camera_points;
  std::vector<Vec2> pixels;
  std::vector<int> hull;     // CCW vertex indices into pixels
  std::vector<Vec2> normals;  // outward unit normal of edge hull[e] -> hull[e+1]
  Rgb color;
  double opacity = 0.0;
  double smoothness = 1.0;
  double sharpness = 1.0;
};

struct EdgeEval {
  double occupancy = 0.0;
  double phi = 0.0;
};

// phi = LSE_e(alpha f_e(q)); writes the softmax weights when requested.
EdgeEval evaluate_splat(const Splat& s, const Vec2& q, double inv_focal, std::vector<double>* soft) {
  const std::size_t H = s.hull.size();
  double peak = -std::numeric_limits<double>::infinity();
  double local[64];
  std::vector<double> heap;
  double* f = local;
  if (H > 64) {
    heap.resize(H);
    f = heap.data();
  }
  for (std::size_t e = 0; e < H; ++e) {
    f[e] = s.smoothness * s.normals[e].dot(q - s.pixels[s.hull[e]]) * inv_focal;
    peak = std::max(peak, f[e]);
  }
  double sum = 0.0;
  for (std::size_t e = 0; e < H; ++e) sum += std::exp(f[e] - peak);
  EdgeEval out;
  out.phi = peak + std::log(sum);
  out.occupancy = sigmoid(-s.sharpness * out.phi);
  if (soft) {
    soft->resize(H);
    for (std::size_t e = 0; e < H; ++e) (*soft)[e] = std::exp(f[e] - peak) / sum;
  }
  return out;
}

std::optional<Splat> prepare(const ConvexPrimitive& prim, std::size_t index, const Camera& cam) {
  Splat s;
  s.index = index;
  s.color = prim.color();
  s.opacity = prim.opacity();
  s.smoothness = prim.smoothness();
  s.sharpness = prim.sharpness();
  try {
    Projection proj = project_primitive(prim, cam);
    s.depth = proj.depth;
    s.pixels = std::move(proj.points);
    s.hull = hull_2d(s.pixels);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::BehindCamera || e.kind() == ErrorKind::DegenerateProjection)
      return std::nullopt;
    throw;
  }
  for (const Vec3& x : prim.points()) s.camera_points.push_back(cam.to_camera(x));
  const std::size_t H = s.hull.size();
  for (std::size_t e = 0; e < H; ++e) {
    const Vec2 d = s.pixels[s.hull[(e + 1) % H]] - s.pixels[s.hull[e]];
    s.normals.push_back(Vec2(d.y(), -d.x()) / d.norm());
  }
  return s;
}

std::vector<Splat> prepare_all(const ConvexField& field, const Camera& cam) {
  std::vector<Splat> splats;
  for (std::size_t i = 0; i < field.primitives.size(); ++i)
    if (auto s = prepare(field.primitives[i], i, cam)) splats.push_back(std::move(*s));
  std::stable_sort(splats.begin(), splats.end(),
                   [](const Splat& a, const Splat& b) { return a.depth < b.depth; });
  return splats;
}

Vec2 pixel_center(int x, int y) { return {x + 0.5, y + 0.5}; }

}  // namespace

void Camera::validate() const {
  if ((rotation * rotation.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-9)
    throw Error(ErrorKind::InvalidArgument, "camera rotation must be orthonormal");
  if (!(focal > 0.0) || !(near > 0.0))
    throw Error(ErrorKind::InvalidArgument, "camera focal length and near plane must be positive");
  if (width < 1 || height < 1) throw Error(ErrorKind::InvalidArgument, "camera resolution must be positive");
}

Camera Camera::look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double focal, int width,
                       int height, double near) {
  const Vec3 forward = (target - eye).normalized();
  const Vec3 right = forward.cross(up).normalized();
  const Vec3 down = forward.cross(right);
  Camera cam;
  cam.position = eye;
  cam.rotation.row(0) = right.transpose();
  cam.rotation.row(1) = down.transpose();
  cam.rotation.row(2) = forward.transpose();
  cam.focal = focal;
  cam.width = width;
  cam.height = height;
  cam.near = near;
  return cam;
}

Image Image::filled(int width, int height, const Rgb& color) {
  Image img;
  img.width = width;
  img.height = height;
  img.pixels.assign(static_cast<std::size_t>(width) * height, color);
  return img;
}

Projection project_primitive(const ConvexPrimitive& primitive, const Camera& camera) {
  Projection out;
  const Vec2 center = camera.principal_point();
  bool any_front = false;
  for (const Vec3& x : primitive.points()) {
    const Vec3 c = camera.to_camera(x);
    any_front = any_front || c.z() >= camera.near;
    const double depth = std::max(c.z(), camera.near);
    out.points.push_back(center + camera.focal * Vec2(c.x(), c.y()) / depth);
  }
  if (!any_front) throw Error(ErrorKind::BehindCamera, "primitive lies entirely behind the near plane");
  out.depth = camera.to_camera(primitive.centroid()).z();
  return out;
}

std::vector<int> hull_2d(std::span<const Vec2> points) {
  const int n = static_cast<int>(points.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return points[a].x() < points[b].x() || (points[a].x() == points[b].x() && points[a].y() < points[b].y());
  });
  double extent = 0.0;
  for (const Vec2& p : points) extent = std::max(extent, (p - points[order.front()]).norm());
  const double tol = 1e-12 * extent * extent;

  std::vector<int> hull(2 * n + 1);
  int k = 0;
  for (int i = 0; i < n; ++i) {
    while (k >= 2 && cross2(points[hull[k - 1]] - points[hull[k - 2]],
                            points[order[i]] - points[hull[k - 2]]) <= tol)
      --k;
    hull[k++] = order[i];
  }
  for (int i = n - 2, lower = k + 1; i >= 0; --i) {
    while (k >= lower && cross2(points[hull[k - 1]] - points[hull[k - 2]],
                                points[order[i]] - points[hull[k - 2]]) <= tol)
      --k;
    hull[k++] = order[i];
  }
  hull.resize(std::max(0, k - 1));
  if (hull.size() < 3) throw Error(ErrorKind::DegenerateProjection, "projected hull is degenerate");
  return hull;
}

double occupancy_2d(std::span<const Vec2> projected, const Vec2& q, double focal, double smoothness,
                    double sharpness) {
  Splat s;
  s.pixels.assign(projected.begin(), projected.end());
  s.hull = hull_2d(s.pixels);
  const std::size_t H = s.hull.size();
  for (std::size_t e = 0; e < H; ++e) {
    const Vec2 d = s.pixels[s.hull[(e + 1) % H]] - s.pixels[s.hull[e]];
    s.normals.push_back(Vec2(d.y(), -d.x()) / d.norm());
  }
  s.smoothness = smoothness;
  s.sharpness = sharpness;
  return evaluate_splat(s, q, 1.0 / focal, nullptr).occupancy;
}

Image render(const ConvexField& field, const Camera& camera, const Rgb& background) {
  camera.validate();
  const std::vector<Splat> splats = prepare_all(field, camera);
  Image img = Image::filled(camera.width, camera.height, background);
  const double inv_focal = 1.0 / camera.focal;
  parallel_chunks(camera.height, kRowChunk, [&](std::size_t y0, std::size_t y1, std::size_t) {
    for (std::size_t y = y0; y < y1; ++y)
      for (int x = 0; x < camera.width; ++x) {
        const Vec2 q = pixel_center(x, static_cast<int>(y));
        Rgb color = Rgb::Zero();
        double transmittance = 1.0;
        for (const Splat& s : splats) {
          const double a = flushed(s.opacity * evaluate_splat(s, q, inv_focal, nullptr).occupancy);
          color += transmittance * a * s.color;
          transmittance *= 1.0 - a;
        }
        color += transmittance * background;
        img.at(x, static_cast<int>(y)) = color.cwiseMax(0.0).cwiseMin(1.0);
      }
  });
  return img;
}

std::vector<PrimitiveGradient> render_backward(const ConvexField& field, const Camera& camera,
                                               const Rgb& background,
                                               std::span<const Rgb> pixel_adjoint) {
  camera.validate();
  if (pixel_adjoint.size() != static_cast<std::size_t>(camera.width) * camera.height)
    throw Error(ErrorKind::ShapeMismatch, "pixel adjoint size does not match the camera");
  const std::vector<Splat> splats = prepare_all(field, camera);
  const std::size_t S = splats.size();
  const double inv_focal = 1.0 / camera.focal;

  // 2D gradients per splat vertex; reduced per row chunk in chunk order.
  struct Partial {
    std::vector<std::vector<Vec2>> pixel_grads;
    std::vector<Rgb> color;
    std::vector<double> opacity;
  };
  const std::size_t chunks = chunk_count(camera.height, kRowChunk);
  std::vector<Partial> partial(chunks);

  parallel_chunks(camera.height, kRowChunk, [&](std::size_t y0, std::size_t y1, std::size_t c) {
    Partial p;
    p.pixel_grads.resize(S);
    for (std::size_t i = 0; i < S; ++i) p.pixel_grads[i].assign(splats[i].pixels.size(), Vec2::Zero());
    p.color.assign(S, Rgb::Zero());
    p.opacity.assign(S, 0.0);

    std::vector<double> occ(S), alpha(S), trans(S);
    std::vector<std::vector<double>> soft(S);
    std::vector<Rgb> behind(S + 1);
    for (std::size_t y = y0; y < y1; ++y)
      for (int x = 0; x < camera.width; ++x) {
        const Rgb& g = pixel_adjoint[y * camera.width + x];
        if (g.isZero(0.0)) continue;
        const Vec2 q = pixel_center(x, static_cast<int>(y));
        double t = 1.0;
        for (std::size_t i = 0; i < S; ++i) {
          occ[i] = evaluate_splat(splats[i], q, inv_focal, &soft[i]).occupancy;
          alpha[i] = flushed(splats[i].opacity * occ[i]);
          trans[i] = t;
          t *= 1.0 - alpha[i];
        }
        behind[S] = background;
        for (std::size_t i = S; i-- > 0;)
          behind[i] = alpha[i] * splats[i].color + (1.0 - alpha[i]) * behind[i + 1];

        for (std::size_t i = 0; i < S; ++i) {
          const Splat& s = splats[i];
          if (alpha[i] == 0.0) continue;
          p.color[i] += trans[i] * alpha[i] * g;
          const double dl_da = trans[i] * g.dot(s.color - behind[i + 1]);
          p.opacity[i] += dl_da * occ[i];
          const double dl_dphi = dl_da * s.opacity * (-s.sharpness) * occ[i] * (1.0 - occ[i]);
          if (dl_dphi == 0.0) continue;
          const std::size_t H = s.hull.size();
          for (std::size_t e = 0; e < H; ++e) {
            const double dl_df = dl_dphi * s.smoothness * soft[i][e] * inv_focal;
            const int ia = s.hull[e], ib = s.hull[(e + 1) % H];
            const Vec2 a = s.pixels[ia], d = s.pixels[ib] - a, u = q - a;
            const double len = d.norm();
            const double num = cross2(u, d);
            const Vec2 df_du = Vec2(d.y(), -d.x()) / len;
            const Vec2 df_dd = (Vec2(-u.y(), u.x()) - num * d / (len * len)) / len;
            p.pixel_grads[i][ia] += dl_df * (-df_du - df_dd);
            p.pixel_grads[i][ib] += dl_df * df_dd;
          }
        }
      }
    partial[c] = std::move(p);
  });

  std::vector<PrimitiveGradient> out(field.primitives.size());
  for (std::size_t i = 0; i < field.primitives.size(); ++i)
    out[i].points.assign(field.primitives[i].points().size(), Vec3::Zero());

  for (std::size_t i = 0; i < S; ++i) {
    const Splat& s = splats[i];
    std::vector<Vec2> pix(s.pixels.size(), Vec2::Zero());
    PrimitiveGradient& dst = out[s.index];
    for (const Partial& p : partial) {
      for (std::size_t k = 0; k < pix.size(); ++k) pix[k] += p.pixel_grads[i][k];
      dst.color += p.color[i];
      dst.opacity += p.opacity[i];
    }
    for (std::size_t k = 0; k < pix.size(); ++k) {
      const Vec3& c = s.camera_points[k];
      if (c.z() < camera.near) {
        // Clamped depth: only the lateral coordinates move the projection.
        const Vec3 dc(camera.focal / camera.near * pix[k].x(), camera.focal / camera.near * pix[k].y(), 0.0);
        dst.points[k] = camera.rotation.transpose() * dc;
        continue;
      }
      const double iz = 1.0 / c.z();
      const Vec3 dc(camera.focal * iz * pix[k].x(), camera.focal * iz * pix[k].y(),
                    -camera.focal * iz * iz * (c.x() * pix[k].x() + c.y() * pix[k].y()));
      dst.points[k] = camera.rotation.transpose() * dc;
    }
  }
  return out;
}

RenderGradients render_gradients(const ConvexField& field, const Camera& camera, const Rgb& background,
                                 const Image& target) {
  if (target.width != camera.width || target.height != camera.height)
    throw Error(ErrorKind::ShapeMismatch, "target image does not match the camera resolution");
  const Image img = render(field, camera, background);
  const double inv_p = 1.0 / static_cast<double>(img.size());
  std::vector<Rgb> adjoint(img.size());
  RenderGradients out;
  for (std::size_t p = 0; p < img.size(); ++p) {
    const Rgb diff = img.pixels[p] - target.pixels[p];
    out.loss += diff.squaredNorm() * inv_p;
    adjoint[p] = 2.0 * inv_p * diff;
  }
  out.primitives = render_backward(field, camera, background, adjoint);
  return out;
}

}  // namespace convexdyn
