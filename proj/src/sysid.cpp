#include "convexdyn/sysid.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace convexdyn {

namespace {

bool recoverable(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::SolverDiverged:
    case ErrorKind::NonFinite:
    case ErrorKind::ElementInversion:
    case ErrorKind::DegenerateHull:
      return true;
    default:
      return false;
  }
}

// Adam moments for one flat parameter block.
struct Adam {
  VecX m, v;
  int t = 0;

  explicit Adam(Eigen::Index n) : m(VecX::Zero(n)), v(VecX::Zero(n)) {}

  VecX step(const VecX& g, double lr) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    ++t;
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    const double c1 = 1.0 - std::pow(b1, t), c2 = 1.0 - std::pow(b2, t);
    return -lr * (m / c1).cwiseQuotient(((v / c2).cwiseSqrt().array() + eps).matrix());
  }
};

// Flat layout per primitive: K points (3 each), color (3), opacity (1).
struct FieldLayout {
  std::vector<Eigen::Index> offsets;
  Eigen::Index size = 0;

  explicit FieldLayout(const ConvexField& field) {
    for (const ConvexPrimitive& p : field.primitives) {
      offsets.push_back(size);
      size += 3 * static_cast<Eigen::Index>(p.points().size()) + 4;
    }
  }
};

struct RestFitEval {
  double loss = 0.0;
  std::vector<PrimitiveGradient> grad;
};

RestFitEval evaluate_rest_fit(const ConvexField& field, std::span<const View> views,
                              const RestFitHyper& hyper, bool want_grad) {
  RestFitEval out;
  const double lambda = hyper.lambda_dssim;
  const double inv_views = 1.0 / static_cast<double>(views.size());
  for (const View& view : views) {
    const Image img = render(field, view.camera, hyper.background);
    std::vector<Rgb> dssim;
    const double s = ssim(img, view.image, want_grad ? &dssim : nullptr);
    out.loss += inv_views * ((1.0 - lambda) * mean_absolute_error(img, view.image) +
                             lambda * 0.5 * (1.0 - s));
    if (!want_grad) continue;
    const double l1_scale = (1.0 - lambda) / (3.0 * static_cast<double>(img.size()));
    std::vector<Rgb> adjoint(img.size());
    for (std::size_t p = 0; p < img.size(); ++p) {
      const Rgb diff = img.pixels[p] - view.image.pixels[p];
      const Rgb sign = diff.unaryExpr([](double d) { return double((d > 0.0) - (d < 0.0)); });
      adjoint[p] = inv_views * (l1_scale * sign - 0.5 * lambda * dssim[p]);
    }
    auto g = render_backward(field, view.camera, hyper.background, adjoint);
    if (out.grad.empty()) {
      out.grad = std::move(g);
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) {
        for (std::size_t k = 0; k < g[i].points.size(); ++k) out.grad[i].points[k] += g[i].points[k];
        out.grad[i].color += g[i].color;
        out.grad[i].opacity += g[i].opacity;
      }
    }
  }
  const double n = static_cast<double>(field.primitives.size());
  if (hyper.beta_opacity != 0.0 && n > 0) {
    double mean_opacity = 0.0;
    for (const ConvexPrimitive& p : field.primitives) mean_opacity += p.opacity() / n;
    out.loss += hyper.beta_opacity * mean_opacity;
    if (want_grad)
      for (PrimitiveGradient& g : out.grad) g.opacity += hyper.beta_opacity / n;
  }
  if (!std::isfinite(out.loss)) throw Error(ErrorKind::NonFiniteLoss, "rest-field loss is not finite");
  return out;
}

}  // namespace

void FrameSequence::validate() const {
  if (frames.empty()) throw Error(ErrorKind::ShapeMismatch, "frame sequence is empty");
  for (const Image& f : frames)
    if (f.width != camera.width || f.height != camera.height ||
        f.pixels.size() != static_cast<std::size_t>(f.width) * f.height)
      throw Error(ErrorKind::ShapeMismatch, "frame size disagrees with the camera resolution");
}

double loss_sim(std::span<const Image> rendered, std::span<const Image> reference) {
  if (rendered.size() != reference.size() || rendered.empty())
    throw Error(ErrorKind::ShapeMismatch, "frame counts differ or are zero");
  double sum = 0.0;
  double pixels = 0.0;
  for (std::size_t s = 0; s < rendered.size(); ++s) {
    const Image& a = rendered[s];
    const Image& b = reference[s];
    if (a.width != b.width || a.height != b.height || a.size() != b.size())
      throw Error(ErrorKind::ShapeMismatch, "frame dimensions differ");
    if (s > 0 && a.size() != rendered[0].size())
      throw Error(ErrorKind::ShapeMismatch, "frame dimensions vary within the sequence");
    for (std::size_t p = 0; p < a.size(); ++p) sum += (a.pixels[p] - b.pixels[p]).squaredNorm();
    pixels = static_cast<double>(a.size());
  }
  return sum / (static_cast<double>(rendered.size()) * pixels);
}

double loss_sim(const FrameSequence& rendered, const FrameSequence& reference) {
  return loss_sim(std::span<const Image>(rendered.frames), std::span<const Image>(reference.frames));
}

double rest_fit_loss(const ConvexField& field, std::span<const View> views, const RestFitHyper& hyper) {
  return evaluate_rest_fit(field, views, hyper, false).loss;
}

RestFitResult fit_rest_field(std::span<const View> views, const ConvexField& init_field,
                             const RestFitHyper& hyper) {
  if (views.size() < 2) throw Error(ErrorKind::InvalidArgument, "rest fitting needs at least 2 views");
  for (const View& v : views) {
    v.camera.validate();
    if (v.image.width != v.camera.width || v.image.height != v.camera.height)
      throw Error(ErrorKind::ShapeMismatch, "view image disagrees with its camera");
  }
  if (hyper.iterations < 0) throw Error(ErrorKind::InvalidArgument, "iterations must be non-negative");

  const FieldLayout layout(init_field);
  Adam adam(layout.size);
  double lr_scale = 1.0;

  ConvexField field = init_field;
  ConvexField best = init_field;
  RestFitResult result;
  double best_loss = std::numeric_limits<double>::infinity();
  double previous = std::numeric_limits<double>::infinity();

  for (int it = 0; it <= hyper.iterations; ++it) {
    const bool last = it == hyper.iterations;
    RestFitEval eval = evaluate_rest_fit(field, views, hyper, !last);
    result.loss_curve.push_back(eval.loss);
    if (eval.loss < best_loss) {
      best_loss = eval.loss;
      best = field;
    }
    if (eval.loss > previous) lr_scale *= 0.5;
    previous = eval.loss;
    if (last) break;

    VecX g(layout.size), lr(layout.size);
    for (std::size_t i = 0; i < field.primitives.size(); ++i) {
      const Eigen::Index o = layout.offsets[i];
      const PrimitiveGradient& pg = eval.grad[i];
      const Eigen::Index K = static_cast<Eigen::Index>(pg.points.size());
      for (Eigen::Index k = 0; k < K; ++k) {
        g.segment<3>(o + 3 * k) = pg.points[k];
        lr.segment<3>(o + 3 * k).setConstant(hyper.lr_points);
      }
      g.segment<3>(o + 3 * K) = pg.color;
      lr.segment<3>(o + 3 * K).setConstant(hyper.lr_color);
      g[o + 3 * K + 3] = pg.opacity;
      lr[o + 3 * K + 3] = hyper.lr_opacity;
    }
    if (!g.allFinite()) throw Error(ErrorKind::NonFiniteLoss, "rest-field gradient is not finite");
    const VecX delta = adam.step(g, lr_scale).cwiseProduct(lr);

    for (std::size_t i = 0; i < field.primitives.size(); ++i) {
      const ConvexPrimitive& p = field.primitives[i];
      const Eigen::Index o = layout.offsets[i];
      const Eigen::Index K = static_cast<Eigen::Index>(p.points().size());
      std::vector<Vec3> pts = p.points();
      for (Eigen::Index k = 0; k < K; ++k) pts[k] += delta.segment<3>(o + 3 * k);
      const Rgb color = (p.color() + delta.segment<3>(o + 3 * K)).cwiseMax(0.0).cwiseMin(1.0);
      const double opacity = std::clamp(p.opacity() + delta[o + 3 * K + 3], 0.0, 1.0);
      try {
        field.primitives[i] =
            ConvexPrimitive::create(std::move(pts), color, opacity, p.smoothness(), p.sharpness());
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::DegenerateHull) throw;
        field.primitives[i] =
            ConvexPrimitive::create(p.points(), color, opacity, p.smoothness(), p.sharpness());
      }
    }
  }
  // The fitted field is the new rest configuration.
  best.rest_primitives = best.primitives;
  result.field = std::move(best);
  result.loss_curve.push_back(best_loss);
  return result;
}

std::vector<Image> render_sequence(const ForwardModel& model, const MaterialParams& material,
                                   const Camera& camera, double dt, int first_frame, int count,
                                   const Rgb& background) {
  if (first_frame < 0 || count < 1) throw Error(ErrorKind::InvalidArgument, "invalid frame range");
  const ReducedSimulator sim(*model.rest_field, *model.skinning, material, *model.cubature,
                             model.conditions);
  const Trajectory traj = simulate(sim, first_frame + count - 1, dt);
  std::vector<Image> frames;
  frames.reserve(count);
  for (int s = 0; s < count; ++s)
    frames.push_back(render(traj.frames[first_frame + s].field, camera, background));
  return frames;
}

IdentificationResult identify_parameters(const FrameSequence& reference, const ForwardModel& model,
                                         const MaterialParams& init, const IdentifyOptions& options) {
  reference.validate();
  if (!model.rest_field || !model.skinning || !model.cubature)
    throw Error(ErrorKind::InvalidArgument, "forward model is incomplete");
  if (options.max_iterations < 0)
    throw Error(ErrorKind::InvalidArgument, "max_iterations must be non-negative");

  ForwardModel fwd = model;
  std::optional<SkinningField> tuned;
  if (options.finetune_skinning) {
    const auto* field = dynamic_cast<const SkinningField*>(model.skinning);
    if (!field) throw Error(ErrorKind::InvalidArgument, "skinning fine-tuning needs a SkinningField");
    tuned = *field;
    fwd.skinning = &*tuned;
  }

  const int count = static_cast<int>(reference.frames.size());
  IdentificationResult result;
  int iteration = 0;

  auto project = [&](Vec2 p) {
    p[1] = std::clamp(p[1], options.nu_min, options.nu_max);
    return p;
  };
  auto material_at = [&](const Vec2& p) {
    return init.with_elastic(std::pow(10.0, p[0]), p[1]);
  };
  auto loss_at = [&](const Vec2& p) {
    double loss = options.diverged_loss;
    try {
      const auto frames = render_sequence(fwd, material_at(p), reference.camera, reference.dt,
                                          reference.first_frame, count, options.background);
      loss = loss_sim(std::span<const Image>(frames), std::span<const Image>(reference.frames));
      if (!std::isfinite(loss)) loss = options.diverged_loss;
    } catch (const Error& e) {
      if (!recoverable(e)) throw;
    }
    ++result.evaluations;
    if (options.on_evaluation) options.on_evaluation({iteration, p[0], p[1], loss});
    return loss;
  };

  Vec2 p = project(Vec2(std::log10(init.youngs_modulus()), init.poissons_ratio()));
  double f = loss_at(p);
  result.loss_curve.push_back(f);
  Vec2 radius(0.5, 0.1);
  const Vec2 max_radius(1.0, 0.2);

  for (iteration = 1; iteration <= options.max_iterations; ++iteration) {
    const Vec2 h(options.log10_E_step * std::max(1.0, std::abs(p[0])), options.nu_step);
    Vec2 g, c, d;
    Vec2 best_probe = p;
    double best_probe_loss = f;
    for (int i = 0; i < 2; ++i) {
      Vec2 lo = p, hi = p;
      lo[i] -= h[i];
      hi[i] += h[i];
      const double fl = loss_at(lo), fh = loss_at(hi);
      g[i] = (fh - fl) / (2.0 * h[i]);
      c[i] = (fh - 2.0 * f + fl) / (h[i] * h[i]);
      d[i] = c[i] > 0.0 ? -g[i] / c[i] : (g[i] > 0.0 ? -radius[i] : (g[i] < 0.0 ? radius[i] : 0.0));
      d[i] = std::clamp(d[i], -radius[i], radius[i]);
      const Vec2 probes[2] = {project(lo), project(hi)};
      const double losses[2] = {fl, fh};
      for (int j = 0; j < 2; ++j)
        if (losses[j] < best_probe_loss && probes[j] == (j == 0 ? lo : hi)) {
          best_probe_loss = losses[j];
          best_probe = probes[j];
        }
    }
    const bool clamped = (d.cwiseAbs() - radius).maxCoeff() >= 0.0;

    bool accepted = false;
    double t = 1.0;
    for (int trial = 0; trial < 3 && !accepted; ++trial, t *= 0.5) {
      const Vec2 q = project(p + t * d);
      if (q == p) break;
      const double fq = loss_at(q);
      if (fq < f) {
        const Vec2 moved = (q - p).cwiseAbs();
        p = q;
        f = fq;
        accepted = true;
        if (trial == 0 && clamped) radius = (2.0 * radius).cwiseMin(max_radius);
        else radius = radius.cwiseMax(2.0 * moved).cwiseMin(max_radius);
      }
    }
    if (!accepted) {
      if (best_probe_loss < f) {
        p = best_probe;
        f = best_probe_loss;
      }
      radius *= 0.25;
    }

    if (tuned) {
      // One render-gradient step on theta at fixed dynamics; kept only if it helps.
      const ReducedSimulator sim(*fwd.rest_field, *fwd.skinning, material_at(p), *fwd.cubature,
                                 fwd.conditions);
      const Trajectory traj = simulate(sim, reference.first_frame + count - 1, reference.dt);
      std::vector<Vec3> rest_points;
      for (const ConvexPrimitive& prim : fwd.rest_field->rest_primitives)
        rest_points.insert(rest_points.end(), prim.points().begin(), prim.points().end());
      MatX pts(3, static_cast<Eigen::Index>(rest_points.size()));
      for (std::size_t k = 0; k < rest_points.size(); ++k) pts.col(static_cast<Eigen::Index>(k)) = rest_points[k];
      const int M = tuned->num_handles();
      MatX adj = MatX::Zero(M, pts.cols());
      for (int s = 0; s < count; ++s) {
        const Frame& frame = traj.frames[reference.first_frame + s];
        const RenderGradients rg =
            render_gradients(frame.field, reference.camera, options.background, reference.frames[s]);
        Eigen::Index k = 0;
        for (const PrimitiveGradient& pg : rg.primitives)
          for (const Vec3& gk : pg.points) {
            const Vec4 xh = homogeneous(rest_points[static_cast<std::size_t>(k)]);
            for (int m = 0; m < M; ++m)
              adj(m, k) += gk.dot(handle_block(frame.state.z, m) * xh) / count;
            ++k;
          }
      }
      VecX grad = VecX::Zero(tuned->parameters().size());
      tuned->backward(pts, adj, nullptr, grad);
      const VecX saved = tuned->parameters();
      tuned->mutable_parameters() -= options.skinning_learning_rate * grad;
      const double ft = loss_at(p);
      if (ft < f) f = ft;
      else tuned->mutable_parameters() = saved;
    }

    result.loss_curve.push_back(f);
    result.iterations = iteration;
    if (radius[0] < options.log10_E_tolerance && radius[1] < options.nu_tolerance) break;
    if (accepted && (d.cwiseAbs().array() < Eigen::Array2d(options.log10_E_tolerance,
                                                             options.nu_tolerance)).all())
      break;
  }

  result.log10_E = p[0];
  result.nu = p[1];
  if (tuned) result.skinning_parameters = tuned->parameters();
  return result;
}

}  // namespace convexdyn
