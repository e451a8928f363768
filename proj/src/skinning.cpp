#include "convexdyn/skinning.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

namespace convexdyn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline double elu(double a) { return a > 0.0 ? a : std::expm1(a); }
inline double elu_d1(double a) { return a > 0.0 ? 1.0 : std::exp(a); }
inline double elu_d2(double a) { return a > 0.0 ? 0.0 : std::exp(a); }

Mat3 cofactor(const Mat3& F) {
  Mat3 C;
  C.col(0) = F.col(1).cross(F.col(2));
  C.col(1) = F.col(2).cross(F.col(0));
  C.col(2) = F.col(0).cross(F.col(1));
  return C;
}

}  // namespace

struct SkinningField::Cache {
  // Per layer input activations and tangents; pre-activations of hidden layers.
  std::vector<MatX> inputs;
  std::vector<std::array<MatX, 3>> input_tangents;
  std::vector<MatX> pre;
  std::vector<std::array<MatX, 3>> pre_tangents;
  bool with_tangents = false;
};

SkinningField::SkinningField(std::vector<int> layer_sizes, Aabb domain_box, VecX parameters)
    : layer_sizes_(std::move(layer_sizes)), domain_box_(domain_box), params_(std::move(parameters)) {
  if (layer_sizes_.size() < 2 || layer_sizes_.front() != 3)
    throw Error(ErrorKind::InvalidArgument, "skinning network must map R^3 to R^M");
  for (int s : layer_sizes_)
    if (s <= 0) throw Error(ErrorKind::InvalidArgument, "layer sizes must be positive");
  if (static_cast<std::size_t>(params_.size()) != parameter_count(layer_sizes_))
    throw Error(ErrorKind::ShapeMismatch, "skinning parameter count does not match layer sizes");
  if (!((domain_box_.hi - domain_box_.lo).array() > 0.0).all())
    throw Error(ErrorKind::InvalidArgument, "skinning domain box must have positive extent");
}

std::size_t SkinningField::parameter_count(const std::vector<int>& layer_sizes) {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l)
    n += static_cast<std::size_t>(layer_sizes[l + 1]) * (layer_sizes[l] + 1);
  return n;
}

SkinningField SkinningField::initialize(int num_handles, Aabb domain_box, int hidden_layers,
                                        int hidden_width, double final_layer_scale,
                                        std::uint64_t seed) {
  if (num_handles < 1) throw Error(ErrorKind::InvalidArgument, "need at least one handle");
  std::vector<int> sizes{3};
  for (int i = 0; i < hidden_layers; ++i) sizes.push_back(hidden_width);
  sizes.push_back(num_handles);

  VecX params = VecX::Zero(static_cast<Eigen::Index>(parameter_count(sizes)));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const int in = sizes[l], out = sizes[l + 1];
    const bool last = l + 2 == sizes.size();
    const double stddev = (last ? final_layer_scale : 1.0) / std::sqrt(static_cast<double>(in));
    for (int i = 0; i < out * in; ++i) params[offset + i] = stddev * normal(rng);
    offset += static_cast<std::size_t>(out) * (in + 1);
  }
  return SkinningField(std::move(sizes), domain_box, std::move(params));
}

void SkinningField::forward(const MatX& points, bool with_tangents, Cache& cache) const {
  const Eigen::Index B = points.cols();
  const Vec3 scale = 2.0 * (domain_box_.hi - domain_box_.lo).cwiseInverse();
  MatX h = (scale.asDiagonal() * (points.colwise() - domain_box_.lo)).array() - 1.0;

  std::array<MatX, 3> t;
  if (with_tangents)
    for (int d = 0; d < 3; ++d) {
      t[d] = MatX::Zero(3, B);
      t[d].row(d).setConstant(scale[d]);
    }

  const std::size_t layers = layer_sizes_.size() - 1;
  cache.with_tangents = with_tangents;
  cache.inputs.resize(layers);
  cache.input_tangents.resize(layers);
  cache.pre.resize(layers);
  cache.pre_tangents.resize(layers);

  std::size_t offset = 0;
  for (std::size_t l = 0; l < layers; ++l) {
    const int in = layer_sizes_[l], out = layer_sizes_[l + 1];
    Eigen::Map<const RowMat> W(params_.data() + offset, out, in);
    Eigen::Map<const VecX> b(params_.data() + offset + static_cast<std::size_t>(out) * in, out);
    offset += static_cast<std::size_t>(out) * (in + 1);

    MatX a = W * h;
    a.colwise() += b;
    std::array<MatX, 3> ta;
    if (with_tangents)
      for (int d = 0; d < 3; ++d) ta[d] = W * t[d];

    cache.inputs[l] = std::move(h);
    if (with_tangents) cache.input_tangents[l] = std::move(t);

    if (l + 1 == layers) {
      cache.pre[l] = std::move(a);
      if (with_tangents) cache.pre_tangents[l] = std::move(ta);
      break;
    }
    h = a.unaryExpr([](double v) { return elu(v); });
    if (with_tangents) {
      const MatX slope = a.unaryExpr([](double v) { return elu_d1(v); });
      for (int d = 0; d < 3; ++d) t[d] = slope.cwiseProduct(ta[d]);
    }
    cache.pre[l] = std::move(a);
    if (with_tangents) cache.pre_tangents[l] = std::move(ta);
  }
}

SkinningField::Batch SkinningField::evaluate_batch(const MatX& points, bool with_tangents) const {
  Cache cache;
  forward(points, with_tangents, cache);
  Batch out;
  out.values = std::move(cache.pre.back());
  if (with_tangents)
    for (int d = 0; d < 3; ++d) out.tangents[d] = std::move(cache.pre_tangents.back()[d]);
  return out;
}

void SkinningField::evaluate(const Vec3& X, VecX& weights, MatX3* jacobian) const {
  const Batch batch = evaluate_batch(MatX(X), jacobian != nullptr);
  weights = batch.values.col(0);
  if (jacobian) {
    jacobian->resize(num_handles(), 3);
    for (int d = 0; d < 3; ++d) jacobian->col(d) = batch.tangents[d].col(0);
  }
}

void SkinningField::backward(const MatX& points, const MatX& value_adjoint,
                             const MatX* tangent_adjoints, VecX& gradient) const {
  const bool with_tangents = tangent_adjoints != nullptr;
  Cache cache;
  forward(points, with_tangents, cache);
  if (gradient.size() != params_.size()) gradient = VecX::Zero(params_.size());

  const std::size_t layers = layer_sizes_.size() - 1;
  std::vector<std::size_t> offsets(layers);
  std::size_t offset = 0;
  for (std::size_t l = 0; l < layers; ++l) {
    offsets[l] = offset;
    offset += static_cast<std::size_t>(layer_sizes_[l + 1]) * (layer_sizes_[l] + 1);
  }

  // Adjoints of the current layer's output (post-activation for hidden layers).
  MatX g = value_adjoint;
  std::array<MatX, 3> gt;
  if (with_tangents)
    for (int d = 0; d < 3; ++d) gt[d] = tangent_adjoints[d];

  for (std::size_t l = layers; l-- > 0;) {
    const int in = layer_sizes_[l], out = layer_sizes_[l + 1];
    Eigen::Map<const RowMat> W(params_.data() + offsets[l], out, in);
    Eigen::Map<RowMat> gW(gradient.data() + offsets[l], out, in);
    Eigen::Map<VecX> gb(gradient.data() + offsets[l] + static_cast<std::size_t>(out) * in, out);

    // Map output adjoints back through the activation onto pre-activations.
    MatX ga;
    std::array<MatX, 3> gta;
    if (l + 1 == layers) {
      ga = std::move(g);
      if (with_tangents) gta = std::move(gt);
    } else {
      const MatX& a = cache.pre[l];
      const MatX slope = a.unaryExpr([](double v) { return elu_d1(v); });
      ga = slope.cwiseProduct(g);
      if (with_tangents) {
        const MatX curve = a.unaryExpr([](double v) { return elu_d2(v); });
        MatX mix = MatX::Zero(a.rows(), a.cols());
        for (int d = 0; d < 3; ++d) {
          mix += gt[d].cwiseProduct(cache.pre_tangents[l][d]);
          gta[d] = slope.cwiseProduct(gt[d]);
        }
        ga += curve.cwiseProduct(mix);
      }
    }

    gW.noalias() += ga * cache.inputs[l].transpose();
    gb += ga.rowwise().sum();
    if (with_tangents)
      for (int d = 0; d < 3; ++d) gW.noalias() += gta[d] * cache.input_tangents[l][d].transpose();

    if (l == 0) break;
    g = W.transpose() * ga;
    if (with_tangents)
      for (int d = 0; d < 3; ++d) gt[d] = W.transpose() * gta[d];
  }
}

double CubatureSet::total_weight() const {
  double s = 0.0;
  for (double w : weights) s += w;
  return s;
}

double CubatureSet::total_mass() const {
  double s = 0.0;
  for (double m : masses) s += m;
  return s;
}

Aabb bounding_box(const ConvexField& rest_field) {
  Aabb box{Vec3::Constant(std::numeric_limits<double>::infinity()),
           Vec3::Constant(-std::numeric_limits<double>::infinity())};
  for (const ConvexPrimitive& p : rest_field.rest_primitives)
    for (const Vec3& x : p.points()) {
      box.lo = box.lo.cwiseMin(x);
      box.hi = box.hi.cwiseMax(x);
    }
  return box;
}

CubatureSet sample_cubature(const ConvexField& rest_field, int n, std::uint64_t seed, double density) {
  if (rest_field.rest_primitives.empty())
    throw Error(ErrorKind::EmptyField, "cannot sample cubature from a field with no primitives");
  if (n < 1) throw Error(ErrorKind::InvalidArgument, "cubature size must be positive");
  const Aabb box = bounding_box(rest_field);
  const Vec3 extent = box.hi - box.lo;

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  constexpr std::uint64_t kProposalLimit = 10'000'000;

  CubatureSet out;
  out.points.reserve(n);
  std::uint64_t proposals = 0;
  while (out.points.size() < static_cast<std::size_t>(n)) {
    if (proposals >= kProposalLimit &&
        static_cast<double>(out.points.size()) < 1e-4 * static_cast<double>(proposals))
      throw Error(ErrorKind::EmptyField, "cubature acceptance rate below 1e-4 after " +
                                             std::to_string(proposals) + " proposals");
    ++proposals;
    const Vec3 x = box.lo + Vec3(unit(rng), unit(rng), unit(rng)).cwiseProduct(extent);
    for (const ConvexPrimitive& p : rest_field.rest_primitives) {
      if (smooth_sdf(p.halfspaces(), x, p.smoothness()) < 0.0) {
        out.points.push_back(x);
        break;
      }
    }
  }
  const double volume = extent.prod() * static_cast<double>(n) / static_cast<double>(proposals);
  out.weights.assign(n, volume / n);
  out.masses.assign(n, density * volume / n);
  return out;
}

MatX skinning_gram(const SkinningBasis& skinning, const CubatureSet& cubature) {
  const int M = skinning.num_handles();
  MatX G = MatX::Zero(M, M);
  VecX w(M);
  for (std::size_t k = 0; k < cubature.size(); ++k) {
    skinning.evaluate(cubature.points[k], w, nullptr);
    G.noalias() += cubature.weights[k] * w * w.transpose();
  }
  return G / cubature.total_weight();
}

double training_energy(const Mat3& F, const Lame& lame, Mat3* piola, double j_min) {
  const double J = F.determinant();
  double ell, dell;
  if (J >= j_min) {
    ell = std::log(J);
    dell = 1.0 / J;
  } else {
    const double s = (J - j_min) / j_min;
    ell = std::log(j_min) + s;
    dell = 1.0 / j_min;
  }
  if (piola) *piola = lame.mu * F + (lame.lambda * ell - lame.mu) * dell * cofactor(F);
  return 0.5 * lame.mu * (F.squaredNorm() - 3.0) - lame.mu * ell + 0.5 * lame.lambda * ell * ell;
}

SkinningField train_skinning(const ConvexField& rest_field, const MaterialParams& params,
                             int num_handles, const SkinningHyper& hyper,
                             SkinningTrainingReport* report) {
  if (num_handles < 1) throw Error(ErrorKind::InvalidArgument, "need at least one handle");
  const CubatureSet cub = sample_cubature(rest_field, hyper.cubature_points, hyper.seed, 1.0);
  const Aabb box = bounding_box(rest_field);
  SkinningField field = SkinningField::initialize(num_handles, box, hyper.hidden_layers,
                                                  hyper.hidden_width, hyper.final_layer_scale,
                                                  hyper.seed + 1);
  const Lame lame = lame_of(params);
  const double energy_scale = 1.0 / (params.youngs_modulus() * kDofsPerHandle * num_handles);
  const int M = num_handles;
  const int N = static_cast<int>(cub.size());
  const double total_w = cub.total_weight();
  // Sampled handle transforms act on box-normalized coordinates, so the loss
  // does not depend on the object's size or placement.
  const Vec3 box_center = 0.5 * (box.lo + box.hi);
  const double half_extent = 0.5 * (box.hi - box.lo).maxCoeff();

  MatX all_points(3, N);
  VecX all_w(N);
  for (int k = 0; k < N; ++k) {
    all_points.col(k) = cub.points[k];
    all_w[k] = cub.weights[k];
  }

  std::mt19937_64 rng(hyper.seed + 2);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> pick(0, N - 1);

  const Eigen::Index P = field.parameters().size();
  VecX m1 = VecX::Zero(P), m2 = VecX::Zero(P), grad(P);
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  const int B = std::max(1, hyper.batch_size);

  if (report) *report = {};
  for (int step = 0; step < hyper.steps; ++step) {
    const double frac = hyper.steps > 1 ? static_cast<double>(step) / (hyper.steps - 1) : 0.0;
    const double z_std = hyper.z_std_start + (hyper.z_std_end - hyper.z_std_start) * frac;
    VecX z = VecX::Zero(kDofsPerHandle * M);
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      const double draw = normal(rng);
      if (hyper.sample_deformations) z[i] = z_std * draw;
    }
    MatX batch(3, B);
    for (int b = 0; b < B; ++b) batch.col(b) = all_points.col(pick(rng));

    grad.setZero();

    // Elastic term: mean over the batch of Psi(F) / (E * 12M), the volume-averaged
    // energy density in units of E per reduced DOF.
    double elastic = 0.0;
    if (hyper.lambda_elastic != 0.0) {
      const SkinningField::Batch out = field.evaluate_batch(batch, true);
      MatX gv = MatX::Zero(M, B);
      MatX gt[3] = {MatX::Zero(M, B), MatX::Zero(M, B), MatX::Zero(M, B)};
      const double coef = hyper.lambda_elastic * energy_scale / B;
      for (int b = 0; b < B; ++b) {
        const Vec4 Xh = homogeneous((batch.col(b) - box_center) / half_extent);
        Mat3 F = Mat3::Identity();
        for (int m = 0; m < M; ++m) {
          const Mat34 Z = handle_block(z, m);
          const Vec3 grad_w =
              half_extent * Vec3(out.tangents[0](m, b), out.tangents[1](m, b), out.tangents[2](m, b));
          F += out.values(m, b) * Z.leftCols<3>() + (Z * Xh) * grad_w.transpose();
        }
        Mat3 Pk;
        elastic += training_energy(F, lame, &Pk);
        for (int m = 0; m < M; ++m) {
          const Mat34 Z = handle_block(z, m);
          gv(m, b) = coef * Pk.cwiseProduct(Z.leftCols<3>()).sum();
          const Vec3 gdw = coef * half_extent * Pk.transpose() * (Z * Xh);
          for (int d = 0; d < 3; ++d) gt[d](m, b) = gdw[d];
        }
      }
      elastic *= hyper.lambda_elastic * energy_scale / B;
      field.backward(batch, gv, gt, grad);
    }

    // Orthonormality over the full training cubature.
    const MatX W = field.evaluate_batch(all_points, false).values;
    const MatX G = (W * all_w.asDiagonal() * W.transpose()) / total_w;
    const MatX R = G - MatX::Identity(M, M);
    const double ortho = hyper.lambda_ortho * R.squaredNorm();
    if (hyper.lambda_ortho != 0.0) {
      const MatX gW = (4.0 * hyper.lambda_ortho / total_w) * (R * W) * all_w.asDiagonal();
      field.backward(all_points, gW, nullptr, grad);
    }

    const double loss = elastic + ortho;
    if (!std::isfinite(loss) || !grad.allFinite()) {
      std::ostringstream msg;
      msg << "skinning training produced a non-finite loss at step " << step
          << " (elastic=" << elastic << ", ortho=" << ortho << ", z_std=" << z_std << ")";
      throw Error(ErrorKind::NonFiniteLoss, msg.str());
    }
    if (report) {
      report->loss.push_back(loss);
      report->elastic.push_back(elastic);
      report->ortho.push_back(ortho);
      report->offdiag_residual.push_back(G.squaredNorm() - G.diagonal().squaredNorm());
    }

    const double t = step + 1.0;
    m1 = kBeta1 * m1 + (1.0 - kBeta1) * grad;
    m2 = kBeta2 * m2 + (1.0 - kBeta2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(kBeta1, t), c2 = 1.0 - std::pow(kBeta2, t);
    field.mutable_parameters().array() -=
        hyper.learning_rate * (m1.array() / c1) / ((m2.array() / c2).sqrt() + kEps);
  }

  if (report) report->final_gram = skinning_gram(field, cub);
  return field;
}

}  // namespace convexdyn
