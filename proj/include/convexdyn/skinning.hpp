#pragma once

#include "convexdyn/common.hpp"
#include "convexdyn/convex_field.hpp"
#include "convexdyn/materials.hpp"

#include <cstdint>
#include <vector>

namespace convexdyn {

/// Spatial weight functions W: R^3 -> R^M driving the reduced deformation map.
class SkinningBasis {
 public:
  virtual ~SkinningBasis() = default;

  virtual int num_handles() const = 0;

  /// Writes W(X) into `weights` (size M) and, when `jacobian` is non-null,
  /// dW/dX into it (M x 3).
  virtual void evaluate(const Vec3& X, VecX& weights, MatX3* jacobian) const = 0;

  VecX weights(const Vec3& X) const {
    VecX w(num_handles());
    evaluate(X, w, nullptr);
    return w;
  }
};

/// Spatially constant weights; dW/dX = 0.
class ConstantSkinning final : public SkinningBasis {
 public:
  explicit ConstantSkinning(VecX values) : values_(std::move(values)) {}

  int num_handles() const override { return static_cast<int>(values_.size()); }
  void evaluate(const Vec3&, VecX& weights, MatX3* jacobian) const override {
    weights = values_;
    if (jacobian) jacobian->setZero(values_.size(), 3);
  }

 private:
  VecX values_;
};

struct Aabb {
  Vec3 lo = Vec3::Constant(-1.0);
  Vec3 hi = Vec3::Constant(1.0);
};

/// ELU multilayer perceptron over inputs normalized to [-1,1]^3 by `domain_box`.
/// The last layer is linear. Parameters are stored flat, per layer a row-major
/// weight matrix followed by its bias.
class SkinningField final : public SkinningBasis {
 public:
  SkinningField() = default;
  SkinningField(std::vector<int> layer_sizes, Aabb domain_box, VecX parameters);

  /// Random hidden layers (seeded); the final layer's weights are drawn with
  /// standard deviation `final_layer_scale / sqrt(fan_in)`, so 0 gives an
  /// exactly zero output. Biases start at zero.
  static SkinningField initialize(int num_handles, Aabb domain_box, int hidden_layers,
                                  int hidden_width, double final_layer_scale, std::uint64_t seed);

  int num_handles() const override { return layer_sizes_.empty() ? 0 : layer_sizes_.back(); }
  void evaluate(const Vec3& X, VecX& weights, MatX3* jacobian) const override;

  const std::vector<int>& layer_sizes() const { return layer_sizes_; }
  const Aabb& domain_box() const { return domain_box_; }
  const VecX& parameters() const { return params_; }
  VecX& mutable_parameters() { return params_; }
  static std::size_t parameter_count(const std::vector<int>& layer_sizes);

  /// Columns of `points` are samples. Returns weights (M x B) and, when
  /// requested, the three spatial-derivative planes dW/dX_d (M x B each).
  struct Batch {
    MatX values;
    MatX tangents[3];
  };
  Batch evaluate_batch(const MatX& points, bool with_tangents) const;

  /// Accumulates d(loss)/d(theta) into `gradient` given output adjoints for a
  /// batch evaluated at `points`. `tangent_adjoints` may be null when only
  /// values carry loss.
  void backward(const MatX& points, const MatX& value_adjoint, const MatX* tangent_adjoints,
                VecX& gradient) const;

 private:
  struct Cache;
  void forward(const MatX& points, bool with_tangents, Cache& cache) const;

  std::vector<int> layer_sizes_;
  Aabb domain_box_;
  VecX params_;
};

struct CubatureSet {
  std::vector<Vec3> points;
  std::vector<double> weights;
  std::vector<double> masses;

  std::size_t size() const { return points.size(); }
  double total_weight() const;
  double total_mass() const;
};

/// Rejection-samples `n` points uniformly inside the union of the rest hulls
/// (any primitive with occupancy > 0.5). Each weight is the estimated volume
/// divided by n; masses are density * weight. Throws EmptyField.
CubatureSet sample_cubature(const ConvexField& rest_field, int n, std::uint64_t seed,
                            double density = 1.0);

Aabb bounding_box(const ConvexField& rest_field);

struct SkinningHyper {
  int steps = 10000;
  double learning_rate = 1e-3;
  double lambda_elastic = 1.0;
  double lambda_ortho = 100.0;
  double z_std_start = 1.0;
  double z_std_end = 0.1;
  int cubature_points = 512;
  int batch_size = 128;
  int hidden_layers = 6;
  int hidden_width = 64;
  double final_layer_scale = 0.1;
  std::uint64_t seed = 0;
  // Testing hook: when false the reduced sample is always zero.
  bool sample_deformations = true;
};

struct SkinningTrainingReport {
  std::vector<double> loss;
  std::vector<double> elastic;
  std::vector<double> ortho;
  /// sum_{i != j} G_ij^2 over the training cubature, per step.
  std::vector<double> offdiag_residual;
  MatX final_gram;
};

/// Cubature-normalized Gram matrix G_ij = sum_k w_k W_i W_j / sum_k w_k.
MatX skinning_gram(const SkinningBasis& skinning, const CubatureSet& cubature);

/// Data-free basis training: minimizes the elastic energy of randomly
/// sampled reduced deformations plus an orthonormality penalty on the
/// weight functions. Throws NonFiniteLoss.
SkinningField train_skinning(const ConvexField& rest_field, const MaterialParams& params,
                             int num_handles, const SkinningHyper& hyper,
                             SkinningTrainingReport* report = nullptr);

/// Training-time energy density: Neo-Hookean with ln J continued linearly
/// below `j_min`, so sampled inversions stay finite and gradients stay tame.
/// Returns the energy and writes dPsi/dF.
double training_energy(const Mat3& F, const Lame& lame, Mat3* piola, double j_min = 0.5);

}  // namespace convexdyn
