#pragma once

#include "convexdyn/common.hpp"

namespace convexdyn {

class SkinningBasis;

/// Isotropic elastic parameters. Lame coefficients are derived, never set directly.
class MaterialParams {
 public:
  MaterialParams() = default;
  /// Throws InvalidMaterial unless E > 0, -1 < nu < 0.5 and density > 0.
  MaterialParams(double youngs_modulus, double poissons_ratio, double density);

  double youngs_modulus() const { return youngs_modulus_; }
  double poissons_ratio() const { return poissons_ratio_; }
  double density() const { return density_; }
  double mu() const { return mu_; }
  double lambda() const { return lambda_; }

  MaterialParams with_elastic(double youngs_modulus, double poissons_ratio) const {
    return {youngs_modulus, poissons_ratio, density_};
  }

 private:
  double youngs_modulus_ = 1.0;
  double poissons_ratio_ = 0.0;
  double density_ = 1.0;
  double mu_ = 0.5;
  double lambda_ = 0.0;
};

struct Lame {
  double mu;
  double lambda;
};

struct Elastic {
  double youngs_modulus;
  double poissons_ratio;
};

Lame lame_from_elastic(double youngs_modulus, double poissons_ratio);
Elastic elastic_from_lame(double mu, double lambda);

/// F = I + sum_m [ W_m(X) A_m + (Z_m [X;1]) (grad W_m(X))^T ].
Mat3 deformation_gradient(const Vec3& X, const VecX& z, const SkinningBasis& skinning);

/// Compressible Neo-Hookean energy density
///   (mu/2)(tr(F^T F) - 3) - mu ln J + (lambda/2)(ln J)^2.
/// Throws ElementInversion when det F <= 0.
double neo_hookean_energy(const Mat3& F, const Lame& lame);

/// dPsi/dF = mu (F - F^-T) + lambda ln(J) F^-T.
Mat3 first_piola_stress(const Mat3& F, const Lame& lame);

/// d^2 Psi / dF^2 with F flattened row-major (index 3r + c).
Mat9 neo_hookean_hessian(const Mat3& F, const Lame& lame);

/// Clamps negative eigenvalues of a symmetric 9x9 block to zero.
Mat9 project_psd(const Mat9& H);

inline Lame lame_of(const MaterialParams& params) { return {params.mu(), params.lambda()}; }

}  // namespace convexdyn
