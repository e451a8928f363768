#include "convexdyn/materials.hpp"

#include "convexdyn/skinning.hpp"

#include <cmath>
#include <string>

namespace convexdyn {

namespace {

void check_elastic(double youngs_modulus, double poissons_ratio) {
  if (!(youngs_modulus > 0.0) || !std::isfinite(youngs_modulus))
    throw Error(ErrorKind::InvalidMaterial,
                "Young's modulus must be positive, got " + std::to_string(youngs_modulus));
  if (!(poissons_ratio > -1.0 && poissons_ratio < 0.5))
    throw Error(ErrorKind::InvalidMaterial,
                "Poisson's ratio must lie in (-1, 0.5), got " + std::to_string(poissons_ratio));
}

double checked_det(const Mat3& F) {
  const double J = F.determinant();
  if (!(J > 0.0))
    throw Error(ErrorKind::ElementInversion,
                "deformation gradient is inverted (det F = " + std::to_string(J) + ")");
  return J;
}

}  // namespace

MaterialParams::MaterialParams(double youngs_modulus, double poissons_ratio, double density)
    : youngs_modulus_(youngs_modulus), poissons_ratio_(poissons_ratio), density_(density) {
  check_elastic(youngs_modulus, poissons_ratio);
  if (!(density > 0.0)) throw Error(ErrorKind::InvalidMaterial, "density must be positive");
  const Lame l = lame_from_elastic(youngs_modulus, poissons_ratio);
  mu_ = l.mu;
  lambda_ = l.lambda;
}

Lame lame_from_elastic(double youngs_modulus, double poissons_ratio) {
  check_elastic(youngs_modulus, poissons_ratio);
  const double E = youngs_modulus, nu = poissons_ratio;
  return {E / (2.0 * (1.0 + nu)), E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))};
}

Elastic elastic_from_lame(double mu, double lambda) {
  return {mu * (3.0 * lambda + 2.0 * mu) / (lambda + mu), lambda / (2.0 * (lambda + mu))};
}

Mat3 deformation_gradient(const Vec3& X, const VecX& z, const SkinningBasis& skinning) {
  const int handles = skinning.num_handles();
  VecX w(handles);
  MatX3 dw(handles, 3);
  skinning.evaluate(X, w, &dw);
  const Vec4 Xh = homogeneous(X);
  Mat3 F = Mat3::Identity();
  for (int m = 0; m < handles; ++m) {
    const Mat34 Z = handle_block(z, m);
    F += w[m] * Z.leftCols<3>() + (Z * Xh) * dw.row(m);
  }
  return F;
}

double neo_hookean_energy(const Mat3& F, const Lame& lame) {
  const double logJ = std::log(checked_det(F));
  return 0.5 * lame.mu * (F.squaredNorm() - 3.0) - lame.mu * logJ + 0.5 * lame.lambda * logJ * logJ;
}

Mat3 first_piola_stress(const Mat3& F, const Lame& lame) {
  const double logJ = std::log(checked_det(F));
  const Mat3 FinvT = F.inverse().transpose();
  return lame.mu * (F - FinvT) + lame.lambda * logJ * FinvT;
}

Mat9 neo_hookean_hessian(const Mat3& F, const Lame& lame) {
  const double logJ = std::log(checked_det(F));
  const Mat3 G = F.inverse().transpose();
  const double c = lame.mu - lame.lambda * logJ;
  Mat9 H = lame.mu * Mat9::Identity();
  for (int r = 0; r < 3; ++r)
    for (int col = 0; col < 3; ++col)
      for (int b = 0; b < 3; ++b)
        for (int a = 0; a < 3; ++a)
          H(3 * r + col, 3 * b + a) += lame.lambda * G(r, col) * G(b, a) + c * G(r, a) * G(b, col);
  return H;
}

Mat9 project_psd(const Mat9& H) {
  Eigen::SelfAdjointEigenSolver<Mat9> eig(0.5 * (H + H.transpose()));
  Vec9 values = eig.eigenvalues();
  if (values.minCoeff() >= 0.0) return H;
  values = values.cwiseMax(0.0);
  return eig.eigenvectors() * values.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace convexdyn
