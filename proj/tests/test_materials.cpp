#include "support.hpp"

#include "convexdyn/materials.hpp"

#include <doctest.h>

#include <cmath>

using namespace convexdyn;
using namespace testing;

namespace {

Mat3 fd_piola(const Mat3& F, const Lame& lame, double h) {
  Mat3 P;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      Mat3 Fp = F, Fm = F;
      Fp(r, c) += h;
      Fm(r, c) -= h;
      P(r, c) = (neo_hookean_energy(Fp, lame) - neo_hookean_energy(Fm, lame)) / (2.0 * h);
    }
  return P;
}

Mat3 random_f(std::mt19937_64& rng, double spread, double min_det) {
  std::uniform_real_distribution<double> u(-spread, spread);
  for (;;) {
    Mat3 F = Mat3::Identity();
    for (int i = 0; i < 9; ++i) F(i / 3, i % 3) += u(rng);
    if (F.determinant() > min_det) return F;
  }
}

}  // namespace

TEST_SUITE("materials") {

TEST_CASE("Lame coefficients from elastic moduli") {
  const Lame soft = lame_from_elastic(8000.0, 0.4);
  CHECK(soft.mu == doctest::Approx(2857.142857142857).epsilon(1e-14));
  CHECK(soft.lambda == doctest::Approx(11428.571428571428).epsilon(1e-14));

  const Lame zero = lame_from_elastic(3.0, 0.0);
  CHECK(zero.lambda == 0.0);
  CHECK(zero.mu == 1.5);

  const Lame stiff = lame_from_elastic(1e7, 0.49);
  CHECK(stiff.mu == doctest::Approx(3.3557e6).epsilon(1e-4));
  CHECK(stiff.lambda == doctest::Approx(1.6443e8).epsilon(1e-4));
}

TEST_CASE("Lame round trip") {
  for (double E : {1.0, 8000.0, 1e7})
    for (double nu : {-0.5, 0.0, 0.2, 0.4, 0.49}) {
      const Lame l = lame_from_elastic(E, nu);
      const Elastic back = elastic_from_lame(l.mu, l.lambda);
      CHECK(back.youngs_modulus == doctest::Approx(E).epsilon(1e-12));
      CHECK(back.poissons_ratio == doctest::Approx(nu).epsilon(1e-12));
    }
}

TEST_CASE("invalid materials are rejected") {
  auto kind_of = [](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::InvalidArgument;
  };
  CHECK(kind_of([] { lame_from_elastic(1.0, 0.5); }) == ErrorKind::InvalidMaterial);
  CHECK(kind_of([] { lame_from_elastic(1.0, -1.0); }) == ErrorKind::InvalidMaterial);
  CHECK(kind_of([] { lame_from_elastic(0.0, 0.3); }) == ErrorKind::InvalidMaterial);
  CHECK(kind_of([] { MaterialParams(1.0, 0.3, 0.0); }) == ErrorKind::InvalidMaterial);
  const MaterialParams p(8000.0, 0.4, 1000.0);
  CHECK(p.mu() == doctest::Approx(2857.142857142857));
  const MaterialParams q = p.with_elastic(1e5, 0.25);
  CHECK(q.lambda() == doctest::Approx(1e5 * 0.25 / (1.25 * 0.5)));
  CHECK(q.density() == 1000.0);
}

TEST_CASE("deformation gradient for constant weights and zero z") {
  const ConstantSkinning one(VecX::Ones(1));
  VecX z = VecX::Zero(12);
  CHECK(deformation_gradient(Vec3(0.3, -0.2, 0.7), z, one) == Mat3::Identity());
  Mat3 A;
  A << 0.1, 0.2, -0.1, 0.0, -0.05, 0.3, 0.02, 0.01, 0.2;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) z[dof_index(0, r, c)] = A(r, c);
  CHECK((deformation_gradient(Vec3(0.3, -0.2, 0.7), z, one) - (Mat3::Identity() + A)).norm() < 1e-15);
}

TEST_CASE("energy examples and invariances") {
  const Lame unit{1.0, 1.0};
  CHECK(neo_hookean_energy(Mat3::Identity(), unit) == 0.0);
  const Mat3 F = Vec3(1.1, 1.0, 1.0).asDiagonal();
  const double expected = 0.5 * 0.21 - std::log(1.1) + 0.5 * std::log(1.1) * std::log(1.1);
  CHECK(neo_hookean_energy(F, unit) == doctest::Approx(expected).epsilon(1e-14));
  CHECK(neo_hookean_energy(F, unit) == doctest::Approx(0.01423).epsilon(1e-3));

  std::mt19937_64 rng(1);
  const Lame lame = lame_from_elastic(8000.0, 0.4);
  for (int i = 0; i < 50; ++i) {
    const Mat3 R = random_rotation(rng);
    CHECK(std::abs(neo_hookean_energy(R, lame)) < 1e-12 * lame.lambda);
    CHECK(first_piola_stress(R, lame).cwiseAbs().maxCoeff() < 1e-10 * lame.lambda);
    const Mat3 G = random_f(rng, 0.3, 0.2);
    const double a = neo_hookean_energy(G, lame), b = neo_hookean_energy(R * G, lame);
    CHECK(std::abs(a - b) <= 1e-10 * std::max(1.0, std::abs(a)));
  }
  CHECK(first_piola_stress(Mat3::Identity(), lame).norm() == 0.0);
}

TEST_CASE("energy is non-negative near the identity") {
  std::mt19937_64 rng(2);
  const Lame lame = lame_from_elastic(1000.0, 0.3);
  int checked = 0;
  while (checked < 500) {
    const Mat3 F = random_f(rng, 0.3, 1e-3);
    if ((F - Mat3::Identity()).norm() > 0.5) continue;
    CHECK(neo_hookean_energy(F, lame) >= 0.0);
    ++checked;
  }
}

TEST_CASE("first Piola stress matches finite differences of the energy") {
  std::mt19937_64 rng(4);
  const Lame lame{2.0, 5.0};
  for (int i = 0; i < 100; ++i) {
    const Mat3 F = random_f(rng, 0.4, 0.1);
    const Mat3 P = first_piola_stress(F, lame);
    const Mat3 fd = fd_piola(F, lame, 1e-6);
    CHECK(rel_err(P, fd) < 1e-5);
  }
}

TEST_CASE("energy Hessian matches finite differences of the stress") {
  std::mt19937_64 rng(6);
  const Lame lame{2.0, 5.0};
  for (int i = 0; i < 20; ++i) {
    const Mat3 F = random_f(rng, 0.4, 0.2);
    const Mat9 H = neo_hookean_hessian(F, lame);
    Mat9 fd;
    const double h = 1e-6;
    for (int k = 0; k < 9; ++k) {
      Mat3 Fp = F, Fm = F;
      Fp(k / 3, k % 3) += h;
      Fm(k / 3, k % 3) -= h;
      const Mat3 dP = (first_piola_stress(Fp, lame) - first_piola_stress(Fm, lame)) / (2.0 * h);
      for (int j = 0; j < 9; ++j) fd(j, k) = dP(j / 3, j % 3);
    }
    CHECK(rel_err(H, fd) < 1e-6);
    CHECK((H - H.transpose()).norm() < 1e-10 * H.norm());
  }
}

TEST_CASE("PSD projection clamps negative eigenvalues only") {
  std::mt19937_64 rng(8);
  const Lame lame{1.0, 10.0};
  const Mat3 F = Vec3(0.5, 1.4, 0.9).asDiagonal();
  const Mat9 H = neo_hookean_hessian(F, lame);
  const Mat9 P = project_psd(H);
  Eigen::SelfAdjointEigenSolver<Mat9> eig(P);
  CHECK(eig.eigenvalues().minCoeff() >= -1e-10);
  const Mat9 I = Mat9::Identity();
  CHECK(project_psd(I) == I);
}

TEST_CASE("inversion raises an error") {
  const Lame lame{1.0, 1.0};
  const Mat3 F = Vec3(-1.0, 1.0, 1.0).asDiagonal();
  for (auto fn : {+[](const Mat3& f, const Lame& l) { (void)neo_hookean_energy(f, l); },
                  +[](const Mat3& f, const Lame& l) { (void)first_piola_stress(f, l); },
                  +[](const Mat3& f, const Lame& l) { (void)neo_hookean_hessian(f, l); }}) {
    try {
      fn(F, lame);
      FAIL("expected ElementInversion");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::ElementInversion);
    }
  }
  CHECK_THROWS_AS(neo_hookean_energy(Mat3::Zero(), lame), Error);
}

}
