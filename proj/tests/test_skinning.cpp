#include "support.hpp"

#include "convexdyn/materials.hpp"
#include "convexdyn/skinning.hpp"

#include <doctest.h>

#include <cmath>

using namespace convexdyn;
using namespace testing;

namespace {

ConvexField unit_cube_field() {
  return ConvexField::from_rest({cube(Vec3::Constant(0.5), 1.0, Rgb(0.5, 0.5, 0.5), 1.0, 200.0, 1.0)});
}

SkinningField small_field(int M, double scale, std::uint64_t seed) {
  return SkinningField::initialize(M, Aabb{Vec3(-1, -0.5, 0), Vec3(1, 1.5, 2)}, 3, 16, scale, seed);
}

}  // namespace

TEST_SUITE("skinning") {

TEST_CASE("zero final layer gives zero weights everywhere") {
  const SkinningField f = SkinningField::initialize(5, Aabb{}, 6, 64, 0.0, 1);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 20; ++i) {
    VecX w;
    MatX3 J;
    f.evaluate(random_vec(rng, -2, 2), w, &J);
    CHECK(w.size() == 5);
    CHECK(w.isZero(0.0));
    CHECK(J.isZero(0.0));
  }
  CHECK(f.layer_sizes() == std::vector<int>{3, 64, 64, 64, 64, 64, 64, 5});
  CHECK(static_cast<std::size_t>(f.parameters().size()) == SkinningField::parameter_count(f.layer_sizes()));
}

TEST_CASE("evaluation is deterministic") {
  const SkinningField f = small_field(4, 1.0, 3);
  const Vec3 X(0.1, 0.2, 0.3);
  const VecX a = f.weights(X), b = f.weights(X);
  CHECK(a == b);
  const SkinningField g = small_field(4, 1.0, 3);
  CHECK(g.parameters() == f.parameters());
}

TEST_CASE("spatial Jacobian matches central finite differences") {
  const SkinningField f = small_field(6, 1.0, 5);
  std::mt19937_64 rng(2);
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    const Vec3 X = random_vec(rng, -1.0, 1.5);
    VecX w;
    MatX3 J;
    f.evaluate(X, w, &J);
    const double h = 1e-5;
    for (int d = 0; d < 3; ++d) {
      Vec3 p = X, m = X;
      p[d] += h;
      m[d] -= h;
      const VecX fd = (f.weights(p) - f.weights(m)) / (2.0 * h);
      worst = std::max(worst, (fd - J.col(d)).cwiseAbs().maxCoeff());
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("batched evaluation matches pointwise evaluation") {
  const SkinningField f = small_field(3, 1.0, 7);
  std::mt19937_64 rng(3);
  MatX pts(3, 9);
  for (int b = 0; b < 9; ++b) pts.col(b) = random_vec(rng, -1, 1);
  const SkinningField::Batch out = f.evaluate_batch(pts, true);
  for (int b = 0; b < 9; ++b) {
    VecX w;
    MatX3 J;
    f.evaluate(pts.col(b), w, &J);
    CHECK((out.values.col(b) - w).cwiseAbs().maxCoeff() < 1e-14);
    for (int d = 0; d < 3; ++d) CHECK((out.tangents[d].col(b) - J.col(d)).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("parameter gradient matches finite differences") {
  SkinningField f = small_field(3, 1.0, 9);
  std::mt19937_64 rng(4);
  const int B = 5;
  MatX pts(3, B);
  for (int b = 0; b < B; ++b) pts.col(b) = random_vec(rng, -1, 1.5);
  std::normal_distribution<double> n(0.0, 1.0);
  MatX av(3, B), at[3] = {MatX(3, B), MatX(3, B), MatX(3, B)};
  for (int i = 0; i < av.size(); ++i) {
    av.data()[i] = n(rng);
    for (auto& t : at) t.data()[i] = n(rng);
  }
  // Linear functional of values and tangents.
  auto loss = [&](const SkinningField& g) {
    const auto out = g.evaluate_batch(pts, true);
    double s = av.cwiseProduct(out.values).sum();
    for (int d = 0; d < 3; ++d) s += at[d].cwiseProduct(out.tangents[d]).sum();
    return s;
  };
  VecX grad = VecX::Zero(f.parameters().size());
  f.backward(pts, av, at, grad);
  VecX grad_values_only = VecX::Zero(f.parameters().size());
  f.backward(pts, av, nullptr, grad_values_only);

  const double h = 1e-6;
  double worst = 0.0, worst_v = 0.0;
  std::uniform_int_distribution<Eigen::Index> pick(0, f.parameters().size() - 1);
  for (int s = 0; s < 60; ++s) {
    const Eigen::Index k = pick(rng);
    const double saved = f.parameters()[k];
    f.mutable_parameters()[k] = saved + h;
    const double lp = loss(f);
    const double vp = av.cwiseProduct(f.evaluate_batch(pts, false).values).sum();
    f.mutable_parameters()[k] = saved - h;
    const double lm = loss(f);
    const double vm = av.cwiseProduct(f.evaluate_batch(pts, false).values).sum();
    f.mutable_parameters()[k] = saved;
    worst = std::max(worst, std::abs((lp - lm) / (2 * h) - grad[k]) / std::max(1.0, std::abs(grad[k])));
    worst_v = std::max(worst_v, std::abs((vp - vm) / (2 * h) - grad_values_only[k]) /
                                    std::max(1.0, std::abs(grad_values_only[k])));
  }
  CHECK(worst < 1e-6);
  CHECK(worst_v < 1e-6);
}

TEST_CASE("cubature volume of the unit cube") {
  const CubatureSet c = sample_cubature(unit_cube_field(), 10000, 42);
  CHECK(c.size() == 10000);
  CHECK(c.total_weight() == doctest::Approx(1.0).epsilon(0.02));
  CHECK(c.total_mass() == doctest::Approx(c.total_weight()).epsilon(1e-12));
  const ConvexField f = unit_cube_field();
  for (const Vec3& x : c.points) CHECK(occupancy(f.rest_primitives[0], x) > 0.5);

  const CubatureSet again = sample_cubature(unit_cube_field(), 10000, 42);
  CHECK(again.points == c.points);
  CHECK(again.weights == c.weights);

  const CubatureSet dense = sample_cubature(unit_cube_field(), 500, 42, 1000.0);
  CHECK(dense.total_mass() == doctest::Approx(1000.0 * dense.total_weight()).epsilon(1e-12));
}

TEST_CASE("cubature of an empty field fails") {
  try {
    sample_cubature(ConvexField{}, 100, 1);
    FAIL("expected EmptyField");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::EmptyField);
  }
}

TEST_CASE("training energy agrees with Neo-Hookean above the cutoff") {
  std::mt19937_64 rng(10);
  const Lame lame{3.0, 7.0};
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (int i = 0; i < 50; ++i) {
    Mat3 F = Mat3::Identity();
    for (int k = 0; k < 9; ++k) F(k / 3, k % 3) += u(rng);
    if (F.determinant() < 0.5) continue;
    Mat3 P;
    CHECK(training_energy(F, lame, &P) == doctest::Approx(neo_hookean_energy(F, lame)).epsilon(1e-12));
    CHECK(rel_err(P, first_piola_stress(F, lame)) < 1e-10);
  }
  // Inverted F stays finite, and the stress is still the energy gradient.
  for (const Mat3& F : {Mat3(Vec3(-0.5, 1.0, 1.2).asDiagonal()),
                        Mat3(Vec3(0.3, 1.0, 1.2).asDiagonal())}) {
    Mat3 P;
    const double e = training_energy(F, lame, &P);
    CHECK(std::isfinite(e));
    Mat3 fd;
    for (int k = 0; k < 9; ++k) {
      Mat3 Fp = F, Fm = F;
      Fp(k / 3, k % 3) += 1e-6;
      Fm(k / 3, k % 3) -= 1e-6;
      fd(k / 3, k % 3) = (training_energy(Fp, lame, nullptr) - training_energy(Fm, lame, nullptr)) / 2e-6;
    }
    CHECK(rel_err(P, fd) < 1e-6);
  }
}

TEST_CASE("zero reduced samples contribute no elastic energy") {
  SkinningHyper h;
  h.steps = 20;
  h.cubature_points = 128;
  h.batch_size = 16;
  h.hidden_layers = 2;
  h.hidden_width = 16;
  h.sample_deformations = false;
  SkinningTrainingReport rep;
  train_skinning(unit_cube_field(), MaterialParams(1e4, 0.3, 1000.0), 3, h, &rep);
  REQUIRE(rep.elastic.size() == 20);
  for (double e : rep.elastic) CHECK(e == 0.0);
}

TEST_CASE("orthogonality-only training lowers the loss") {
  SkinningHyper h;
  h.steps = 200;
  h.lambda_elastic = 0.0;
  h.lambda_ortho = 0.1;
  h.cubature_points = 256;
  h.hidden_layers = 2;
  h.hidden_width = 32;
  SkinningTrainingReport rep;
  train_skinning(unit_cube_field(), MaterialParams(1e4, 0.3, 1000.0), 4, h, &rep);
  CHECK(rep.loss.back() < rep.loss.front());
  CHECK(rep.loss.back() < 0.5 * rep.loss.front());
}

TEST_CASE("training is bit-reproducible") {
  SkinningHyper h;
  h.steps = 30;
  h.cubature_points = 128;
  h.batch_size = 16;
  h.hidden_layers = 2;
  h.hidden_width = 16;
  h.seed = 5;
  const MaterialParams mat(1e4, 0.3, 1000.0);
  const SkinningField a = train_skinning(unit_cube_field(), mat, 3, h);
  const SkinningField b = train_skinning(unit_cube_field(), mat, 3, h);
  CHECK(a.parameters() == b.parameters());
}

TEST_CASE("trained unit-cube basis is nearly orthonormal") {
  SkinningHyper h;
  h.steps = 2000;
  h.cubature_points = 256;
  h.batch_size = 64;
  h.seed = 1;
  SkinningTrainingReport rep;
  const SkinningField f = train_skinning(unit_cube_field(), MaterialParams(1e4, 0.3, 1000.0), 4, h, &rep);
  const CubatureSet check = sample_cubature(unit_cube_field(), 2000, 99);
  const MatX G = skinning_gram(f, check);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      if (i == j) {
        CHECK(G(i, i) > 0.5);
        CHECK(G(i, i) < 1.5);
      } else {
        CHECK(std::abs(G(i, j)) < 0.15);
      }
    }
  // Late-training orthogonality residual does not grow across 500-step windows.
  const auto& r = rep.offdiag_residual;
  for (std::size_t t = r.size() / 2; t + 500 < r.size(); t += 100)
    CHECK(r[t + 500] <= 1.05 * r[t] + 1e-4);
}

TEST_CASE("invalid training inputs") {
  SkinningHyper h;
  h.steps = 1;
  CHECK_THROWS_AS(train_skinning(unit_cube_field(), MaterialParams(1e4, 0.3, 1.0), 0, h), Error);
  CHECK_THROWS_AS(train_skinning(ConvexField{}, MaterialParams(1e4, 0.3, 1.0), 2, h), Error);
}

}
