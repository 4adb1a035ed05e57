#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include <unsupported/Eigen/MatrixFunctions>

#include "ambit/linear_oracles.hpp"

using namespace ambit;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {
LtiSystem scalar_decay(double t1) {
  LtiSystem s;
  s.A = MatrixXd::Constant(1, 1, -1.0);
  s.B = MatrixXd::Constant(1, 1, 1.0);
  s.C = MatrixXd::Constant(1, 1, 1.0);
  s.t0 = 0.0;
  s.t1 = t1;
  return s;
}
}  // namespace

TEST_CASE("observability gramian closed forms") {
  // A=-1, C=1 on [0,1]: P = (1 - e^-2)/2.
  auto s = scalar_decay(1.0);
  MatrixXd P = observability_gramian(s);
  CHECK(P(0, 0) == doctest::Approx((1.0 - std::exp(-2.0)) / 2.0).epsilon(1e-12));

  // A=0, C=1 on [0,T]: P = T.
  s.A.setZero();
  s.t1 = 3.5;
  CHECK(observability_gramian(s)(0, 0) == doctest::Approx(3.5).epsilon(1e-12));

  // C=0 -> P=0.
  s.C.setZero();
  CHECK(observability_gramian(s)(0, 0) == doctest::Approx(0.0));
}

TEST_CASE("controllability gramian: double integrator") {
  LtiSystem s;
  s.A = MatrixXd::Zero(2, 2);
  s.A(0, 1) = 1.0;
  s.B = MatrixXd::Zero(2, 1);
  s.B(1, 0) = 1.0;
  s.C = MatrixXd::Identity(2, 2);
  s.t0 = 0.0;
  s.t1 = 1.0;
  MatrixXd P = controllability_gramian(s);
  CHECK(P(0, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(P(0, 1) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(P(1, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(P(1, 1) == doctest::Approx(1.0).epsilon(1e-12));

  Eigen::SelfAdjointEigenSolver<MatrixXd> es(P);
  const double smin = es.eigenvalues().minCoeff();
  CHECK(smin == doctest::Approx((4.0 - std::sqrt(13.0)) / 6.0).epsilon(1e-12));
  CHECK(smin == doctest::Approx(0.065742).epsilon(1e-4));

  // B=0 -> P=0; A=0, B=I -> P = T*I.
  LtiSystem z = s;
  z.B.setZero();
  CHECK(controllability_gramian(z).cwiseAbs().maxCoeff() == doctest::Approx(0.0));
  LtiSystem id = s;
  id.A.setZero();
  id.B = MatrixXd::Identity(2, 2);
  id.t1 = 2.5;
  CHECK((controllability_gramian(id) - 2.5 * MatrixXd::Identity(2, 2))
            .cwiseAbs()
            .maxCoeff() < 1e-12);
}

TEST_CASE("ambiguity_from_gramian") {
  CHECK(ambiguity_from_gramian(MatrixXd::Identity(3, 3), 1e-3) ==
        doctest::Approx(1e-3).epsilon(1e-14));
  MatrixXd P = MatrixXd::Constant(1, 1, 0.432332);
  CHECK(ambiguity_from_gramian(P, 1e-3) == doctest::Approx(1.5210e-3).epsilon(1e-4));
  MatrixXd sing = MatrixXd::Zero(2, 2);
  sing(0, 0) = 1.0;
  CHECK(std::isinf(ambiguity_from_gramian(sing, 1e-3)));
}

TEST_CASE("min_energy_cost") {
  VectorXd x1(2);
  x1 << 3e-3, 4e-3;  // norm 5e-3
  CHECK(min_energy_cost(MatrixXd::Identity(2, 2), x1) ==
        doctest::Approx(5e-3).epsilon(1e-12));

  MatrixXd P(2, 2);
  P << 1.0 / 3.0, 0.5, 0.5, 1.0;
  VectorXd e1(2);
  e1 << 1.0, 0.0;
  CHECK(min_energy_cost(P, e1) == doctest::Approx(std::sqrt(12.0)).epsilon(1e-12));

  CHECK(min_energy_cost(P, VectorXd::Zero(2)) == doctest::Approx(0.0));
  MatrixXd sing = MatrixXd::Zero(2, 2);
  sing(1, 1) = 1.0;
  CHECK(std::isinf(min_energy_cost(sing, e1)));
}

TEST_CASE("gramians are symmetric PSD and quadrature-converged") {
  // A mildly stiff 3-state system; compare against a brute-force Riemann sum.
  LtiSystem s;
  s.A.resize(3, 3);
  s.A << -1.0, 2.0, 0.0, 0.0, -3.0, 1.0, -0.5, 0.0, -0.2;
  s.B.resize(3, 1);
  s.B << 0.0, 1.0, 0.5;
  s.C.resize(1, 3);
  s.C << 1.0, 0.0, 0.0;
  s.t0 = 0.0;
  s.t1 = 4.0;
  MatrixXd P = observability_gramian(s);
  CHECK((P - P.transpose()).cwiseAbs().maxCoeff() < 1e-12);
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(P);
  CHECK(es.eigenvalues().minCoeff() > -1e-12);

  // Simpson-rule cross-check at modest accuracy.
  const int K = 4000;
  MatrixXd R = MatrixXd::Zero(3, 3);
  const double h = (s.t1 - s.t0) / K;
  for (int k = 0; k <= K; ++k) {
    MatrixXd E = (s.A * (k * h)).exp();
    MatrixXd CE = s.C * E;
    double w = (k == 0 || k == K) ? 1.0 : (k % 2 == 1 ? 4.0 : 2.0);
    R += (w * h / 3.0) * CE.transpose() * CE;
  }
  CHECK((P - R).cwiseAbs().maxCoeff() < 1e-8);
}
