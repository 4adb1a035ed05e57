#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ambit/collocation.hpp"

using namespace ambit;
using Eigen::VectorXd;

TEST_CASE("grid invariants and small closed forms") {
  CHECK_THROWS_AS(lgl_grid(1), std::invalid_argument);

  const auto& g2 = lgl_grid(2);
  CHECK(g2.nodes[0] == -1.0);
  CHECK(g2.nodes[1] == 1.0);
  CHECK(g2.weights[0] == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(g2.weights[1] == doctest::Approx(1.0).epsilon(1e-14));

  const auto& g3 = lgl_grid(3);
  CHECK(g3.nodes[1] == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(g3.weights[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  CHECK(g3.weights[1] == doctest::Approx(4.0 / 3.0).epsilon(1e-14));

  const auto& g5 = lgl_grid(5);
  const double r = std::sqrt(3.0 / 7.0);
  CHECK(g5.nodes[1] == doctest::Approx(-r).epsilon(1e-14));
  CHECK(g5.nodes[2] == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(g5.nodes[3] == doctest::Approx(r).epsilon(1e-14));
  CHECK(g5.weights[0] == doctest::Approx(0.1).epsilon(1e-13));
  CHECK(g5.weights[1] == doctest::Approx(49.0 / 90.0).epsilon(1e-13));
  CHECK(g5.weights[2] == doctest::Approx(32.0 / 45.0).epsilon(1e-13));

  for (int m : {2, 3, 5, 8, 15, 20, 30}) {
    const auto& g = lgl_grid(m);
    CHECK(g.weights.sum() == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(g.weights.minCoeff() > 0.0);
    for (int j = 1; j < m; ++j) CHECK(g.nodes[j] > g.nodes[j - 1]);
    // D * ones = 0 (row sums vanish).
    VectorXd rs = g.diff_matrix * VectorXd::Ones(m);
    CHECK(rs.cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("grid caching returns the same object") {
  const auto& a = lgl_grid(15);
  const auto& b = lgl_grid(15);
  CHECK(&a == &b);
}

TEST_CASE("quadrature examples") {
  const auto& g3 = lgl_grid(3);
  TimeMap m(-1.0, 1.0);
  VectorXd v = g3.nodes.array().square();
  CHECK(quadrature(g3, v, m) == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  CHECK(quadrature(g3, VectorXd::Zero(3), m) == 0.0);

  const auto& g15 = lgl_grid(15);
  VectorXd e = g15.nodes.array().exp();
  CHECK(quadrature(g15, e, m) ==
        doctest::Approx(std::exp(1.0) - std::exp(-1.0)).epsilon(1e-10));

  CHECK_THROWS_AS(quadrature(g3, VectorXd::Zero(4), m), std::invalid_argument);
}

TEST_CASE("differentiation examples") {
  TimeMap m(-1.0, 1.0);
  const auto& g5 = lgl_grid(5);
  VectorXd c = VectorXd::Constant(5, 3.7);
  CHECK(differentiate(g5, c, m).cwiseAbs().maxCoeff() < 1e-12);

  VectorXd d1 = differentiate(g5, g5.nodes, m);
  CHECK((d1 - VectorXd::Ones(5)).cwiseAbs().maxCoeff() < 1e-12);

  VectorXd t3 = g5.nodes.array().cube();
  VectorXd want = 3.0 * g5.nodes.array().square();
  CHECK((differentiate(g5, t3, m) - want).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("interpolation examples") {
  const auto& g3 = lgl_grid(3);
  VectorXd v = g3.nodes.array().square();
  VectorXd q(1);
  q << 0.5;
  CHECK(interpolate(g3, v, q)[0] == doctest::Approx(0.25).epsilon(1e-14));
  // Exact at a node.
  q << g3.nodes[1];
  CHECK(interpolate(g3, v, q)[0] == v[1]);
  // Constant values reproduce the constant anywhere.
  q << 0.3217;
  CHECK(interpolate(g3, VectorXd::Constant(3, 2.5), q)[0] ==
        doctest::Approx(2.5).epsilon(1e-14));
  q << 1.5;
  CHECK_THROWS_AS(interpolate(g3, v, q), ambit::OutOfDomainError);
}

TEST_CASE("interpolation is linear in the nodal values") {
  const auto& g = lgl_grid(7);
  VectorXd a = VectorXd::LinSpaced(7, -1.0, 2.0).array().sin();
  VectorXd b = VectorXd::LinSpaced(7, 0.0, 1.0).array().cos();
  VectorXd q = VectorXd::LinSpaced(11, -1.0, 1.0);
  VectorXd lhs = interpolate(g, 2.0 * a + 3.0 * b, q);
  VectorXd rhs = 2.0 * interpolate(g, a, q) + 3.0 * interpolate(g, b, q);
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("exactness property for node counts 2..20") {
  TimeMap m(-1.0, 1.0);
  for (int nc = 2; nc <= 20; ++nc) {
    const auto& g = lgl_grid(nc);
    // Quadrature exact for degree <= 2(nc-1)-1.
    for (int k = 0; k <= 2 * (nc - 1) - 1; ++k) {
      VectorXd v = g.nodes.array().pow(k);
      const double want = (k % 2 == 1) ? 0.0 : 2.0 / (k + 1);
      CHECK(std::abs(quadrature(g, v, m) - want) < 1e-10);
    }
    // Differentiation exact for degree <= nc-1.
    for (int k = 0; k <= nc - 1; ++k) {
      VectorXd v = g.nodes.array().pow(k);
      VectorXd want = (k == 0) ? VectorXd::Zero(nc).eval()
                               : (k * g.nodes.array().pow(k - 1)).matrix().eval();
      CHECK((differentiate(g, v, m) - want).cwiseAbs().maxCoeff() < 1e-10);
    }
  }
}

TEST_CASE("time map rejects degenerate horizons") {
  CHECK_THROWS_AS(TimeMap(1.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(TimeMap(2.0, 1.0), std::invalid_argument);
  TimeMap m(3.0, 7.0);
  CHECK(m.scale() == 2.0);
  CHECK(m.to_time(-1.0) == 3.0);
  CHECK(m.to_time(1.0) == 7.0);
  CHECK(m.to_tau(5.0) == doctest::Approx(0.0));
}
