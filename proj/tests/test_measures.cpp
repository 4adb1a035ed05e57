#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ambit/linear_oracles.hpp"
#include "ambit/measures.hpp"

using namespace ambit;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// Generic LTI model x' = A x + B u, y = C x, z = x.
DynamicsModel lti_model(const MatrixXd& A, const MatrixXd& B, const MatrixXd& C) {
  DynamicsModel m;
  m.name = "lti";
  m.n_x = static_cast<int>(A.rows());
  m.n_u = static_cast<int>(B.cols());
  m.n_p = 0;
  m.n_y = static_cast<int>(C.rows());
  m.n_z = m.n_x;
  m.rhs = [A, B](double, const VectorXd& x, const VectorXd& u, const VectorXd&) {
    VectorXd dx = A * x;
    if (u.size()) dx += B * u;
    return dx;
  };
  m.output = [C](double, const VectorXd& x, const VectorXd&, const VectorXd&) {
    return (C * x).eval();
  };
  m.estimand = [](double, const VectorXd& x, const VectorXd&, const VectorXd&) {
    return x;
  };
  m.nominal_x0 = VectorXd::Zero(m.n_x);
  m.nominal_params = VectorXd(0);
  if (m.n_u)
    m.nominal_control = [nu = m.n_u](double) { return VectorXd::Zero(nu); };
  return m;
}

Trajectory lti_nominal(const DynamicsModel& m, const CollocationGrid& g,
                       const TimeMap& map) {
  return propagate_nominal(m, m.nominal_x0, m.nominal_params, g, map);
}

MeasureOptions fast_options(int starts = 2) {
  MeasureOptions opt;
  opt.starts = starts;
  opt.seed = 42;
  return opt;
}

TrajectoryMetric initial_norm_metric() {
  TrajectoryMetric zm;
  zm.kind = TrajectoryMetric::Kind::initial_value_norm;
  return zm;
}

}  // namespace

TEST_CASE("observability ambiguity matches the gramian oracle (x' = 0)") {
  auto m = lti_model(MatrixXd::Zero(1, 1), MatrixXd(1, 0), MatrixXd::Ones(1, 1));
  const auto& g = lgl_grid(15);
  TimeMap map(0.0, 2.0);
  Trajectory nom = lti_nominal(m, g, map);
  const double eps = 1e-2;
  MeasureReport rep = observability_ambiguity(
      m, nom, TrajectoryMetric::Kind::L2, VectorXd::Constant(1, eps),
      initial_norm_metric(), {}, fast_options());
  // Constant deviation c with ||c||_{L2[0,2]} = |c| sqrt(2) <= eps.
  CHECK(rep.value == doctest::Approx(eps / std::sqrt(2.0)).epsilon(1e-3));
  CHECK(rep.sensitivity_ratio == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-3));
  CHECK(rep.lower_bound_flag);
  CHECK(rep.resimulation_residual < 1e-4);
  CHECK(rep.constraint_margin < 1e-4);
}

TEST_CASE("observability ambiguity matches the gramian oracle (x' = -x)") {
  auto m = lti_model(-MatrixXd::Ones(1, 1), MatrixXd(1, 0), MatrixXd::Ones(1, 1));
  const auto& g = lgl_grid(17);
  TimeMap map(0.0, 2.0);
  Trajectory nom = lti_nominal(m, g, map);
  const double eps = 1e-2;
  MeasureReport rep = observability_ambiguity(
      m, nom, TrajectoryMetric::Kind::L2, VectorXd::Constant(1, eps),
      initial_norm_metric(), {}, fast_options());

  LtiSystem sys;
  sys.A = -MatrixXd::Ones(1, 1);
  sys.C = MatrixXd::Ones(1, 1);
  sys.t0 = 0.0;
  sys.t1 = 2.0;
  const double oracle = ambiguity_from_gramian(observability_gramian(sys), eps);
  CHECK(oracle == doctest::Approx(eps / std::sqrt((1.0 - std::exp(-4.0)) / 2.0))
                      .epsilon(1e-10));
  CHECK(rep.value == doctest::Approx(oracle).epsilon(5e-3));
}

TEST_CASE("detectability ambiguity: scalar closed form") {
  const double T = 2.0;
  auto m = lti_model(-MatrixXd::Ones(1, 1), MatrixXd(1, 0), MatrixXd::Ones(1, 1));
  const auto& g = lgl_grid(17);
  TimeMap map(0.0, T);
  Trajectory nom = lti_nominal(m, g, map);
  const double eps = 1e-2;
  MeasureReport rep = detectability_ambiguity(
      m, nom, TrajectoryMetric::Kind::L2, VectorXd::Constant(1, eps),
      fast_options());
  // Worst initial deviation c has |c| sqrt((1 - e^{-2T})/2) = eps; the final
  // deviation is c e^{-T}.
  const double want = eps * std::exp(-T) / std::sqrt((1.0 - std::exp(-2 * T)) / 2.0);
  CHECK(rep.value == doctest::Approx(want).epsilon(5e-3));
}

TEST_CASE("least observable direction reproduces sqrt(lambda_min)") {
  MatrixXd A(2, 2);
  A << -1.0, 0.0, 0.3, -2.0;
  MatrixXd C(1, 2);
  C << 1.0, 0.5;
  auto m = lti_model(A, MatrixXd(2, 0), C);
  const auto& g = lgl_grid(17);
  TimeMap map(0.0, 2.0);
  Trajectory nom = lti_nominal(m, g, map);
  const double rho = 0.1;
  MeasureReport rep = least_observable_direction(m, nom, rho, fast_options(3));

  LtiSystem sys;
  sys.A = A;
  sys.C = C;
  sys.t0 = 0.0;
  sys.t1 = 2.0;
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(observability_gramian(sys));
  const double want = rho * std::sqrt(es.eigenvalues()[0]);
  CHECK(rep.value == doctest::Approx(want).epsilon(5e-3));
  CHECK(!rep.lower_bound_flag);
  CHECK(rep.sensitivity_ratio == doctest::Approx(rho / rep.value));
  // The minimizing initial deviation lies on the sphere.
  const VectorXd dx0 =
      rep.worst_trajectory.states.col(0) - nom.states.col(0);
  CHECK(dx0.norm() == doctest::Approx(rho).epsilon(1e-6));
}

TEST_CASE("lp and gramian gains agree for a linear system") {
  MatrixXd A(2, 2);
  A << -1.0, 0.5, 0.0, -2.0;
  MatrixXd B(2, 1);
  B << 0.0, 1.0;
  auto m = lti_model(A, B, MatrixXd::Identity(2, 2));
  FourierControlSpace space(0, 1, 0.0, 7.0);
  const double sigma = 0.1;

  MeasureReport gram = gramian_gain(m, VectorXd::Zero(2), space, sigma,
                                    VectorXd(0));
  MeasureReport lp = lp_gain(m, VectorXd::Zero(2), space, sigma, std::nullopt,
                             lgl_grid(21), fast_options());
  CHECK(lp.value == doctest::Approx(gram.value).epsilon(0.02));
  CHECK(lp.lower_bound_flag);
  CHECK(!gram.note.empty());
  // The worst coefficient vector sits on the disturbance-budget boundary.
  CHECK(lp.constraint_margin < 1e-4);
}

TEST_CASE("lp gain scales linearly with sigma for a linear system") {
  MatrixXd A = -MatrixXd::Ones(1, 1);
  MatrixXd B = MatrixXd::Ones(1, 1);
  auto m = lti_model(A, B, MatrixXd::Ones(1, 1));
  FourierControlSpace space(0, 1, 0.0, 4.0);
  auto run = [&](double sigma) {
    return lp_gain(m, VectorXd::Zero(1), space, sigma, std::nullopt,
                   lgl_grid(17), fast_options());
  };
  MeasureReport a = run(0.05);
  MeasureReport b = run(0.2);
  CHECK(a.value == doctest::Approx(b.value).epsilon(1e-3));
  CHECK(a.deviation_norm * 4.0 == doctest::Approx(b.deviation_norm).epsilon(1e-3));
}

TEST_CASE("gramian gain is exactly 1 when the estimand is the disturbance") {
  DynamicsModel m;
  m.name = "passthrough";
  m.n_x = 1;
  m.n_u = 1;
  m.n_p = 0;
  m.n_y = 1;
  m.n_z = 1;
  m.rhs = [](double, const VectorXd& x, const VectorXd& u, const VectorXd&) {
    VectorXd dx(1);
    dx[0] = -x[0] + u[0];
    return dx;
  };
  m.estimand = [](double, const VectorXd&, const VectorXd& u, const VectorXd&) {
    return u;
  };
  m.output = m.estimand;
  m.nominal_x0 = VectorXd::Zero(1);
  m.nominal_params = VectorXd(0);
  FourierControlSpace space(1, 2, 0.0, 5.0);
  MeasureReport rep =
      gramian_gain(m, VectorXd::Zero(1), space, 0.03, VectorXd(0));
  CHECK(rep.value == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("minimum-energy control cost matches the controllability gramian") {
  MatrixXd A(2, 2);
  A << 0.0, 1.0, 0.0, 0.0;
  MatrixXd B(2, 1);
  B << 0.0, 1.0;
  auto m = lti_model(A, B, MatrixXd::Identity(2, 2));
  VectorXd x1(2);
  x1 << 1.0, 1.0;
  // P = [[1/3, 1/2], [1/2, 1]]; x1' P^{-1} x1 = 4, so the cost is 2.
  MeasureReport rep =
      control_cost(m, VectorXd::Zero(2), x1, VectorXd::Ones(2), TimeMap(0, 1),
                   lgl_grid(15), {}, {}, fast_options());
  CHECK(!rep.unreachable);
  CHECK(rep.terminal_residual < 1e-6 * 2.0);
  CHECK(rep.value == doctest::Approx(2.0).epsilon(0.01));

  LtiSystem sys;
  sys.A = A;
  sys.B = B;
  sys.t0 = 0.0;
  sys.t1 = 1.0;
  CHECK(min_energy_cost(controllability_gramian(sys), x1) ==
        doctest::Approx(2.0).epsilon(1e-8));
}

TEST_CASE("control ambiguity: controllable target vs. blocked channel") {
  // x1' = u, x2' = 0: anything with a change in x2 is unreachable.
  MatrixXd A = MatrixXd::Zero(2, 2);
  MatrixXd B(2, 1);
  B << 1.0, 0.0;
  auto m = lti_model(A, B, MatrixXd::Identity(2, 2));
  TimeMap horizon(0.0, 1.0);

  VectorXd reachable(2);
  reachable << 0.7, 0.0;
  MeasureReport ok = control_ambiguity(m, VectorXd::Zero(2), reachable,
                                       VectorXd::Ones(2), horizon, lgl_grid(12),
                                       {}, fast_options());
  CHECK(ok.value < 1e-6);
  CHECK(!ok.unreachable);

  VectorXd blocked(2);
  blocked << 0.0, 1.0;
  MeasureReport bad = control_ambiguity(m, VectorXd::Zero(2), blocked,
                                        VectorXd::Ones(2), horizon, lgl_grid(12),
                                        {}, fast_options());
  CHECK(bad.value == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(bad.unreachable);
  CHECK(bad.sensitivity_ratio == doctest::Approx(1.0).epsilon(1e-4));

  MeasureReport region = control_ambiguity_region(
      m, {{VectorXd::Zero(2), reachable}, {VectorXd::Zero(2), blocked}},
      VectorXd::Ones(2), horizon, lgl_grid(12), {}, fast_options());
  CHECK(region.value == doctest::Approx(bad.value).epsilon(1e-9));
  CHECK(region.note == "worst pair index 1");
}

TEST_CASE("ambiguity is homogeneous in the tube radius and deterministic") {
  auto m = lti_model(-MatrixXd::Ones(1, 1), MatrixXd(1, 0), MatrixXd::Ones(1, 1));
  const auto& g = lgl_grid(13);
  TimeMap map(0.0, 2.0);
  Trajectory nom = lti_nominal(m, g, map);
  auto run = [&](double eps) {
    return observability_ambiguity(m, nom, TrajectoryMetric::Kind::L2,
                                   VectorXd::Constant(1, eps),
                                   initial_norm_metric(), {}, fast_options());
  };
  MeasureReport a = run(1e-2);
  MeasureReport b = run(2e-2);
  CHECK(b.value == doctest::Approx(2.0 * a.value).epsilon(1e-4));
  MeasureReport a2 = run(1e-2);
  CHECK(a.value == a2.value);  // bitwise repeatability
}

TEST_CASE("more starts never worsen the reported optimum") {
  auto m = lti_model(-MatrixXd::Ones(1, 1), MatrixXd(1, 0), MatrixXd::Ones(1, 1));
  const auto& g = lgl_grid(13);
  TimeMap map(0.0, 2.0);
  Trajectory nom = lti_nominal(m, g, map);
  auto run = [&](int starts) {
    MeasureOptions opt = fast_options(starts);
    return observability_ambiguity(m, nom, TrajectoryMetric::Kind::Linf,
                                   VectorXd::Constant(1, 1e-2),
                                   initial_norm_metric(), {}, opt);
  };
  MeasureReport one = run(1);
  MeasureReport three = run(3);
  CHECK(three.value >= one.value - 1e-15);
  CHECK(three.start_values.size() == 3);
  CHECK(three.start_values[0] == one.start_values[0]);  // nested restarts
}
