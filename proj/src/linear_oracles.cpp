#include "ambit/linear_oracles.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include <unsupported/Eigen/MatrixFunctions>

#include "ambit/collocation.hpp"

namespace ambit {
namespace {

constexpr int kPanels = 64;

// Composite LGL quadrature of a matrix-valued integrand over [t0, t1].
template <typename F>
Eigen::MatrixXd panel_quadrature(double t0, double t1, int rows, int cols,
                                 F&& integrand) {
  const auto& g = lgl_grid(6);
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(rows, cols);
  const double h = (t1 - t0) / kPanels;
  for (int p = 0; p < kPanels; ++p) {
    const TimeMap map(t0 + p * h, t0 + (p + 1) * h);
    for (int j = 0; j < g.node_count; ++j)
      acc += (map.scale() * g.weights[j]) * integrand(map.to_time(g.nodes[j]));
  }
  return acc;
}

void check_horizon(const LtiSystem& sys) {
  if (!(sys.t1 > sys.t0))
    throw std::invalid_argument("LtiSystem: require t1 > t0");
}

}  // namespace

Eigen::MatrixXd observability_gramian(const LtiSystem& sys) {
  check_horizon(sys);
  const int n = static_cast<int>(sys.A.rows());
  Eigen::MatrixXd P = panel_quadrature(
      0.0, sys.t1 - sys.t0, n, n, [&](double tau) -> Eigen::MatrixXd {
        const Eigen::MatrixXd E = (sys.A * tau).exp();
        const Eigen::MatrixXd CE = sys.C * E;
        return CE.transpose() * CE;
      });
  return (P + P.transpose()) / 2.0;
}

Eigen::MatrixXd controllability_gramian(const LtiSystem& sys) {
  check_horizon(sys);
  const int n = static_cast<int>(sys.A.rows());
  Eigen::MatrixXd P = panel_quadrature(
      0.0, sys.t1 - sys.t0, n, n, [&](double tau) -> Eigen::MatrixXd {
        const Eigen::MatrixXd E = (sys.A * tau).exp();
        const Eigen::MatrixXd EB = E * sys.B;
        return EB * EB.transpose();
      });
  return (P + P.transpose()) / 2.0;
}

double ambiguity_from_gramian(const Eigen::MatrixXd& P, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("ambiguity_from_gramian: eps > 0");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(P);
  const double lmin = es.eigenvalues().minCoeff();
  const double lmax = es.eigenvalues().maxCoeff();
  if (lmin <= 1e-14 * std::max(lmax, 1.0))
    return std::numeric_limits<double>::infinity();
  return eps / std::sqrt(lmin);
}

double min_energy_cost(const Eigen::MatrixXd& P, const Eigen::VectorXd& x1) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(P);
  const double lmin = es.eigenvalues().minCoeff();
  const double lmax = es.eigenvalues().maxCoeff();
  if (lmin <= 1e-14 * std::max(lmax, 1.0))
    return std::numeric_limits<double>::infinity();
  return std::sqrt(x1.dot(P.ldlt().solve(x1)));
}

}  // namespace ambit
