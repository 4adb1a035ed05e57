#include "ambit/integrate.hpp"

#include <stdexcept>
#include <vector>

#include <boost/numeric/odeint.hpp>
#include <boost/numeric/odeint/external/eigen/eigen.hpp>

#include "ambit/errors.hpp"

namespace ambit {

Eigen::MatrixXd integrate_at(const OdeRhs& rhs, const Eigen::VectorXd& x0,
                             const Eigen::VectorXd& times, double rel_tol,
                             double abs_tol) {
  namespace ode = boost::numeric::odeint;
  const int n = static_cast<int>(x0.size());
  const int m = static_cast<int>(times.size());
  if (m < 1) throw std::invalid_argument("integrate_at: empty time list");
  for (int k = 1; k < m; ++k)
    if (times[k] < times[k - 1])
      throw std::invalid_argument("integrate_at: times must be nondecreasing");

  auto system = [&](const Eigen::VectorXd& x, Eigen::VectorXd& dxdt, double t) {
    dxdt = rhs(t, x);
    if (!dxdt.allFinite())
      throw EvaluationError("integrate_at: non-finite rhs value");
  };

  Eigen::MatrixXd out(n, m);
  std::vector<double> ts(times.data(), times.data() + m);
  int col = 0;
  auto observer = [&](const Eigen::VectorXd& x, double) { out.col(col++) = x; };

  using Stepper = ode::runge_kutta_dopri5<Eigen::VectorXd, double,
                                          Eigen::VectorXd, double,
                                          ode::vector_space_algebra>;
  Eigen::VectorXd x = x0;
  double dt0 = 1e-4;
  if (m > 1 && times[m - 1] > times[0])
    dt0 = (times[m - 1] - times[0]) / 1000.0;
  ode::integrate_times(ode::make_dense_output(abs_tol, rel_tol, Stepper()), system,
                       x, ts.begin(), ts.end(), dt0, observer);
  if (col != m) throw EvaluationError("integrate_at: integration aborted early");
  return out;
}

}  // namespace ambit
