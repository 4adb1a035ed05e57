#pragma once

#include <Eigen/Dense>
#include <functional>

namespace ambit {

using OdeRhs = std::function<Eigen::VectorXd(double t, const Eigen::VectorXd& x)>;

// High-accuracy adaptive propagation (Dormand-Prince 5(4) with error
// control); returns the states at the requested times as columns.  `times`
// must be nondecreasing with times[0] >= t0 of the trajectory (the first
// entry is the initial time of x0).
Eigen::MatrixXd integrate_at(const OdeRhs& rhs, const Eigen::VectorXd& x0,
                             const Eigen::VectorXd& times, double rel_tol = 1e-10,
                             double abs_tol = 1e-12);

}  // namespace ambit
