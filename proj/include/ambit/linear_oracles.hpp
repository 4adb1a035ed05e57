#pragma once

#include <Eigen/Dense>

namespace ambit {

// Finite-horizon LTI system used for closed-form verification oracles.
struct LtiSystem {
  Eigen::MatrixXd A;  // n x n
  Eigen::MatrixXd B;  // n x m
  Eigen::MatrixXd C;  // p x n
  double t0 = 0.0;
  double t1 = 1.0;
};

// P = int_{t0}^{t1} e^{A' tau} C' C e^{A tau} dtau (symmetric PSD).
Eigen::MatrixXd observability_gramian(const LtiSystem& sys);

// P = int_{t0}^{t1} e^{A tau} B B' e^{A' tau} dtau (symmetric PSD).
Eigen::MatrixXd controllability_gramian(const LtiSystem& sys);

// eps / sqrt(lambda_min(P)); +inf when P is numerically unobservable
// (lambda_min <= 1e-14 relative to lambda_max).
double ambiguity_from_gramian(const Eigen::MatrixXd& P, double eps);

// sqrt(x1' P^{-1} x1); +inf when P is numerically singular (uncontrollable).
double min_energy_cost(const Eigen::MatrixXd& P, const Eigen::VectorXd& x1);

}  // namespace ambit
