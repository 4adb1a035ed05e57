#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>

#include "ambit/errors.hpp"

namespace ambit {

enum class Sense { minimize, maximize };
enum class NlpStatus { converged, max_iterations, infeasible };

// Smooth finite-dimensional constrained problem.  eq targets 0, ineq targets
// <= 0.  Empty bound vectors mean unbounded.  Analytic derivative hooks are
// optional; central finite differences are used where they are absent.
struct NlpProblem {
  int dim = 0;
  Sense sense = Sense::minimize;
  std::function<double(const Eigen::VectorXd&)> objective;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> eq;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> ineq;
  int eq_dim = 0;
  int ineq_dim = 0;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> objective_grad;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> eq_jac;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> ineq_jac;
  // Optional positive-semidefinite curvature model of the objective (e.g. the
  // Gauss-Newton part of a least-squares or norm objective).  Used to shape
  // second-order inner steps; correctness never depends on it.
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> objective_curvature;
  // Declares that the equality constraints are affine (constant eq_jac).
  // Enables a null-space reduction: the stiff row space of the equality
  // Jacobian is eliminated in closed form and the solver runs in the
  // low-dimensional compliant subspace, which removes the extreme
  // ill-conditioning that collocation defect systems otherwise impose.
  bool eq_affine = false;
};

// Achievable equality-feasibility level near x0: runs a damped minimum-norm
// Gauss-Newton descent on the equality residual alone (box-clamped) and
// returns the max-abs violation it bottoms out at.  For discretized problems
// this measures the resolution floor of the discretization; solvers cannot be
// expected to certify feasibility below it.  Requires eq_jac; returns 0 when
// the problem has no equality constraints or no analytic Jacobian.
double feasibility_floor(const NlpProblem& problem,
                         const Eigen::VectorXd& x0, int max_steps = 30);

struct NlpResult {
  Eigen::VectorXd solution;
  double objective_value = 0.0;   // reported in the caller's sense
  double max_eq_violation = 0.0;
  double max_ineq_violation = 0.0;
  NlpStatus status = NlpStatus::max_iterations;
  int iterations = 0;             // total inner iterations
  int start_index = 0;            // which multi-start seed won
};

struct SolverOptions {
  double feasibility_tol = 1e-8;
  double stationarity_tol = 1e-6;
  int max_outer = 200;
  int max_inner = 500;
  double penalty_init = 10.0;
  double penalty_growth = 10.0;
  double penalty_max = 1e12;
  // Optional iteration-trace hook: called with every *accepted* inner merit
  // value (the augmented-Lagrangian value), tagged by outer iteration.
  std::function<void(int outer, double merit)> trace;
};

// Gaussian perturbations around a nominal point; index 0 is the nominal
// itself.  sample(i) is a pure function of (seed, i), so enlarging the start
// count keeps earlier starts identical.
struct StartSampler {
  Eigen::VectorXd nominal;
  double radius = 1.0;
  std::uint64_t seed = 0;

  Eigen::VectorXd sample(int index) const;
};

// Augmented-Lagrangian solve from one initial guess (clamped into the box).
NlpResult solve(const NlpProblem& problem, const Eigen::VectorXd& initial_guess,
                const SolverOptions& options = {});

// Runs `solve` from each sampled start; returns the feasible result with the
// best objective (per sense), ties broken by lowest start index; if none is
// feasible, the least-infeasible result with status=infeasible.
NlpResult multistart_solve(const NlpProblem& problem, int starts,
                           const StartSampler& sampler,
                           const SolverOptions& options = {});

// Test hook: max relative error between the problem's analytic derivatives
// and central finite differences over the given points.  Returns 0 when the
// problem declares no analytic derivatives.
double check_derivatives(const NlpProblem& problem,
                         const std::vector<Eigen::VectorXd>& points);

}  // namespace ambit
