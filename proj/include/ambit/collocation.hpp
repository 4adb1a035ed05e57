#pragma once

#include <Eigen/Dense>

#include "ambit/errors.hpp"

namespace ambit {

// Affine map between the reference interval [-1, 1] and a time horizon
// [t0, t1].  scale() is the Jacobian of the map, (t1 - t0) / 2.
struct TimeMap {
  double t0;
  double t1;

  TimeMap(double t0_, double t1_) : t0(t0_), t1(t1_) {
    if (!(t1 > t0))
      throw std::invalid_argument("TimeMap: require t1 > t0");
  }
  double scale() const { return (t1 - t0) / 2.0; }
  double to_time(double tau) const { return t0 + (tau + 1.0) * scale(); }
  double to_tau(double t) const { return (t - t0) / scale() - 1.0; }
};

// Legendre-Gauss-Lobatto grid: nodes (roots of (1-t^2) P'_N(t)), quadrature
// weights, spectral differentiation matrix and barycentric weights for
// interpolation.  Immutable after construction; obtain via lgl_grid().
struct CollocationGrid {
  int node_count;              // N + 1 for a degree-N grid
  Eigen::VectorXd nodes;       // strictly increasing, nodes[0] = -1, last = +1
  Eigen::VectorXd weights;     // positive, sums to 2
  Eigen::MatrixXd diff_matrix; // node_count x node_count
  Eigen::VectorXd bary;        // barycentric interpolation weights
};

// Returns the cached immutable grid for the given node count (>= 2).
// Thread-safe; the reference stays valid for the lifetime of the process.
const CollocationGrid& lgl_grid(int node_count);

// scale * sum_j w_j v_j — integrates nodal samples over the mapped horizon.
double quadrature(const CollocationGrid& grid, const Eigen::VectorXd& values,
                  const TimeMap& map);

// (1/scale) * D * v — derivative of the interpolating polynomial at the nodes.
Eigen::VectorXd differentiate(const CollocationGrid& grid,
                              const Eigen::VectorXd& values,
                              const TimeMap& map);

// Barycentric Lagrange interpolation of nodal values at query points in [-1,1].
Eigen::VectorXd interpolate(const CollocationGrid& grid,
                            const Eigen::VectorXd& values,
                            const Eigen::VectorXd& query_points);

}  // namespace ambit
