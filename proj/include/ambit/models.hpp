#pragma once

#include <string>
#include <vector>

#include "ambit/transcription.hpp"

namespace ambit {

// Two-frequency disturbance space spanned by cos(2*pi*k t/T) and
// sin(2*pi*k t/T) for k in {k1, k2}, with the sine dropped for k = 0.
struct FourierControlSpace {
  int k1 = 0;
  int k2 = 1;
  double t0 = 0.0;
  double tf = 1.0;

  FourierControlSpace(int k1_, int k2_, double t0_, double tf_);
  int dim() const;                          // number of basis functions
  Eigen::VectorXd basis(double t) const;    // basis values at time t
  double evaluate(const Eigen::VectorXd& coeffs, double t) const;
  // Gram matrix of the basis under the 1/(tf - t0)-normalized inner product;
  // diagonal with entries 1 (constant) and 1/2 (full-period sinusoids).
  Eigen::MatrixXd gram() const;
};

struct ModelCatalogEntry {
  std::string name;
  std::string description;
};
std::vector<ModelCatalogEntry> model_catalog();

// Companion-form chain with y = x1, z = x, nominal x0 = (0,...,0,1).
DynamicsModel chain_system(int n);

// Three planar vehicles (leader + two followers under linear feedback);
// 12 states, free leader inputs (u1x, u1y), output = follower positions,
// estimand = leader x-position, x-velocity, y-position, y-velocity.
struct VehicleParams {
  double d1 = -2.0, d2 = -2.0;
  double a1 = -1.0, a2 = -2.0;
  double b1 = -3.0, b2 = -7.0;
  double t0 = 0.0, tf = 20.0;
};
DynamicsModel vehicle_network(const VehicleParams& params = {});
// Total variation of the sampled nominal leader input and of the input as
// literally quoted (whose variation conflicts with the stated bound; the
// measure report flags the discrepancy).
double vehicle_nominal_variation_quoted();

// Seven-state enzymatic oscillator; y = x1, unknown parameters (k1, k6, k10)
// exposed as the model parameters, estimand z = those parameters.
DynamicsModel laub_loomis();
Eigen::VectorXd laub_loomis_nominal_k();  // all 14 rate constants

// Atomic-force-microscope cantilever: 2 states, disturbance w as the control
// channel, tip-sample gap delta as the boxed parameter, z = x1.
struct AfmParams {
  double omega = 1.0, xi = 0.02;
  double alpha1 = 0.1481, alpha2 = 3.6e-6;
  double u = 1.0;  // known constant input
  double t0 = 0.0, tf = 7.0;
  double delta_min = 0.8, delta_max = 1.2;
  double sigma = 0.03;
};
DynamicsModel afm(const AfmParams& params = {});

// Central-difference heat rod with Neumann boundary control; the last state's
// derivative is the direct control channel v (u = (v - x'_{N-1})/dr).
DynamicsModel heat_rod(int N = 31, double kappa = 0.14);
// Target arch A*sin(r/2) sampled at the rod coordinates.
Eigen::VectorXd heat_rod_target(int N, double A);
// Weights realizing the discrete norm ||x||^2 = dr * sum x_i^2.
Eigen::VectorXd heat_rod_norm_weights(int N);

}  // namespace ambit
