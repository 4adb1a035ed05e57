#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ambit/collocation.hpp"
#include "ambit/nlp.hpp"

namespace ambit {

// Continuous-time control system x' = f(t, x, u, p) with a measured output y
// and an estimand z (the quantity whose ambiguity is being measured).
struct DynamicsModel {
  std::string name;
  int n_x = 0, n_u = 0, n_p = 0, n_y = 0, n_z = 0;
  using Fn = std::function<Eigen::VectorXd(
      double t, const Eigen::VectorXd& x, const Eigen::VectorXd& u,
      const Eigen::VectorXd& p)>;
  Fn rhs;
  Fn output;
  Fn estimand;
  // True when rhs is affine in (x, u, p) jointly; lets the transcription mark
  // the collocation defect system as affine so the solver can eliminate it.
  bool linear_dynamics = false;
  // Catalog conveniences: the nominal setup the model ships with.
  Eigen::VectorXd nominal_x0;
  Eigen::VectorXd nominal_params;
  std::function<Eigen::VectorXd(double t)> nominal_control;  // null when n_u = 0
};

struct TrajectoryMetric {
  enum class Kind { L2, Linf, initial_value_norm, final_value_norm };
  Kind kind = Kind::L2;
  Eigen::VectorXd weights;  // per channel; empty = all ones
};

// Nodal trajectory on a collocation grid plus static parameters.
struct Trajectory {
  const CollocationGrid* grid = nullptr;
  TimeMap map{-1.0, 1.0};
  Eigen::MatrixXd states;    // n_x x node_count
  Eigen::MatrixXd controls;  // n_u x node_count
  Eigen::VectorXd params;
};

// Metric of nodal channel values (channels x node_count).
//   L2   -> sqrt of the quadrature of the squared channel-weighted values
//   Linf -> max over nodes and channels of the weighted absolute value
//   initial/final_value_norm -> Euclidean norm of the weighted endpoint column
double metric_value(const TrajectoryMetric& metric, const Eigen::MatrixXd& values,
                    const CollocationGrid& grid, const TimeMap& map);

// Linear inequality rows A*v <= b over the stacked variables
// [u_0..u_{M-1}, s_1..s_{M-1}] encoding the total-variation bound
// sum_k |u_k - u_{k-1}| <= V_max via slacks s_k >= |u_k - u_{k-1}|.
// node_values fixes the node count (its values seed feasibility checks).
struct LinearRows {
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
};
LinearRows encode_variation_constraint(const Eigen::VectorXd& node_values,
                                       double V_max);

// Propagates the model under its nominal control law with the adaptive
// reference integrator and resamples at the collocation nodes.  The nominal
// trajectory is therefore independent of the collocation solver.
Trajectory propagate_nominal(const DynamicsModel& model,
                             const Eigen::VectorXd& x0,
                             const Eigen::VectorXd& params,
                             const CollocationGrid& grid, const TimeMap& map);

// Builds the finite-dimensional problem for one continuous-time formulation:
// decision variables are scaled deviations from the nominal trajectory
// [states | controls | params | slacks | epigraph], equality constraints are
// the collocation defects, inequalities encode tubes / balls / variation
// bounds, and the objective is configured by exactly one set_* call.
class Transcription {
 public:
  Transcription(const DynamicsModel& model, const CollocationGrid& grid,
                const TimeMap& map, const Trajectory& nominal,
                double dev_scale = 1.0);

  // --- constraints -------------------------------------------------------
  void fix_initial_state();                           // pin x(t0) to nominal
  void fix_initial_state_to(const Eigen::VectorXd& x0);
  void add_output_tube(TrajectoryMetric::Kind kind, const Eigen::VectorXd& eps);
  void add_initial_sphere(double radius);             // ||x(t0)-x_nom(t0)|| = r
  void set_state_bounds(const Eigen::VectorXd& lo, const Eigen::VectorXd& hi);
  void set_param_bounds(const Eigen::VectorXd& lo, const Eigen::VectorXd& hi);
  void add_param_quadratic(const std::vector<int>& idx, const Eigen::MatrixXd& G,
                           double bound);             // p_idx' G p_idx <= bound^2
  void add_variation_bound(int control_channel, double V_max);

  // --- objective (exactly one) -------------------------------------------
  enum class Source { estimand_deviation, output_deviation, control_deviation };
  void set_metric_objective(Source source, const TrajectoryMetric& metric,
                            Sense sense);
  // maximize sum_j coeffs.col(j) . (z_j - z_nom_j); coeffs is n_z x M.
  void set_linear_objective(const Eigen::MatrixXd& coeffs);
  // minimize ||u - u_nom||_L2 + psi * || xw .* (x(t1) - x1) ||.
  void set_control_cost_objective(double psi, const Eigen::VectorXd& x1,
                                  const Eigen::VectorXd& xw);
  // minimize || xw .* (x(t1) - x1) ||.
  void set_terminal_miss_objective(const Eigen::VectorXd& x1,
                                   const Eigen::VectorXd& xw);

  // --- build & decode ----------------------------------------------------
  const NlpProblem& nlp();  // assembles closures on first call
  int dim();
  Trajectory decode(const Eigen::VectorXd& v) const;
  Eigen::VectorXd encode(const Trajectory& t) const;
  Eigen::VectorXd nominal_decision();  // the all-zero deviation (+ slacks)
  Eigen::MatrixXd estimand_deviation(const Eigen::VectorXd& v) const;
  Eigen::MatrixXd output_deviation(const Eigen::VectorXd& v) const;
  const Trajectory& nominal() const { return nominal_; }
  const CollocationGrid& grid() const { return grid_; }
  const TimeMap& map() const { return map_; }
  double dev_scale() const { return dev_scale_; }

 private:
  struct TubeSpec {
    TrajectoryMetric::Kind kind;
    Eigen::VectorXd eps;
  };
  struct QuadSpec {
    std::vector<int> idx;
    Eigen::MatrixXd G;
    double bound;
  };
  struct VariationSpec {
    int channel;
    double V_max;
    int slack_offset;  // variable index of s_1
  };
  enum class ObjKind { none, metric, linear, control_cost, terminal_miss };

  void assemble();
  double node_time(int j) const;
  // Model quantities and their Jacobians at node j for the decoded point.
  void eval_node(int j, const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                 const Eigen::VectorXd& p, const DynamicsModel::Fn& fn, int out_dim,
                 Eigen::VectorXd* val, Eigen::MatrixXd* Jx, Eigen::MatrixXd* Ju,
                 Eigen::MatrixXd* Jp) const;

  DynamicsModel model_;
  const CollocationGrid& grid_;
  TimeMap map_;
  Trajectory nominal_;
  double dev_scale_;
  int M_;
  Eigen::VectorXd scale_x_, scale_u_, scale_p_;  // per-channel variable scales
  Eigen::MatrixXd z_nom_, y_nom_;

  std::optional<Eigen::VectorXd> pin_x0_;
  std::vector<TubeSpec> tubes_;
  std::optional<double> sphere_radius_;
  Eigen::VectorXd state_lo_, state_hi_, param_lo_, param_hi_;
  std::vector<QuadSpec> quads_;
  std::vector<VariationSpec> variations_;

  ObjKind obj_kind_ = ObjKind::none;
  Source obj_source_ = Source::estimand_deviation;
  TrajectoryMetric obj_metric_;
  Sense obj_sense_ = Sense::maximize;
  Eigen::MatrixXd obj_coeffs_;
  double obj_psi_ = 0.0;
  Eigen::VectorXd obj_x1_, obj_xw_;

  int n_extra_ = 0;     // slack + epigraph variables
  int epi_index_ = -1;  // epigraph variable (Linf minimize objective)
  bool built_ = false;
  NlpProblem nlp_;
};

}  // namespace ambit
