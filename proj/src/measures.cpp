#include "ambit/measures.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <random>
#include <stdexcept>

#include "ambit/integrate.hpp"

namespace ambit {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

VectorXd metric_weights(const TrajectoryMetric& metric, int channels) {
  if (metric.weights.size() == 0) return VectorXd::Ones(channels);
  if (metric.weights.size() != channels)
    throw std::invalid_argument("metric weights: channel count mismatch");
  return metric.weights;
}

// Linearization of the metric at the current deviation: the coefficient
// matrix whose linear functional the next support step maximizes.  Zero
// (caller keeps the previous direction) when the deviation vanishes.
MatrixXd support_direction(const TrajectoryMetric& zm, const MatrixXd& dz,
                           const CollocationGrid& grid) {
  const int nc = static_cast<int>(dz.rows());
  const int M = static_cast<int>(dz.cols());
  const VectorXd w = metric_weights(zm, nc);
  MatrixXd C = MatrixXd::Zero(nc, M);
  switch (zm.kind) {
    case TrajectoryMetric::Kind::initial_value_norm:
      C.col(0) = (w.array().square() * dz.col(0).array()).matrix();
      break;
    case TrajectoryMetric::Kind::final_value_norm:
      C.col(M - 1) = (w.array().square() * dz.col(M - 1).array()).matrix();
      break;
    case TrajectoryMetric::Kind::L2:
      for (int j = 0; j < M; ++j)
        C.col(j) = grid.weights[j] * (w.array().square() * dz.col(j).array()).matrix();
      break;
    case TrajectoryMetric::Kind::Linf: {
      int bc = -1, bj = -1;
      double best = 0.0;
      for (int c = 0; c < nc; ++c)
        for (int j = 0; j < M; ++j)
          if (w[c] * std::abs(dz(c, j)) > best) {
            best = w[c] * std::abs(dz(c, j));
            bc = c;
            bj = j;
          }
      if (bc >= 0) C(bc, bj) = (dz(bc, bj) >= 0 ? 1.0 : -1.0) * w[bc];
      break;
    }
  }
  const double n = C.norm();
  if (n > 0) C /= n;
  return C;
}

MatrixXd random_direction(const TrajectoryMetric& zm, int nc, int M,
                          std::mt19937_64& rng) {
  const VectorXd w = metric_weights(zm, nc);
  if (w.cwiseAbs().maxCoeff() == 0.0)
    throw std::invalid_argument("support iteration: all metric weights are zero");
  std::normal_distribution<double> gauss(0.0, 1.0);
  MatrixXd C = MatrixXd::Zero(nc, M);
  switch (zm.kind) {
    case TrajectoryMetric::Kind::initial_value_norm:
      for (int c = 0; c < nc; ++c)
        if (w[c] != 0.0) C(c, 0) = gauss(rng);
      break;
    case TrajectoryMetric::Kind::final_value_norm:
      for (int c = 0; c < nc; ++c)
        if (w[c] != 0.0) C(c, M - 1) = gauss(rng);
      break;
    case TrajectoryMetric::Kind::L2:
      for (int c = 0; c < nc; ++c)
        if (w[c] != 0.0)
          for (int j = 0; j < M; ++j) C(c, j) = gauss(rng);
      break;
    case TrajectoryMetric::Kind::Linf: {
      std::vector<int> channels;
      for (int c = 0; c < nc; ++c)
        if (w[c] != 0.0) channels.push_back(c);
      std::uniform_int_distribution<int> pick_c(0, (int)channels.size() - 1);
      std::uniform_int_distribution<int> pick_j(0, M - 1);
      const int c = channels[pick_c(rng)];
      C(c, pick_j(rng)) = (gauss(rng) >= 0 ? 1.0 : -1.0) * w[c];
      break;
    }
  }
  const double n = C.norm();
  if (n > 0) C /= n;
  return C;
}

struct SupportOutcome {
  double value = 0.0;
  Trajectory worst;
  NlpResult solver;
  std::vector<double> start_values;
  std::unique_ptr<Transcription> transcription;
  VectorXd best_decision;
};

// Maximizes a norm-type metric of the estimand deviation over the feasible
// set by iterating linear support objectives (each solved with the
// augmented-Lagrangian solver, warm-started from the previous iterate).
// Restarted from `starts` seeded random directions; the variable scaling is
// rebuilt whenever the achieved value dwarfs the current deviation scale.
SupportOutcome support_maximize(
    const std::function<std::unique_ptr<Transcription>(double dev)>& factory,
    const TrajectoryMetric& zm, int n_z, double dev0, const MeasureOptions& opt) {
  SupportOutcome out;
  const double ftol = opt.nlp.feasibility_tol;
  // The discretization cannot certify feasibility below its resolution floor
  // (integration error of the nominal over the deviation scale); relax the
  // working tolerance to that floor so scale-limited problems stay solvable.
  auto floor_adjusted = [&](Transcription& tr) {
    SolverOptions so = opt.nlp;
    const double fl = feasibility_floor(tr.nlp(), tr.nominal_decision());
    so.feasibility_tol = std::max(ftol, 1.5 * fl);
    return so;
  };
  bool any = false;
  for (int s = 0; s < std::max(1, opt.starts); ++s) {
    std::mt19937_64 rng(opt.seed * 0x9E3779B97F4A7C15ULL +
                        0xD1B54A32D192ED03ULL * (std::uint64_t)(s + 1));
    double dev = dev0;
    auto tr = factory(dev);
    SolverOptions so = floor_adjusted(*tr);
    const int M = tr->grid().node_count;
    VectorXd v = tr->nominal_decision();
    MatrixXd C = random_direction(zm, n_z, M, rng);
    double val = 0.0;
    bool have = false;
    NlpResult best_r;
    int rescales = 0;
    for (int it = 0; it < opt.support_max_iter; ++it) {
      tr->set_linear_objective(C);
      NlpResult r = solve(tr->nlp(), v, so);
      if (std::max(r.max_eq_violation, r.max_ineq_violation) >
          10.0 * so.feasibility_tol)
        break;
      v = r.solution;
      const MatrixXd dz = tr->estimand_deviation(v);
      const double nv = metric_value(zm, dz, tr->grid(), tr->map());
      best_r = r;
      have = true;
      const bool converged =
          it > 0 && std::abs(nv - val) <= opt.support_tol * std::max(1e-30, nv);
      val = nv;
      if (converged) {
        // The iteration has stabilized at the current deviation scale, but
        // the optimum may live at a far larger amplitude that is numerically
        // invisible in these coordinates (deviations along nearly
        // unobservable directions).  Probe a coarser scale with one
        // warm-started re-solve and keep climbing while the value improves.
        bool escaped = false;
        if (rescales < 6) {
          const Trajectory t = tr->decode(v);
          for (double factor : {1e2, 1e4, 1e6}) {
            auto tr2 = factory(dev * factor);
            SolverOptions so2 = floor_adjusted(*tr2);
            tr2->set_linear_objective(C);
            NlpResult r2 = solve(tr2->nlp(), tr2->encode(t), so2);
            if (std::max(r2.max_eq_violation, r2.max_ineq_violation) >
                10.0 * so2.feasibility_tol)
              continue;
            const MatrixXd dz2 = tr2->estimand_deviation(r2.solution);
            const double nv2 = metric_value(zm, dz2, tr2->grid(), tr2->map());
            if (nv2 > val * (1.0 + 100.0 * opt.support_tol)) {
              dev *= factor;
              tr = std::move(tr2);
              so = so2;
              v = r2.solution;
              val = nv2;
              best_r = r2;
              ++rescales;
              escaped = true;
              const MatrixXd Cn2 = support_direction(zm, dz2, tr->grid());
              if (Cn2.norm() > 0) C = Cn2;
              break;
            }
          }
        }
        if (!escaped) break;
        continue;
      }
      const MatrixXd Cn = support_direction(zm, dz, tr->grid());
      if (Cn.norm() > 0) C = Cn;
      // Rescale the deviation variables when the iterate outgrows the current
      // scale.  The trigger watches the state amplitude as well as the metric
      // value: near-unobservable directions can carry state deviations orders
      // of magnitude larger than the estimand deviation they produce.
      const Trajectory t = tr->decode(v);
      double amp = (t.states - tr->nominal().states).cwiseAbs().maxCoeff();
      if (t.params.size())
        amp = std::max(
            amp, (t.params - tr->nominal().params).cwiseAbs().maxCoeff());
      const double grown = std::max(val, amp);
      if (grown > 50.0 * dev && rescales < 6) {
        dev = grown;
        tr = factory(dev);
        so = floor_adjusted(*tr);
        v = tr->encode(t);
        ++rescales;
      }
    }
    out.start_values.push_back(
        have ? val : std::numeric_limits<double>::quiet_NaN());
    if (have && (!any || val > out.value)) {
      any = true;
      out.value = val;
      best_r.start_index = s;
      out.solver = best_r;
      out.worst = tr->decode(v);
      out.best_decision = v;
      out.transcription = std::move(tr);
    }
  }
  if (!any)
    throw std::runtime_error(
        "support iteration: no feasible perturbation found from any start");
  return out;
}

void apply_extras(Transcription& tr, const ConstraintExtras& extras) {
  if (extras.fix_initial_state) tr.fix_initial_state();
  if (extras.param_bounds)
    tr.set_param_bounds(extras.param_bounds->first, extras.param_bounds->second);
  if (extras.state_bounds)
    tr.set_state_bounds(extras.state_bounds->first, extras.state_bounds->second);
  for (const auto& [channel, vmax] : extras.variation_bounds)
    tr.add_variation_bound(channel, vmax);
}

MatrixXd resimulate_states(const DynamicsModel& model, const Trajectory& t) {
  if (!t.grid) throw std::invalid_argument("resimulate: trajectory has no grid");
  const CollocationGrid& g = *t.grid;
  VectorXd times(g.node_count);
  for (int j = 0; j < g.node_count; ++j) times[j] = t.map.to_time(g.nodes[j]);
  OdeRhs rhs = [&](double tt, const VectorXd& x) {
    VectorXd u(model.n_u);
    if (model.n_u) {
      VectorXd q(1);
      q[0] = std::clamp(t.map.to_tau(tt), -1.0, 1.0);
      for (int c = 0; c < model.n_u; ++c)
        u[c] = interpolate(g, t.controls.row(c).transpose(), q)[0];
    }
    return model.rhs(tt, x, u, t.params);
  };
  return integrate_at(rhs, t.states.col(0), times);
}

// Max positive relative overshoot of the re-simulated output deviation
// beyond the tube bounds (0 when the tube holds under re-integration).
double tube_overshoot(const DynamicsModel& model, const Trajectory& worst,
                      const MatrixXd& resim_states, const Trajectory& nominal,
                      TrajectoryMetric::Kind kind, const VectorXd& eps) {
  const CollocationGrid& g = *worst.grid;
  const int M = g.node_count;
  MatrixXd dy(model.n_y, M);
  auto u_of = [&](const Trajectory& t, int j) {
    return model.n_u ? t.controls.col(j).eval() : VectorXd::Zero(0).eval();
  };
  for (int j = 0; j < M; ++j) {
    const double tt = worst.map.to_time(g.nodes[j]);
    dy.col(j) = model.output(tt, resim_states.col(j), u_of(worst, j),
                             worst.params) -
                model.output(tt, nominal.states.col(j), u_of(nominal, j),
                             nominal.params);
  }
  double margin = 0.0;
  for (int c = 0; c < model.n_y; ++c) {
    double norm;
    if (kind == TrajectoryMetric::Kind::Linf) {
      norm = dy.row(c).cwiseAbs().maxCoeff();
    } else {
      double q = 0.0;
      for (int j = 0; j < M; ++j) q += g.weights[j] * dy(c, j) * dy(c, j);
      norm = std::sqrt(worst.map.scale() * q);
    }
    margin = std::max(margin, norm / eps[c] - 1.0);
  }
  return std::max(0.0, margin);
}

}  // namespace

double resimulation_residual(const DynamicsModel& model, const Trajectory& t) {
  const MatrixXd X = resimulate_states(model, t);
  const double scale = std::max(1.0, t.states.cwiseAbs().maxCoeff());
  return (X - t.states).cwiseAbs().maxCoeff() / scale;
}

MeasureReport observability_ambiguity(const DynamicsModel& model,
                                      const Trajectory& nominal,
                                      TrajectoryMetric::Kind tube_kind,
                                      const VectorXd& eps,
                                      const TrajectoryMetric& z_metric,
                                      const ConstraintExtras& extras,
                                      const MeasureOptions& opt) {
  if (!nominal.grid)
    throw std::invalid_argument("observability_ambiguity: nominal has no grid");
  const CollocationGrid& grid = *nominal.grid;
  auto factory = [&](double dev) {
    auto tr = std::make_unique<Transcription>(model, grid, nominal.map, nominal,
                                              dev);
    tr->add_output_tube(tube_kind, eps);
    apply_extras(*tr, extras);
    tr->set_linear_objective(MatrixXd::Zero(model.n_z, grid.node_count));
    return tr;
  };
  const double dev0 = opt.initial_dev_scale > 0
                          ? opt.initial_dev_scale
                          : std::max(eps.maxCoeff(), 1e-8);
  SupportOutcome out = support_maximize(factory, z_metric, model.n_z, dev0, opt);

  MeasureReport rep;
  rep.measure_kind = MeasureKind::obs_ambiguity;
  rep.value = out.value;
  rep.sensitivity_ratio = out.value / eps.norm();
  rep.worst_trajectory = out.worst;
  rep.nominal_trajectory = nominal;
  rep.solver = out.solver;
  rep.lower_bound_flag = true;
  rep.deviation_norm = out.value;
  rep.start_values = out.start_values;
  const MatrixXd X = resimulate_states(model, out.worst);
  const double scale = std::max(1.0, out.worst.states.cwiseAbs().maxCoeff());
  rep.resimulation_residual = (X - out.worst.states).cwiseAbs().maxCoeff() / scale;
  rep.constraint_margin =
      tube_overshoot(model, out.worst, X, nominal, tube_kind, eps);
  return rep;
}

MeasureReport detectability_ambiguity(const DynamicsModel& model,
                                      const Trajectory& nominal,
                                      TrajectoryMetric::Kind tube_kind,
                                      const VectorXd& eps,
                                      const MeasureOptions& opt) {
  TrajectoryMetric zm;
  zm.kind = TrajectoryMetric::Kind::final_value_norm;
  return observability_ambiguity(model, nominal, tube_kind, eps, zm, {}, opt);
}

MeasureReport least_observable_direction(const DynamicsModel& model,
                                         const Trajectory& nominal, double rho,
                                         const MeasureOptions& opt) {
  if (!nominal.grid)
    throw std::invalid_argument("least_observable_direction: nominal has no grid");
  if (!(rho > 0))
    throw std::invalid_argument("least_observable_direction: rho must be > 0");
  const CollocationGrid& grid = *nominal.grid;
  Transcription tr(model, grid, nominal.map, nominal, rho);
  tr.add_initial_sphere(rho);
  TrajectoryMetric ym;
  ym.kind = TrajectoryMetric::Kind::L2;
  tr.set_metric_objective(Transcription::Source::output_deviation, ym,
                          Sense::minimize);
  tr.nlp();

  SolverOptions so = opt.nlp;
  so.feasibility_tol =
      std::max(so.feasibility_tol,
               1.5 * feasibility_floor(tr.nlp(), tr.nominal_decision()));
  double best = kInf;
  NlpResult best_r;
  VectorXd best_v;
  bool any = false;
  std::vector<double> svals;
  for (int s = 0; s < std::max(1, opt.starts); ++s) {
    std::mt19937_64 rng(opt.seed * 0x9E3779B97F4A7C15ULL +
                        0xD1B54A32D192ED03ULL * (std::uint64_t)(s + 1));
    std::normal_distribution<double> gauss(0.0, 1.0);
    VectorXd dir(model.n_x);
    for (int i = 0; i < model.n_x; ++i) dir[i] = gauss(rng);
    dir.normalize();
    // Initial guess: the whole nominal trajectory translated onto the sphere.
    Trajectory guess = nominal;
    guess.states.colwise() += rho * dir;
    NlpResult r = solve(tr.nlp(), tr.encode(guess), so);
    const bool feasible = std::max(r.max_eq_violation, r.max_ineq_violation) <=
                          10.0 * so.feasibility_tol;
    svals.push_back(feasible ? r.objective_value
                             : std::numeric_limits<double>::quiet_NaN());
    if (feasible && (!any || r.objective_value < best)) {
      any = true;
      best = r.objective_value;
      best_r = r;
      best_r.start_index = s;
      best_v = r.solution;
    }
  }
  if (!any)
    throw std::runtime_error(
        "least_observable_direction: no feasible point on the sphere found");

  MeasureReport rep;
  rep.measure_kind = MeasureKind::least_obs_direction;
  const Trajectory worst = tr.decode(best_v);
  const MatrixXd dy = tr.output_deviation(best_v);
  rep.value = metric_value(ym, dy, grid, nominal.map);
  rep.sensitivity_ratio = rho / std::max(rep.value, 1e-300);
  rep.worst_trajectory = worst;
  rep.nominal_trajectory = nominal;
  rep.solver = best_r;
  rep.lower_bound_flag = false;  // an upper bound on the least output response
  rep.deviation_norm = rep.value;
  rep.start_values = svals;
  rep.resimulation_residual = resimulation_residual(model, worst);
  rep.constraint_margin =
      std::max(best_r.max_eq_violation, best_r.max_ineq_violation);
  return rep;
}

MeasureReport lp_gain(const DynamicsModel& model, const VectorXd& x0,
                      const FourierControlSpace& space, double sigma,
                      const std::optional<std::pair<VectorXd, VectorXd>>& param_box,
                      const CollocationGrid& grid, const MeasureOptions& opt) {
  if (model.n_u != 1)
    throw std::invalid_argument("lp_gain: the disturbance enters through a "
                                "single control channel");
  if (!(sigma > 0)) throw std::invalid_argument("lp_gain: sigma must be > 0");
  const int n = model.n_x;
  const int d = space.dim();
  const int np = model.n_p;
  const TimeMap map(space.t0, space.tf);

  // Augmented system: the disturbed trajectory stacked on an undisturbed
  // reference copy, both sharing the (decision) parameters; the disturbance
  // is the basis expansion with the trailing parameters as coefficients.
  DynamicsModel aug;
  aug.name = model.name + "+reference";
  aug.n_x = 2 * n;
  aug.n_u = 0;
  aug.n_p = np + d;
  aug.n_y = model.n_z;
  aug.n_z = model.n_z;
  const DynamicsModel base = model;
  aug.rhs = [base, space, n, np](double t, const VectorXd& X, const VectorXd&,
                                 const VectorXd& P) {
    const VectorXd p = P.head(np);
    VectorXd w(1);
    w[0] = P.tail(space.dim()).dot(space.basis(t));
    VectorXd dx(2 * n);
    dx.head(n) = base.rhs(t, X.head(n), w, p);
    dx.tail(n) = base.rhs(t, X.tail(n), VectorXd::Zero(1), p);
    return dx;
  };
  aug.estimand = [base, n, np](double t, const VectorXd& X, const VectorXd&,
                               const VectorXd& P) {
    const VectorXd p = P.head(np);
    const VectorXd u0 = VectorXd::Zero(1);
    return (base.estimand(t, X.head(n), u0, p) -
            base.estimand(t, X.tail(n), u0, p))
        .eval();
  };
  aug.output = aug.estimand;
  aug.nominal_x0.resize(2 * n);
  aug.nominal_x0 << x0, x0;
  aug.nominal_params = VectorXd::Zero(np + d);
  aug.nominal_params.head(np) = model.nominal_params;

  const Trajectory nominal =
      propagate_nominal(aug, aug.nominal_x0, aug.nominal_params, grid, map);

  VectorXd plo = VectorXd::Constant(np + d, -kInf);
  VectorXd phi = VectorXd::Constant(np + d, kInf);
  if (param_box) {
    plo.head(np) = param_box->first;
    phi.head(np) = param_box->second;
  }
  std::vector<int> coeff_idx(d);
  for (int k = 0; k < d; ++k) coeff_idx[k] = np + k;

  auto factory = [&](double dev) {
    auto tr = std::make_unique<Transcription>(aug, grid, map, nominal, dev);
    tr->fix_initial_state();
    tr->set_param_bounds(plo, phi);
    tr->add_param_quadratic(coeff_idx, space.gram(), sigma);
    tr->set_linear_objective(MatrixXd::Zero(aug.n_z, grid.node_count));
    return tr;
  };
  TrajectoryMetric zm;
  zm.kind = TrajectoryMetric::Kind::L2;
  const double dev0 =
      opt.initial_dev_scale > 0 ? opt.initial_dev_scale : sigma;
  SupportOutcome out = support_maximize(factory, zm, aug.n_z, dev0, opt);

  const double T = space.tf - space.t0;
  MeasureReport rep;
  rep.measure_kind = MeasureKind::lp_gain;
  rep.value = out.value / (sigma * std::sqrt(T));
  // Stored so that value * sigma == deviation_norm holds bit-identically:
  // the time-normalized L2 norm of the worst estimand gap.
  rep.deviation_norm = rep.value * sigma;
  rep.sensitivity_ratio = rep.value;
  rep.worst_trajectory = out.worst;
  rep.nominal_trajectory = nominal;
  rep.solver = out.solver;
  rep.lower_bound_flag = true;
  rep.start_values = out.start_values;
  rep.resimulation_residual = resimulation_residual(aug, out.worst);
  const VectorXd c = out.worst.params.tail(d);
  rep.constraint_margin =
      std::max(0.0, c.dot(space.gram() * c) / (sigma * sigma) - 1.0);
  return rep;
}

MeasureReport gramian_gain(const DynamicsModel& model, const VectorXd& x0,
                           const FourierControlSpace& space, double sigma,
                           const VectorXd& params, int integration_nodes) {
  if (model.n_u != 1)
    throw std::invalid_argument("gramian_gain: the disturbance enters through "
                                "a single control channel");
  if (!(sigma > 0)) throw std::invalid_argument("gramian_gain: sigma > 0");
  const int d = space.dim();
  const TimeMap map(space.t0, space.tf);
  const CollocationGrid& g = lgl_grid(integration_nodes);
  const int M = g.node_count;
  VectorXd times(M);
  for (int j = 0; j < M; ++j) times[j] = map.to_time(g.nodes[j]);

  auto simulate = [&](const VectorXd& coeffs) {
    OdeRhs rhs = [&](double tt, const VectorXd& x) {
      VectorXd u(1);
      u[0] = coeffs.dot(space.basis(tt));
      return model.rhs(tt, x, u, params);
    };
    return integrate_at(rhs, x0, times);
  };
  auto estimands = [&](const MatrixXd& X, const VectorXd& coeffs) {
    MatrixXd Z(model.n_z, M);
    for (int j = 0; j < M; ++j) {
      VectorXd u(1);
      u[0] = coeffs.dot(space.basis(times[j]));
      Z.col(j) = model.estimand(times[j], X.col(j), u, params);
    }
    return Z;
  };

  const double T = space.tf - space.t0;
  std::vector<MatrixXd> dZ(d);
  for (int i = 0; i < d; ++i) {
    VectorXd c = VectorXd::Zero(d);
    c[i] = sigma;
    const MatrixXd Zp = estimands(simulate(c), c);
    const MatrixXd Zm = estimands(simulate(-c), -c);
    dZ[i] = (Zp - Zm) / (2.0 * sigma);
  }

  MatrixXd Gz(d, d);
  for (int i = 0; i < d; ++i)
    for (int k = i; k < d; ++k) {
      double acc = 0.0;
      for (int j = 0; j < M; ++j)
        acc += g.weights[j] * dZ[i].col(j).dot(dZ[k].col(j));
      Gz(i, k) = Gz(k, i) = map.scale() * acc / T;
    }
  if (!Gz.allFinite())
    throw EvaluationError("gramian_gain: non-finite sensitivity gramian");

  const MatrixXd Gw = space.gram();
  const VectorXd diag = Gw.diagonal();
  if (diag.minCoeff() <= 1e-12 * std::max(diag.maxCoeff(), 1.0))
    throw IllConditionedBasisError(
        "gramian_gain: disturbance-basis gramian is numerically singular");
  const VectorXd isqrt = diag.cwiseSqrt().cwiseInverse();
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(
      isqrt.asDiagonal() * Gz * isqrt.asDiagonal());
  const int top = d - 1;
  const double lam = std::max(0.0, es.eigenvalues()[top]);
  VectorXd c_star = sigma * (isqrt.asDiagonal() * es.eigenvectors().col(top));

  MeasureReport rep;
  rep.measure_kind = MeasureKind::gramian_gain;
  rep.value = std::sqrt(lam);
  rep.sensitivity_ratio = rep.value;
  rep.deviation_norm = rep.value * sigma;
  rep.lower_bound_flag = false;
  rep.note = "linearized (gramian) estimate; not a certified bound";

  Trajectory worst;
  worst.grid = &g;
  worst.map = map;
  worst.states = simulate(c_star);
  worst.controls.resize(1, M);
  for (int j = 0; j < M; ++j)
    worst.controls(0, j) = c_star.dot(space.basis(times[j]));
  worst.params = params;
  rep.worst_trajectory = worst;

  Trajectory nominal = worst;
  nominal.states = simulate(VectorXd::Zero(d));
  nominal.controls.setZero();
  rep.nominal_trajectory = nominal;
  return rep;
}

MeasureReport control_ambiguity(const DynamicsModel& model, const VectorXd& x0,
                                const VectorXd& x1, const VectorXd& xw,
                                const TimeMap& horizon,
                                const CollocationGrid& grid,
                                const ConstraintExtras& extras,
                                const MeasureOptions& opt) {
  if (x0.size() != model.n_x || x1.size() != model.n_x ||
      xw.size() != model.n_x)
    throw std::invalid_argument("control_ambiguity: state dimension mismatch");
  if (extras.state_bounds &&
      ((x0.array() < extras.state_bounds->first.array()).any() ||
       (x0.array() > extras.state_bounds->second.array()).any()))
    throw std::invalid_argument(
        "control_ambiguity: x0 violates the state path constraints");
  const Trajectory nominal =
      propagate_nominal(model, x0, model.nominal_params, grid, horizon);
  Transcription tr(model, grid, horizon, nominal,
                   opt.initial_dev_scale > 0 ? opt.initial_dev_scale : 1.0);
  tr.fix_initial_state();
  apply_extras(tr, extras);
  tr.set_terminal_miss_objective(x1, xw);
  StartSampler sampler{tr.nominal_decision(), 0.5, opt.seed};
  SolverOptions so = opt.nlp;
  so.feasibility_tol =
      std::max(so.feasibility_tol,
               1.5 * feasibility_floor(tr.nlp(), tr.nominal_decision()));
  NlpResult r =
      multistart_solve(tr.nlp(), std::max(1, opt.starts), sampler, so);
  if (r.status == NlpStatus::infeasible)
    throw std::runtime_error(
        "control_ambiguity: dynamics constraints could not be satisfied");

  const int M = grid.node_count;
  const Trajectory sol = tr.decode(r.solution);
  const double miss =
      (xw.asDiagonal() * (sol.states.col(M - 1) - x1)).norm();
  const double denom = (xw.asDiagonal() * x1).norm();

  MeasureReport rep;
  rep.measure_kind = MeasureKind::control_ambiguity;
  rep.value = miss;
  rep.sensitivity_ratio = denom < 1e-9 ? miss : miss / denom;
  rep.worst_trajectory = sol;
  rep.nominal_trajectory = nominal;
  rep.solver = r;
  rep.lower_bound_flag = false;  // an upper bound on the best achievable miss
  rep.terminal_residual = miss;
  rep.unreachable = miss > 1e-6 * (1.0 + denom);
  rep.resimulation_residual = resimulation_residual(model, sol);
  rep.constraint_margin =
      std::max(r.max_eq_violation, r.max_ineq_violation);
  return rep;
}

MeasureReport control_ambiguity_region(
    const DynamicsModel& model,
    const std::vector<std::pair<VectorXd, VectorXd>>& pairs,
    const VectorXd& xw, const TimeMap& horizon, const CollocationGrid& grid,
    const ConstraintExtras& extras, const MeasureOptions& opt) {
  if (pairs.empty())
    throw std::invalid_argument("control_ambiguity_region: no pairs given");
  MeasureReport worst;
  bool first = true;
  for (size_t i = 0; i < pairs.size(); ++i) {
    MeasureReport r = control_ambiguity(model, pairs[i].first, pairs[i].second,
                                        xw, horizon, grid, extras, opt);
    r.start_values.assign(1, r.value);
    if (first || r.value > worst.value) {
      first = false;
      r.note = "worst pair index " + std::to_string(i);
      worst = r;
    }
  }
  return worst;
}

MeasureReport control_cost(const DynamicsModel& model, const VectorXd& x0,
                           const VectorXd& x1, const VectorXd& xw,
                           const TimeMap& horizon, const CollocationGrid& grid,
                           const ConstraintExtras& extras,
                           const std::vector<double>& psi_schedule,
                           const MeasureOptions& opt) {
  if (model.n_u < 1)
    throw std::invalid_argument("control_cost: model has no control channel");
  if (!model.nominal_control)
    throw std::invalid_argument(
        "control_cost: the model's nominal control is the reference input");
  const std::vector<double> schedule =
      psi_schedule.empty() ? std::vector<double>{1e1, 1e2, 1e3, 1e4}
                           : psi_schedule;
  const Trajectory nominal =
      propagate_nominal(model, x0, model.nominal_params, grid, horizon);
  const double dev = opt.initial_dev_scale > 0 ? opt.initial_dev_scale : 1.0;

  // Penalty continuation: each stage rebuilds the problem with a stiffer
  // terminal weight and warm-starts from the previous stage's solution
  // (identical variable layout, so the decision vector carries over).
  std::unique_ptr<Transcription> tr;
  NlpResult r;
  VectorXd v;
  std::vector<double> stage_values;
  for (size_t stage = 0; stage < schedule.size(); ++stage) {
    tr = std::make_unique<Transcription>(model, grid, horizon, nominal, dev);
    tr->fix_initial_state();
    apply_extras(*tr, extras);
    tr->set_control_cost_objective(schedule[stage], x1, xw);
    SolverOptions so = opt.nlp;
    so.feasibility_tol =
        std::max(so.feasibility_tol,
                 1.5 * feasibility_floor(tr->nlp(), tr->nominal_decision()));
    if (stage == 0) {
      StartSampler sampler{tr->nominal_decision(), 0.5, opt.seed};
      r = multistart_solve(tr->nlp(), std::max(1, opt.starts), sampler, so);
    } else {
      r = solve(tr->nlp(), v, so);
    }
    v = r.solution;
    stage_values.push_back(r.objective_value);
  }

  const int M = grid.node_count;
  const Trajectory sol = tr->decode(v);
  TrajectoryMetric um;
  um.kind = TrajectoryMetric::Kind::L2;
  const double W = metric_value(um, sol.controls - nominal.controls, grid, horizon);
  const double miss = (xw.asDiagonal() * (sol.states.col(M - 1) - x1)).norm();
  const double denom = (xw.asDiagonal() * x1).norm();

  MeasureReport rep;
  rep.measure_kind = MeasureKind::control_cost;
  rep.value = W;
  rep.sensitivity_ratio = denom > 0 ? W / denom : W;
  rep.worst_trajectory = sol;
  rep.nominal_trajectory = nominal;
  rep.solver = r;
  rep.lower_bound_flag = false;  // an upper bound on the minimum effort
  rep.deviation_norm = W;
  rep.start_values = stage_values;
  rep.terminal_residual = miss;
  rep.unreachable = miss > 1e-6 * (1.0 + denom);
  if (rep.unreachable)
    rep.note = "terminal state not reached within tolerance; the target is "
               "unreachable under the given constraints";
  rep.resimulation_residual = resimulation_residual(model, sol);
  rep.constraint_margin =
      std::max(r.max_eq_violation, r.max_ineq_violation);
  return rep;
}

}  // namespace ambit
