#include "ambit/transcription.hpp"

#include <cmath>
#include <limits>

#include "ambit/integrate.hpp"

namespace ambit {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Snap a scale to the nearest power of two so that encode/decode round trips
// are exact (multiplying and dividing by a power of two is lossless).
double pow2_snap(double s) {
  if (!(s > 0.0)) return 1.0;
  return std::exp2(std::round(std::log2(s)));
}

VectorXd channel_weights(const TrajectoryMetric& m, int channels) {
  if (m.weights.size() == 0) return VectorXd::Ones(channels);
  if (m.weights.size() != channels)
    throw std::invalid_argument("metric: channel weight count mismatch");
  return m.weights;
}

}  // namespace

double metric_value(const TrajectoryMetric& metric, const MatrixXd& values,
                    const CollocationGrid& grid, const TimeMap& map) {
  const int nc = static_cast<int>(values.rows());
  const int M = static_cast<int>(values.cols());
  if (M != grid.node_count)
    throw std::invalid_argument("metric_value: node count mismatch");
  const VectorXd w = channel_weights(metric, nc);
  switch (metric.kind) {
    case TrajectoryMetric::Kind::L2: {
      double acc = 0.0;
      for (int j = 0; j < M; ++j) {
        double s = 0.0;
        for (int c = 0; c < nc; ++c) s += std::pow(w[c] * values(c, j), 2);
        acc += grid.weights[j] * s;
      }
      return std::sqrt(map.scale() * acc);
    }
    case TrajectoryMetric::Kind::Linf: {
      double m = 0.0;
      for (int j = 0; j < M; ++j)
        for (int c = 0; c < nc; ++c)
          m = std::max(m, std::abs(w[c] * values(c, j)));
      return m;
    }
    case TrajectoryMetric::Kind::initial_value_norm:
      return (w.asDiagonal() * values.col(0)).norm();
    case TrajectoryMetric::Kind::final_value_norm:
      return (w.asDiagonal() * values.col(M - 1)).norm();
  }
  return 0.0;
}

LinearRows encode_variation_constraint(const VectorXd& node_values, double V_max) {
  if (V_max < 0.0)
    throw std::invalid_argument("encode_variation_constraint: V_max >= 0");
  const int M = static_cast<int>(node_values.size());
  if (M < 2)
    throw std::invalid_argument("encode_variation_constraint: need >= 2 nodes");
  const int ns = M - 1;
  LinearRows rows;
  rows.A = MatrixXd::Zero(2 * ns + 1, M + ns);
  rows.b = VectorXd::Zero(2 * ns + 1);
  for (int k = 0; k < ns; ++k) {
    rows.A(2 * k, k + 1) = 1.0;
    rows.A(2 * k, k) = -1.0;
    rows.A(2 * k, M + k) = -1.0;
    rows.A(2 * k + 1, k + 1) = -1.0;
    rows.A(2 * k + 1, k) = 1.0;
    rows.A(2 * k + 1, M + k) = -1.0;
  }
  rows.A.row(2 * ns).segment(M, ns).setOnes();
  rows.b[2 * ns] = V_max;
  return rows;
}

Trajectory propagate_nominal(const DynamicsModel& model, const VectorXd& x0,
                             const VectorXd& params, const CollocationGrid& grid,
                             const TimeMap& map) {
  if (x0.size() != model.n_x)
    throw std::invalid_argument("propagate_nominal: x0 dimension mismatch");
  Trajectory t;
  t.grid = &grid;
  t.map = map;
  t.params = params;
  t.controls.resize(model.n_u, grid.node_count);
  for (int j = 0; j < grid.node_count; ++j) {
    const double tj = map.to_time(grid.nodes[j]);
    t.controls.col(j) = model.n_u
                            ? (model.nominal_control
                                   ? model.nominal_control(tj)
                                   : VectorXd::Zero(model.n_u).eval())
                            : VectorXd::Zero(0).eval();
  }
  VectorXd times(grid.node_count);
  for (int j = 0; j < grid.node_count; ++j) times[j] = map.to_time(grid.nodes[j]);
  auto rhs = [&](double tt, const VectorXd& x) {
    const VectorXd u = model.n_u ? (model.nominal_control
                                        ? model.nominal_control(tt)
                                        : VectorXd::Zero(model.n_u).eval())
                                 : VectorXd::Zero(0).eval();
    return model.rhs(tt, x, u, params);
  };
  t.states = integrate_at(rhs, x0, times);
  return t;
}

Transcription::Transcription(const DynamicsModel& model,
                             const CollocationGrid& grid, const TimeMap& map,
                             const Trajectory& nominal, double dev_scale)
    : model_(model),
      grid_(grid),
      map_(map),
      nominal_(nominal),
      dev_scale_(dev_scale),
      M_(grid.node_count) {
  if (nominal.states.rows() != model.n_x || nominal.states.cols() != M_)
    throw std::invalid_argument("transcribe: nominal state shape mismatch");
  if (model.n_u && (nominal.controls.rows() != model.n_u ||
                    nominal.controls.cols() != M_))
    throw std::invalid_argument("transcribe: nominal control shape mismatch");
  if (nominal.params.size() != model.n_p)
    throw std::invalid_argument("transcribe: nominal param count mismatch");
  if (!(dev_scale > 0.0))
    throw std::invalid_argument("transcribe: dev_scale must be positive");

  scale_x_.resize(model.n_x);
  for (int i = 0; i < model.n_x; ++i) {
    const double mag = nominal.states.row(i).cwiseAbs().maxCoeff();
    scale_x_[i] = pow2_snap(dev_scale * std::max(1.0, mag));
  }
  scale_u_.resize(model.n_u);
  for (int c = 0; c < model.n_u; ++c) {
    const double mag =
        model.n_u ? nominal.controls.row(c).cwiseAbs().maxCoeff() : 0.0;
    scale_u_[c] = pow2_snap(dev_scale * std::max(1.0, mag));
  }
  scale_p_.resize(model.n_p);
  for (int k = 0; k < model.n_p; ++k)
    scale_p_[k] = pow2_snap(dev_scale * std::max(1.0, std::abs(nominal.params[k])));

  // Nominal output / estimand tables.
  y_nom_.resize(model.n_y, M_);
  z_nom_.resize(model.n_z, M_);
  VectorXd u0 = VectorXd::Zero(model.n_u);
  for (int j = 0; j < M_; ++j) {
    const VectorXd uj = model.n_u ? nominal.controls.col(j).eval() : u0;
    if (model.n_y)
      y_nom_.col(j) = model.output(node_time(j), nominal.states.col(j), uj,
                                   nominal.params);
    if (model.n_z)
      z_nom_.col(j) = model.estimand(node_time(j), nominal.states.col(j), uj,
                                     nominal.params);
  }
}

double Transcription::node_time(int j) const {
  return map_.to_time(grid_.nodes[j]);
}

void Transcription::fix_initial_state() { pin_x0_ = nominal_.states.col(0); }

void Transcription::fix_initial_state_to(const VectorXd& x0) {
  if (x0.size() != model_.n_x)
    throw std::invalid_argument("fix_initial_state_to: dimension mismatch");
  pin_x0_ = x0;
}

void Transcription::add_output_tube(TrajectoryMetric::Kind kind,
                                    const VectorXd& eps) {
  if (eps.size() != model_.n_y)
    throw std::invalid_argument("add_output_tube: one bound per output channel");
  if (eps.minCoeff() <= 0.0)
    throw std::invalid_argument("add_output_tube: bounds must be positive");
  if (kind != TrajectoryMetric::Kind::L2 && kind != TrajectoryMetric::Kind::Linf)
    throw std::invalid_argument("add_output_tube: L2 or Linf only");
  tubes_.push_back({kind, eps});
}

void Transcription::add_initial_sphere(double radius) {
  if (!(radius > 0.0))
    throw std::invalid_argument("add_initial_sphere: radius must be positive");
  sphere_radius_ = radius;
}

void Transcription::set_state_bounds(const VectorXd& lo, const VectorXd& hi) {
  if (lo.size() != model_.n_x || hi.size() != model_.n_x)
    throw std::invalid_argument("set_state_bounds: dimension mismatch");
  state_lo_ = lo;
  state_hi_ = hi;
}

void Transcription::set_param_bounds(const VectorXd& lo, const VectorXd& hi) {
  if (lo.size() != model_.n_p || hi.size() != model_.n_p)
    throw std::invalid_argument("set_param_bounds: dimension mismatch");
  param_lo_ = lo;
  param_hi_ = hi;
}

void Transcription::add_param_quadratic(const std::vector<int>& idx,
                                        const MatrixXd& G, double bound) {
  if (G.rows() != static_cast<int>(idx.size()) || G.cols() != G.rows())
    throw std::invalid_argument("add_param_quadratic: G shape mismatch");
  if (!(bound > 0.0))
    throw std::invalid_argument("add_param_quadratic: bound must be positive");
  quads_.push_back({idx, G, bound});
}

void Transcription::add_variation_bound(int control_channel, double V_max) {
  if (control_channel < 0 || control_channel >= model_.n_u)
    throw std::invalid_argument("add_variation_bound: no such control channel");
  if (V_max < 0.0)
    throw std::invalid_argument("add_variation_bound: V_max >= 0");
  variations_.push_back({control_channel, V_max, -1});
}

void Transcription::set_metric_objective(Source source,
                                         const TrajectoryMetric& metric,
                                         Sense sense) {
  if (metric.kind == TrajectoryMetric::Kind::Linf && sense == Sense::maximize)
    throw std::invalid_argument(
        "set_metric_objective: maximize-Linf is handled by iterating linear "
        "objectives; see the measure drivers");
  obj_kind_ = ObjKind::metric;
  obj_source_ = source;
  obj_metric_ = metric;
  obj_sense_ = sense;
}

void Transcription::set_linear_objective(const MatrixXd& coeffs) {
  if (coeffs.rows() != model_.n_z || coeffs.cols() != M_)
    throw std::invalid_argument("set_linear_objective: coeffs must be n_z x M");
  obj_kind_ = ObjKind::linear;
  obj_coeffs_ = coeffs;
  obj_sense_ = Sense::maximize;
}

void Transcription::set_control_cost_objective(double psi, const VectorXd& x1,
                                               const VectorXd& xw) {
  if (x1.size() != model_.n_x || xw.size() != model_.n_x)
    throw std::invalid_argument("set_control_cost_objective: dim mismatch");
  obj_kind_ = ObjKind::control_cost;
  obj_psi_ = psi;
  obj_x1_ = x1;
  obj_xw_ = xw;
  obj_sense_ = Sense::minimize;
}

void Transcription::set_terminal_miss_objective(const VectorXd& x1,
                                                const VectorXd& xw) {
  if (x1.size() != model_.n_x || xw.size() != model_.n_x)
    throw std::invalid_argument("set_terminal_miss_objective: dim mismatch");
  obj_kind_ = ObjKind::terminal_miss;
  obj_x1_ = x1;
  obj_xw_ = xw;
  obj_sense_ = Sense::minimize;
}

Trajectory Transcription::decode(const VectorXd& v) const {
  Trajectory t;
  t.grid = &grid_;
  t.map = map_;
  t.states.resize(model_.n_x, M_);
  t.controls.resize(model_.n_u, M_);
  t.params.resize(model_.n_p);
  const int nX = model_.n_x * M_;
  const int nU = model_.n_u * M_;
  for (int i = 0; i < model_.n_x; ++i)
    for (int j = 0; j < M_; ++j)
      t.states(i, j) = nominal_.states(i, j) + scale_x_[i] * v[i * M_ + j];
  for (int c = 0; c < model_.n_u; ++c)
    for (int j = 0; j < M_; ++j)
      t.controls(c, j) = nominal_.controls(c, j) + scale_u_[c] * v[nX + c * M_ + j];
  for (int k = 0; k < model_.n_p; ++k)
    t.params[k] = nominal_.params[k] + scale_p_[k] * v[nX + nU + k];
  return t;
}

VectorXd Transcription::encode(const Trajectory& t) const {
  const int nX = model_.n_x * M_;
  const int nU = model_.n_u * M_;
  VectorXd v = VectorXd::Zero(nX + nU + model_.n_p + n_extra_);
  for (int i = 0; i < model_.n_x; ++i)
    for (int j = 0; j < M_; ++j)
      v[i * M_ + j] = (t.states(i, j) - nominal_.states(i, j)) / scale_x_[i];
  for (int c = 0; c < model_.n_u; ++c)
    for (int j = 0; j < M_; ++j)
      v[nX + c * M_ + j] = (t.controls(c, j) - nominal_.controls(c, j)) / scale_u_[c];
  for (int k = 0; k < model_.n_p; ++k)
    v[nX + nU + k] = (t.params[k] - nominal_.params[k]) / scale_p_[k];
  // Feasible slack values for variation bounds.
  for (const auto& var : variations_)
    if (var.slack_offset >= 0)
      for (int k = 0; k < M_ - 1; ++k)
        v[var.slack_offset + k] =
            std::abs(t.controls(var.channel, k + 1) - t.controls(var.channel, k));
  return v;
}

VectorXd Transcription::nominal_decision() {
  if (!built_) assemble();
  return encode(nominal_);
}

MatrixXd Transcription::estimand_deviation(const VectorXd& v) const {
  const Trajectory t = decode(v);
  MatrixXd dz(model_.n_z, M_);
  for (int j = 0; j < M_; ++j)
    dz.col(j) = model_.estimand(node_time(j), t.states.col(j),
                                model_.n_u ? t.controls.col(j).eval()
                                           : VectorXd::Zero(0).eval(),
                                t.params) -
                z_nom_.col(j);
  return dz;
}

MatrixXd Transcription::output_deviation(const VectorXd& v) const {
  const Trajectory t = decode(v);
  MatrixXd dy(model_.n_y, M_);
  for (int j = 0; j < M_; ++j)
    dy.col(j) = model_.output(node_time(j), t.states.col(j),
                              model_.n_u ? t.controls.col(j).eval()
                                         : VectorXd::Zero(0).eval(),
                              t.params) -
                y_nom_.col(j);
  return dy;
}

void Transcription::eval_node(int j, const VectorXd& x, const VectorXd& u,
                              const VectorXd& p, const DynamicsModel::Fn& fn,
                              int out_dim, VectorXd* val, MatrixXd* Jx,
                              MatrixXd* Ju, MatrixXd* Jp) const {
  const double t = node_time(j);
  if (val) *val = fn(t, x, u, p);
  const double step_floor = 1e-6;
  if (Jx) {
    Jx->resize(out_dim, x.size());
    VectorXd xp = x;
    for (int i = 0; i < x.size(); ++i) {
      const double h = step_floor * std::max(1.0, std::abs(x[i]));
      const double xi = x[i];
      xp[i] = xi + h;
      const VectorXd fp = fn(t, xp, u, p);
      xp[i] = xi - h;
      const VectorXd fm = fn(t, xp, u, p);
      xp[i] = xi;
      Jx->col(i) = (fp - fm) / (2.0 * h);
    }
  }
  if (Ju) {
    Ju->resize(out_dim, u.size());
    VectorXd up = u;
    for (int i = 0; i < u.size(); ++i) {
      const double h = step_floor * std::max(1.0, std::abs(u[i]));
      const double ui = u[i];
      up[i] = ui + h;
      const VectorXd fp = fn(t, x, up, p);
      up[i] = ui - h;
      const VectorXd fm = fn(t, x, up, p);
      up[i] = ui;
      Ju->col(i) = (fp - fm) / (2.0 * h);
    }
  }
  if (Jp) {
    Jp->resize(out_dim, p.size());
    VectorXd pp = p;
    for (int i = 0; i < p.size(); ++i) {
      const double h = step_floor * std::max(1.0, std::abs(p[i]));
      const double pi = p[i];
      pp[i] = pi + h;
      const VectorXd fp = fn(t, x, u, pp);
      pp[i] = pi - h;
      const VectorXd fm = fn(t, x, u, pp);
      pp[i] = pi;
      Jp->col(i) = (fp - fm) / (2.0 * h);
    }
  }
}

int Transcription::dim() {
  if (!built_) assemble();
  return nlp_.dim;
}

const NlpProblem& Transcription::nlp() {
  if (!built_) assemble();
  return nlp_;
}

void Transcription::assemble() {
  if (obj_kind_ == ObjKind::none)
    throw std::invalid_argument("transcribe: no objective configured");
  const int n_x = model_.n_x, n_u = model_.n_u, n_p = model_.n_p;
  const int M = M_;
  const int nX = n_x * M, nU = n_u * M;
  int dim = nX + nU + n_p;
  for (auto& var : variations_) {
    var.slack_offset = dim;
    dim += M - 1;
  }
  const bool epigraph = obj_kind_ == ObjKind::metric &&
                        obj_metric_.kind == TrajectoryMetric::Kind::Linf &&
                        obj_sense_ == Sense::minimize;
  if (epigraph) {
    epi_index_ = dim;
    dim += 1;
  }
  n_extra_ = dim - (nX + nU + n_p);

  // Constraint counts.
  int eq_dim = nX + (sphere_radius_ ? 1 : 0);
  int ineq_dim = 0;
  for (const auto& tube : tubes_)
    ineq_dim += (tube.kind == TrajectoryMetric::Kind::Linf) ? 2 * model_.n_y * M
                                                            : model_.n_y;
  ineq_dim += static_cast<int>(quads_.size());
  ineq_dim += static_cast<int>(variations_.size()) * (2 * (M - 1) + 1);
  int obj_channels = 0;
  switch (obj_source_) {
    case Source::estimand_deviation: obj_channels = model_.n_z; break;
    case Source::output_deviation: obj_channels = model_.n_y; break;
    case Source::control_deviation: obj_channels = n_u; break;
  }
  if (epigraph) ineq_dim += 2 * obj_channels * M;

  // Bounds.
  VectorXd lo = VectorXd::Constant(dim, -kInf);
  VectorXd hi = VectorXd::Constant(dim, kInf);
  if (pin_x0_) {
    for (int i = 0; i < n_x; ++i) {
      const double v = ((*pin_x0_)[i] - nominal_.states(i, 0)) / scale_x_[i];
      lo[i * M] = hi[i * M] = v;
    }
  }
  if (state_lo_.size()) {
    for (int i = 0; i < n_x; ++i)
      for (int j = 0; j < M; ++j) {
        const int id = i * M + j;
        if (std::isfinite(state_lo_[i]))
          lo[id] = std::max(lo[id],
                            (state_lo_[i] - nominal_.states(i, j)) / scale_x_[i]);
        if (std::isfinite(state_hi_[i]))
          hi[id] = std::min(hi[id],
                            (state_hi_[i] - nominal_.states(i, j)) / scale_x_[i]);
      }
  }
  if (param_lo_.size()) {
    for (int k = 0; k < n_p; ++k) {
      const int id = nX + nU + k;
      if (std::isfinite(param_lo_[k]))
        lo[id] = (param_lo_[k] - nominal_.params[k]) / scale_p_[k];
      if (std::isfinite(param_hi_[k]))
        hi[id] = (param_hi_[k] - nominal_.params[k]) / scale_p_[k];
    }
  }
  for (const auto& var : variations_)
    for (int k = 0; k < M - 1; ++k) lo[var.slack_offset + k] = 0.0;

  const double h = map_.scale();
  const VectorXd u_empty = VectorXd::Zero(0);

  // --- equality constraints (collocation defects + optional sphere) -------
  auto eq_fn = [this, n_x, n_u, M, h](const VectorXd& v) -> VectorXd {
    const Trajectory t = decode(v);
    const int ne = n_x * M + (sphere_radius_ ? 1 : 0);
    VectorXd r(ne);
    MatrixXd F(n_x, M);
    for (int j = 0; j < M; ++j)
      F.col(j) = model_.rhs(node_time(j), t.states.col(j),
                            n_u ? t.controls.col(j).eval() : VectorXd{},
                            t.params);
    for (int i = 0; i < n_x; ++i) {
      const VectorXd Xi = t.states.row(i).transpose();
      r.segment(i * M, M) =
          (grid_.diff_matrix * Xi - h * F.row(i).transpose()) / scale_x_[i];
    }
    if (sphere_radius_) {
      const double rad = *sphere_radius_;
      double s = (t.states.col(0) - nominal_.states.col(0)).squaredNorm();
      r[n_x * M] = s / (rad * rad) - 1.0;
    }
    return r;
  };

  auto eq_jac_fn = [this, n_x, n_u, n_p, M, nX, nU, h,
                    dim](const VectorXd& v) -> MatrixXd {
    const Trajectory t = decode(v);
    const int ne = n_x * M + (sphere_radius_ ? 1 : 0);
    MatrixXd J = MatrixXd::Zero(ne, dim);
    for (int j = 0; j < M; ++j) {
      MatrixXd A, B, E;
      const VectorXd uj = n_u ? t.controls.col(j).eval() : VectorXd{};
      eval_node(j, t.states.col(j), uj, t.params, model_.rhs, n_x, nullptr, &A,
                n_u ? &B : nullptr, n_p ? &E : nullptr);
      for (int i = 0; i < n_x; ++i) {
        const int row = i * M + j;
        for (int jp = 0; jp < M; ++jp)
          J(row, i * M + jp) += grid_.diff_matrix(j, jp);
        for (int i2 = 0; i2 < n_x; ++i2)
          J(row, i2 * M + j) -= h * A(i, i2) * scale_x_[i2] / scale_x_[i];
        for (int c = 0; c < n_u; ++c)
          J(row, nX + c * M + j) -= h * B(i, c) * scale_u_[c] / scale_x_[i];
        for (int k = 0; k < n_p; ++k)
          J(row, nX + nU + k) -= h * E(i, k) * scale_p_[k] / scale_x_[i];
      }
    }
    if (sphere_radius_) {
      const double rad = *sphere_radius_;
      for (int i = 0; i < n_x; ++i)
        J(n_x * M, i * M) = 2.0 * (t.states(i, 0) - nominal_.states(i, 0)) *
                            scale_x_[i] / (rad * rad);
    }
    return J;
  };

  // --- inequality constraints --------------------------------------------
  const int n_y = model_.n_y;
  auto ineq_fn = [this, n_u, n_y, M, h, ineq_dim, nX, nU, obj_channels,
                  epigraph](const VectorXd& v) -> VectorXd {
    VectorXd r(ineq_dim);
    int at = 0;
    MatrixXd dy;
    if (!tubes_.empty()) dy = output_deviation(v);
    for (const auto& tube : tubes_) {
      if (tube.kind == TrajectoryMetric::Kind::Linf) {
        for (int c = 0; c < n_y; ++c)
          for (int j = 0; j < M; ++j) {
            r[at++] = dy(c, j) / tube.eps[c] - 1.0;
            r[at++] = -dy(c, j) / tube.eps[c] - 1.0;
          }
      } else {
        for (int c = 0; c < n_y; ++c) {
          double q = 0.0;
          for (int j = 0; j < M; ++j)
            q += grid_.weights[j] * dy(c, j) * dy(c, j);
          r[at++] = h * q / (tube.eps[c] * tube.eps[c]) - 1.0;
        }
      }
    }
    const Trajectory t = decode(v);
    for (const auto& quad : quads_) {
      VectorXd sel(quad.idx.size());
      for (size_t i = 0; i < quad.idx.size(); ++i) sel[i] = t.params[quad.idx[i]];
      r[at++] = sel.dot(quad.G * sel) / (quad.bound * quad.bound) - 1.0;
    }
    for (const auto& var : variations_) {
      double sum = 0.0;
      for (int k = 0; k < M - 1; ++k) {
        const double du = t.controls(var.channel, k + 1) - t.controls(var.channel, k);
        const double s = v[var.slack_offset + k];
        r[at++] = du - s;
        r[at++] = -du - s;
        sum += s;
      }
      r[at++] = sum - var.V_max;
    }
    if (epigraph) {
      const MatrixXd dev = obj_source_ == Source::estimand_deviation
                               ? estimand_deviation(v)
                               : obj_source_ == Source::output_deviation
                                     ? output_deviation(v)
                                     : (t.controls - nominal_.controls).eval();
      const VectorXd w = channel_weights(obj_metric_, obj_channels);
      const double tt = v[epi_index_];
      for (int c = 0; c < obj_channels; ++c)
        for (int j = 0; j < M; ++j) {
          r[at++] = w[c] * dev(c, j) - tt;
          r[at++] = -w[c] * dev(c, j) - tt;
        }
    }
    (void)nU;
    (void)nX;
    (void)n_u;
    return r;
  };

  // Jacobian of the output deviation w.r.t. the decision vector.
  auto dy_jacobian = [this, n_u, n_p, M, nX, nU, dim](const Trajectory& t,
                                                      int j) -> MatrixXd {
    MatrixXd Cx, Cu, Cp;
    const VectorXd uj = n_u ? t.controls.col(j).eval() : VectorXd{};
    eval_node(j, t.states.col(j), uj, t.params, model_.output, model_.n_y,
              nullptr, &Cx, n_u ? &Cu : nullptr, n_p ? &Cp : nullptr);
    MatrixXd J = MatrixXd::Zero(model_.n_y, dim);
    for (int c = 0; c < model_.n_y; ++c) {
      for (int i = 0; i < model_.n_x; ++i)
        J(c, i * M + j) = Cx(c, i) * scale_x_[i];
      for (int cu = 0; cu < n_u; ++cu)
        J(c, nX + cu * M + j) = Cu(c, cu) * scale_u_[cu];
      for (int k = 0; k < n_p; ++k)
        J(c, nX + nU + k) = Cp(c, k) * scale_p_[k];
    }
    return J;
  };
  auto dz_jacobian = [this, n_u, n_p, M, nX, nU, dim](const Trajectory& t,
                                                      int j) -> MatrixXd {
    MatrixXd Zx, Zu, Zp;
    const VectorXd uj = n_u ? t.controls.col(j).eval() : VectorXd{};
    eval_node(j, t.states.col(j), uj, t.params, model_.estimand, model_.n_z,
              nullptr, &Zx, n_u ? &Zu : nullptr, n_p ? &Zp : nullptr);
    MatrixXd J = MatrixXd::Zero(model_.n_z, dim);
    for (int c = 0; c < model_.n_z; ++c) {
      for (int i = 0; i < model_.n_x; ++i)
        J(c, i * M + j) = Zx(c, i) * scale_x_[i];
      for (int cu = 0; cu < n_u; ++cu)
        J(c, nX + cu * M + j) = Zu(c, cu) * scale_u_[cu];
      for (int k = 0; k < n_p; ++k)
        J(c, nX + nU + k) = Zp(c, k) * scale_p_[k];
    }
    return J;
  };

  auto ineq_jac_fn = [this, n_u, n_y, M, h, ineq_dim, nX, nU, dim, obj_channels,
                      epigraph, dy_jacobian,
                      dz_jacobian](const VectorXd& v) -> MatrixXd {
    MatrixXd J = MatrixXd::Zero(ineq_dim, dim);
    const Trajectory t = decode(v);
    int at = 0;
    MatrixXd dy;
    std::vector<MatrixXd> dyJ;
    if (!tubes_.empty()) {
      dy = output_deviation(v);
      dyJ.reserve(M);
      for (int j = 0; j < M; ++j) dyJ.push_back(dy_jacobian(t, j));
    }
    for (const auto& tube : tubes_) {
      if (tube.kind == TrajectoryMetric::Kind::Linf) {
        for (int c = 0; c < n_y; ++c)
          for (int j = 0; j < M; ++j) {
            J.row(at++) = dyJ[j].row(c) / tube.eps[c];
            J.row(at++) = -dyJ[j].row(c) / tube.eps[c];
          }
      } else {
        for (int c = 0; c < n_y; ++c) {
          for (int j = 0; j < M; ++j)
            J.row(at) += (2.0 * h * grid_.weights[j] * dy(c, j) /
                          (tube.eps[c] * tube.eps[c])) *
                         dyJ[j].row(c);
          ++at;
        }
      }
    }
    for (const auto& quad : quads_) {
      VectorXd sel(quad.idx.size());
      for (size_t i = 0; i < quad.idx.size(); ++i) sel[i] = t.params[quad.idx[i]];
      const VectorXd g = 2.0 * (quad.G * sel) / (quad.bound * quad.bound);
      for (size_t i = 0; i < quad.idx.size(); ++i)
        J(at, nX + nU + quad.idx[i]) = g[i] * scale_p_[quad.idx[i]];
      ++at;
    }
    for (const auto& var : variations_) {
      const double su = scale_u_[var.channel];
      for (int k = 0; k < M - 1; ++k) {
        const int iu0 = nX + var.channel * M + k;
        const int iu1 = iu0 + 1;
        J(at, iu1) = su;
        J(at, iu0) = -su;
        J(at, var.slack_offset + k) = -1.0;
        ++at;
        J(at, iu1) = -su;
        J(at, iu0) = su;
        J(at, var.slack_offset + k) = -1.0;
        ++at;
      }
      for (int k = 0; k < M - 1; ++k) J(at, var.slack_offset + k) = 1.0;
      ++at;
    }
    if (epigraph) {
      const VectorXd w = channel_weights(obj_metric_, obj_channels);
      for (int j = 0; j < M; ++j) {
        MatrixXd devJ;
        if (obj_source_ == Source::estimand_deviation)
          devJ = dz_jacobian(t, j);
        else if (obj_source_ == Source::output_deviation)
          devJ = dy_jacobian(t, j);
        else {
          devJ = MatrixXd::Zero(n_u, dim);
          for (int c = 0; c < n_u; ++c)
            devJ(c, nX + c * M + j) = scale_u_[c];
        }
        for (int c = 0; c < obj_channels; ++c) {
          const int base = at + 2 * (c * M + j);
          J.row(base) = w[c] * devJ.row(c);
          J(base, epi_index_) = -1.0;
          J.row(base + 1) = -w[c] * devJ.row(c);
          J(base + 1, epi_index_) = -1.0;
        }
      }
      at += 2 * obj_channels * M;
    }
    return J;
  };

  // --- objective ----------------------------------------------------------
  const double smooth = 1e-10 * dev_scale_;
  auto deviation_of = [this, n_u](const VectorXd& v) -> MatrixXd {
    switch (obj_source_) {
      case Source::estimand_deviation: return estimand_deviation(v);
      case Source::output_deviation: return output_deviation(v);
      case Source::control_deviation: {
        const Trajectory t = decode(v);
        return n_u ? (t.controls - nominal_.controls).eval() : MatrixXd(0, M_);
      }
    }
    return {};
  };
  auto dev_jacobian = [this, n_u, M, nX, dim, dy_jacobian, dz_jacobian](
                          const Trajectory& t, int j) -> MatrixXd {
    switch (obj_source_) {
      case Source::estimand_deviation: return dz_jacobian(t, j);
      case Source::output_deviation: return dy_jacobian(t, j);
      case Source::control_deviation: {
        MatrixXd J = MatrixXd::Zero(n_u, dim);
        for (int c = 0; c < n_u; ++c) J(c, nX + c * M + j) = scale_u_[c];
        return J;
      }
    }
    return {};
  };

  std::function<double(const VectorXd&)> obj;
  std::function<VectorXd(const VectorXd&)> obj_grad;
  std::function<MatrixXd(const VectorXd&)> obj_curv;

  switch (obj_kind_) {
    case ObjKind::linear: {
      obj = [this, deviation_of](const VectorXd& v) {
        return (obj_coeffs_.array() * deviation_of(v).array()).sum();
      };
      obj_grad = [this, dev_jacobian, dim, M](const VectorXd& v) {
        const Trajectory t = decode(v);
        VectorXd g = VectorXd::Zero(dim);
        for (int j = 0; j < M; ++j)
          g.noalias() += dev_jacobian(t, j).transpose() * obj_coeffs_.col(j);
        return g;
      };
      break;
    }
    case ObjKind::metric: {
      if (epigraph) {
        obj = [this](const VectorXd& v) { return v[epi_index_]; };
        obj_grad = [this, dim](const VectorXd&) {
          VectorXd g = VectorXd::Zero(dim);
          g[epi_index_] = 1.0;
          return g;
        };
        break;
      }
      const TrajectoryMetric metric = obj_metric_;
      const VectorXd w = channel_weights(metric, obj_channels);
      obj = [this, deviation_of, metric, w, h, smooth, M](const VectorXd& v) {
        const MatrixXd dev = deviation_of(v);
        double q = 0.0;
        switch (metric.kind) {
          case TrajectoryMetric::Kind::L2:
            for (int j = 0; j < M; ++j)
              for (int c = 0; c < dev.rows(); ++c)
                q += h * grid_.weights[j] * std::pow(w[c] * dev(c, j), 2);
            break;
          case TrajectoryMetric::Kind::initial_value_norm:
            q = (w.asDiagonal() * dev.col(0)).squaredNorm();
            break;
          case TrajectoryMetric::Kind::final_value_norm:
            q = (w.asDiagonal() * dev.col(M - 1)).squaredNorm();
            break;
          default:
            break;
        }
        return std::sqrt(q + smooth * smooth);
      };
      obj_grad = [this, deviation_of, dev_jacobian, metric, w, h, smooth, M,
                  dim](const VectorXd& v) {
        const Trajectory t = decode(v);
        const MatrixXd dev = deviation_of(v);
        double q = 0.0;
        VectorXd g = VectorXd::Zero(dim);
        switch (metric.kind) {
          case TrajectoryMetric::Kind::L2:
            for (int j = 0; j < M; ++j) {
              const MatrixXd Jj = dev_jacobian(t, j);
              for (int c = 0; c < dev.rows(); ++c) {
                q += h * grid_.weights[j] * std::pow(w[c] * dev(c, j), 2);
                g.noalias() += (2.0 * h * grid_.weights[j] * w[c] * w[c] *
                                dev(c, j)) *
                               Jj.row(c).transpose();
              }
            }
            break;
          case TrajectoryMetric::Kind::initial_value_norm:
          case TrajectoryMetric::Kind::final_value_norm: {
            const int j = metric.kind == TrajectoryMetric::Kind::initial_value_norm
                              ? 0
                              : M - 1;
            const MatrixXd Jj = dev_jacobian(t, j);
            for (int c = 0; c < dev.rows(); ++c) {
              q += std::pow(w[c] * dev(c, j), 2);
              g.noalias() +=
                  (2.0 * w[c] * w[c] * dev(c, j)) * Jj.row(c).transpose();
            }
            break;
          }
          default:
            break;
        }
        const double val = std::sqrt(q + smooth * smooth);
        return (g / (2.0 * val)).eval();
      };
      // Gauss-Newton curvature of the sqrt-of-quadrature objective.
      obj_curv = [this, deviation_of, dev_jacobian, metric, w, h, smooth, M,
                  dim](const VectorXd& v) {
        const Trajectory t = decode(v);
        const MatrixXd dev = deviation_of(v);
        MatrixXd B = MatrixXd::Zero(dim, dim);
        double q = 0.0;
        switch (metric.kind) {
          case TrajectoryMetric::Kind::L2:
            for (int j = 0; j < M; ++j) {
              const MatrixXd Jj = dev_jacobian(t, j);
              for (int c = 0; c < dev.rows(); ++c) {
                q += h * grid_.weights[j] * std::pow(w[c] * dev(c, j), 2);
                B.noalias() += (h * grid_.weights[j] * w[c] * w[c]) *
                               (Jj.row(c).transpose() * Jj.row(c));
              }
            }
            break;
          case TrajectoryMetric::Kind::initial_value_norm:
          case TrajectoryMetric::Kind::final_value_norm: {
            const int j = metric.kind == TrajectoryMetric::Kind::initial_value_norm
                              ? 0
                              : M - 1;
            const MatrixXd Jj = dev_jacobian(t, j);
            for (int c = 0; c < dev.rows(); ++c) {
              q += std::pow(w[c] * dev(c, j), 2);
              B.noalias() +=
                  (w[c] * w[c]) * (Jj.row(c).transpose() * Jj.row(c));
            }
            break;
          }
          default:
            break;
        }
        return (B / std::sqrt(q + smooth * smooth)).eval();
      };
      break;
    }
    case ObjKind::control_cost:
    case ObjKind::terminal_miss: {
      const bool with_u = obj_kind_ == ObjKind::control_cost;
      const double psi = with_u ? obj_psi_ : 0.0;
      obj = [this, with_u, psi, h, smooth, M, n_u](const VectorXd& v) {
        const Trajectory t = decode(v);
        double val = 0.0;
        if (with_u) {
          double q = 0.0;
          for (int j = 0; j < M; ++j)
            for (int c = 0; c < n_u; ++c)
              q += h * grid_.weights[j] *
                   std::pow(t.controls(c, j) - nominal_.controls(c, j), 2);
          val += std::sqrt(q + smooth * smooth);
        }
        const double miss2 =
            (obj_xw_.asDiagonal() * (t.states.col(M - 1) - obj_x1_)).squaredNorm();
        val += (with_u ? psi : 1.0) * std::sqrt(miss2 + smooth * smooth);
        return val;
      };
      obj_grad = [this, with_u, psi, h, smooth, M, n_u, nX,
                  dim](const VectorXd& v) {
        const Trajectory t = decode(v);
        VectorXd g = VectorXd::Zero(dim);
        if (with_u) {
          double q = 0.0;
          for (int j = 0; j < M; ++j)
            for (int c = 0; c < n_u; ++c)
              q += h * grid_.weights[j] *
                   std::pow(t.controls(c, j) - nominal_.controls(c, j), 2);
          const double nu = std::sqrt(q + smooth * smooth);
          for (int j = 0; j < M; ++j)
            for (int c = 0; c < n_u; ++c)
              g[nX + c * M + j] += h * grid_.weights[j] *
                                   (t.controls(c, j) - nominal_.controls(c, j)) *
                                   scale_u_[c] / nu;
        }
        const VectorXd miss =
            obj_xw_.asDiagonal() * (t.states.col(M - 1) - obj_x1_);
        const double nm = std::sqrt(miss.squaredNorm() + smooth * smooth);
        for (int i = 0; i < model_.n_x; ++i)
          g[i * M + M - 1] +=
              (with_u ? psi : 1.0) * miss[i] * obj_xw_[i] * scale_x_[i] / nm;
        return g;
      };
      // Gauss-Newton curvature: diagonal control-energy block over the norm
      // plus the weighted terminal block over the miss norm.
      obj_curv = [this, with_u, psi, h, smooth, M, n_u, nX,
                  dim](const VectorXd& v) {
        const Trajectory t = decode(v);
        MatrixXd B = MatrixXd::Zero(dim, dim);
        if (with_u) {
          double q = 0.0;
          for (int j = 0; j < M; ++j)
            for (int c = 0; c < n_u; ++c)
              q += h * grid_.weights[j] *
                   std::pow(t.controls(c, j) - nominal_.controls(c, j), 2);
          const double nu = std::sqrt(q + smooth * smooth);
          for (int j = 0; j < M; ++j)
            for (int c = 0; c < n_u; ++c)
              B(nX + c * M + j, nX + c * M + j) +=
                  h * grid_.weights[j] * scale_u_[c] * scale_u_[c] / nu;
        }
        const VectorXd miss =
            obj_xw_.asDiagonal() * (t.states.col(M - 1) - obj_x1_);
        const double nm = std::sqrt(miss.squaredNorm() + smooth * smooth);
        for (int i = 0; i < model_.n_x; ++i)
          B(i * M + M - 1, i * M + M - 1) +=
              (with_u ? psi : 1.0) *
              std::pow(obj_xw_[i] * scale_x_[i], 2) / nm;
        return B;
      };
      break;
    }
    case ObjKind::none:
      break;
  }

  nlp_ = NlpProblem{};
  nlp_.dim = dim;
  nlp_.sense = obj_sense_;
  nlp_.objective = obj;
  nlp_.objective_grad = obj_grad;
  nlp_.objective_curvature = obj_curv;
  nlp_.eq = eq_fn;
  nlp_.eq_jac = eq_jac_fn;
  nlp_.eq_dim = eq_dim;
  if (ineq_dim) {
    nlp_.ineq = ineq_fn;
    nlp_.ineq_jac = ineq_jac_fn;
    nlp_.ineq_dim = ineq_dim;
  }
  nlp_.lower = lo;
  nlp_.upper = hi;
  // The defect rows are affine whenever the dynamics are; the optional
  // initial-sphere row is quadratic and disables the elimination.
  nlp_.eq_affine = model_.linear_dynamics && !sphere_radius_;
  (void)u_empty;
  built_ = true;
}

}  // namespace ambit
