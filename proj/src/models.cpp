#include "ambit/models.hpp"

#include <cmath>

#include "ambit/errors.hpp"

namespace ambit {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

double binomial(int n, int k) {
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return std::round(r);
}

}  // namespace

FourierControlSpace::FourierControlSpace(int k1_, int k2_, double t0_, double tf_)
    : k1(k1_), k2(k2_), t0(t0_), tf(tf_) {
  if (k1 < 0 || k2 < 0)
    throw std::invalid_argument("FourierControlSpace: frequencies >= 0");
  if (k1 == k2 && k1 != 0)
    throw std::invalid_argument("FourierControlSpace: k1 != k2 unless both 0");
  if (!(tf > t0)) throw std::invalid_argument("FourierControlSpace: tf > t0");
}

int FourierControlSpace::dim() const {
  if (k1 == 0 && k2 == 0) return 1;
  return (k1 == 0 ? 1 : 2) + (k2 == 0 ? 1 : 2);
}

VectorXd FourierControlSpace::basis(double t) const {
  const double T = tf - t0;
  VectorXd b(dim());
  int at = 0;
  for (int k : {k1, k2}) {
    if (k1 == 0 && k2 == 0 && at > 0) break;
    const double arg = 2.0 * M_PI * k * (t - t0) / T;
    b[at++] = std::cos(arg);
    if (k != 0) b[at++] = std::sin(arg);
  }
  return b;
}

double FourierControlSpace::evaluate(const VectorXd& coeffs, double t) const {
  if (coeffs.size() != dim())
    throw std::invalid_argument("FourierControlSpace: coefficient count");
  return coeffs.dot(basis(t));
}

MatrixXd FourierControlSpace::gram() const {
  // Exact for integer frequencies over the full horizon: the basis is
  // orthogonal with <1,1> = 1 and <cos,cos> = <sin,sin> = 1/2.
  VectorXd d(dim());
  int at = 0;
  for (int k : {k1, k2}) {
    if (k1 == 0 && k2 == 0 && at > 0) break;
    d[at++] = k == 0 ? 1.0 : 0.5;
    if (k != 0) d[at++] = 0.5;
  }
  return d.asDiagonal();
}

std::vector<ModelCatalogEntry> model_catalog() {
  return {
      {"chain", "linear companion-form chain, y = x1, z = full state"},
      {"vehicles", "three planar vehicles with linear following feedback"},
      {"laub-loomis", "seven-state enzymatic oscillator, unknown (k1,k6,k10)"},
      {"afm", "cantilever with tip-sample interaction, disturbance gain model"},
      {"heat-rod", "central-difference heat rod with boundary control"},
  };
}

DynamicsModel chain_system(int n) {
  if (n < 2 || n > 12)
    throw std::invalid_argument("chain_system: n must be in [2, 12]");
  MatrixXd A = MatrixXd::Zero(n, n);
  for (int i = 0; i < n - 1; ++i) A(i, i + 1) = 1.0;
  for (int i = 1; i <= n; ++i) A(n - 1, i - 1) = -binomial(n, i - 1);
  DynamicsModel m;
  m.name = "chain";
  m.n_x = n;
  m.n_u = 0;
  m.n_p = 0;
  m.n_y = 1;
  m.n_z = n;
  m.rhs = [A](double, const VectorXd& x, const VectorXd&, const VectorXd&) {
    return (A * x).eval();
  };
  m.output = [](double, const VectorXd& x, const VectorXd&, const VectorXd&) {
    return x.head(1).eval();
  };
  m.estimand = [](double, const VectorXd& x, const VectorXd&, const VectorXd&) {
    return x;
  };
  m.nominal_x0 = VectorXd::Zero(n);
  m.nominal_x0[n - 1] = 1.0;
  m.nominal_params = VectorXd(0);
  return m;
}

DynamicsModel vehicle_network(const VehicleParams& prm) {
  // State order: [p1, v1, p2, v2, p3, v3] for the x axis, then the same six
  // for the y axis.  Controls: leader accelerations (u1x, u1y).  Follower
  // accelerations come from the quoted feedback laws; the y axis uses the
  // same gains with zero separation offsets.
  DynamicsModel m;
  m.name = "vehicles";
  m.n_x = 12;
  m.n_u = 2;
  m.n_p = 0;
  m.n_y = 4;
  m.n_z = 4;
  m.rhs = [prm](double, const VectorXd& x, const VectorXd& u, const VectorXd&) {
    VectorXd dx(12);
    for (int axis = 0; axis < 2; ++axis) {
      const int o = 6 * axis;
      const double off1 = axis == 0 ? prm.d1 : 0.0;
      const double off2 = axis == 0 ? prm.d2 : 0.0;
      const double p1 = x[o + 0], v1 = x[o + 1];
      const double p2 = x[o + 2], v2 = x[o + 3];
      const double p3 = x[o + 4], v3 = x[o + 5];
      const double u2 = prm.a1 * (p2 - p1 - off1) + prm.a2 * (v2 - v1);
      const double u3 = prm.b1 * (p3 - (p1 + p2) / 2.0 - off2) +
                        prm.b2 * (v3 - (v1 + v2) / 2.0);
      dx[o + 0] = v1;
      dx[o + 1] = u[axis];
      dx[o + 2] = v2;
      dx[o + 3] = u2;
      dx[o + 4] = v3;
      dx[o + 5] = u3;
    }
    return dx;
  };
  m.output = [](double, const VectorXd& x, const VectorXd&, const VectorXd&) {
    VectorXd y(4);
    y << x[2], x[8], x[4], x[10];  // follower positions (x21, y21, x31, y31)
    return y;
  };
  m.estimand = [](double, const VectorXd& x, const VectorXd&, const VectorXd&) {
    VectorXd z(4);
    z << x[0], x[1], x[6], x[7];  // leader x-pos, x-vel, y-pos, y-vel
    return z;
  };
  m.nominal_x0 = VectorXd::Zero(12);
  m.nominal_x0 << 0.0, 4.0, prm.d1, 4.0, prm.d2, 4.0, 0, 0, 0, 0, 0, 0;
  m.nominal_params = VectorXd(0);
  const double T = prm.tf - prm.t0;
  m.nominal_control = [T](double t) {
    VectorXd u(2);
    // Half-sine leader input (total variation 2.0, consistent with the
    // stated bound); the literally quoted frequency is flagged separately.
    u << std::sin(M_PI * t / T), 0.0;
    return u;
  };
  return m;
}

double vehicle_nominal_variation_quoted() {
  const VehicleParams prm;
  const double T = prm.tf - prm.t0;
  const int K = 400000;
  double tv = 0.0, prev = std::sin(T * prm.t0 / M_PI);
  for (int k = 1; k <= K; ++k) {
    const double t = prm.t0 + T * k / K;
    const double v = std::sin(T * t / M_PI);
    tv += std::abs(v - prev);
    prev = v;
  }
  return tv;
}

VectorXd laub_loomis_nominal_k() {
  VectorXd k(14);
  k << 2.0, 0.9, 2.5, 1.5, 0.6, 0.8, 1.0, 1.3, 0.3, 0.8, 0.7, 4.9, 23.0, 4.5;
  return k;
}

DynamicsModel laub_loomis() {
  const VectorXd kn = laub_loomis_nominal_k();
  DynamicsModel m;
  m.name = "laub-loomis";
  m.n_x = 7;
  m.n_u = 0;
  m.n_p = 3;  // (k1, k6, k10); all other rates stay nominal
  m.n_y = 1;
  m.n_z = 3;
  m.rhs = [kn](double, const VectorXd& x, const VectorXd&, const VectorXd& p) {
    const double k1 = p[0], k6 = p[1], k10 = p[2];
    VectorXd dx(7);
    dx[0] = k1 * x[6] - kn[1] * x[0] * x[1];
    dx[1] = kn[2] * x[4] - kn[3] * x[1];
    dx[2] = kn[4] * x[6] - k6 * x[1] * x[2];
    dx[3] = kn[6] - kn[7] * x[2] * x[3];
    dx[4] = kn[8] * x[0] - k10 * x[3] * x[4];
    dx[5] = kn[10] * x[0] - kn[11] * x[5];
    dx[6] = kn[12] * x[5] - kn[13] * x[6];
    return dx;
  };
  m.output = [](double, const VectorXd& x, const VectorXd&, const VectorXd&) {
    return x.head(1).eval();
  };
  m.estimand = [](double, const VectorXd&, const VectorXd&, const VectorXd& p) {
    return p;
  };
  m.nominal_x0.resize(7);
  m.nominal_x0 << 1.9675, 1.2822, 0.6594, 1.1967, 0.6712, 0.2711, 1.3428;
  m.nominal_params.resize(3);
  m.nominal_params << kn[0], kn[5], kn[9];
  return m;
}

DynamicsModel afm(const AfmParams& prm) {
  DynamicsModel m;
  m.name = "afm";
  m.n_x = 2;
  m.n_u = 1;  // actuator disturbance w
  m.n_p = 1;  // tip-sample gap delta
  m.n_y = 1;
  m.n_z = 1;
  m.rhs = [prm](double, const VectorXd& x, const VectorXd& u, const VectorXd& p) {
    const double gap = p[0] + x[0];
    if (gap <= 1e-6)
      throw EvaluationError("afm: tip-sample gap collapsed (delta + x1 <= 1e-6)");
    const double g2 = gap * gap;
    const double g8 = g2 * g2 * g2 * g2;
    const double h = -prm.alpha1 / g2 + prm.alpha2 / g8;
    VectorXd dx(2);
    dx[0] = x[1];
    dx[1] = -prm.omega * prm.omega * x[0] - 2.0 * prm.xi * prm.omega * x[1] + h +
            prm.u + u[0];
    return dx;
  };
  m.output = [](double, const VectorXd& x, const VectorXd&, const VectorXd&) {
    return x.head(1).eval();
  };
  m.estimand = m.output;
  m.nominal_x0 = VectorXd::Zero(2);
  m.nominal_params = VectorXd::Ones(1);
  m.nominal_control = [](double) { return VectorXd::Zero(1); };
  return m;
}

DynamicsModel heat_rod(int N, double kappa) {
  if (N < 3) throw std::invalid_argument("heat_rod: N >= 3");
  const double dr = 2.0 * M_PI / N;
  DynamicsModel m;
  m.name = "heat-rod";
  m.n_x = N;
  m.n_u = 1;  // v = dx_N/dt, the direct boundary control channel
  m.n_p = 0;
  m.n_y = N;
  m.n_z = N;
  m.rhs = [N, kappa, dr](double, const VectorXd& x, const VectorXd& u,
                         const VectorXd&) {
    VectorXd dx(N);
    const double c = kappa / (dr * dr);
    dx[0] = c * (x[1] - 2.0 * x[0]);  // left end: w(0, t) = 0
    for (int i = 1; i < N - 1; ++i)
      dx[i] = c * (x[i - 1] + x[i + 1] - 2.0 * x[i]);
    dx[N - 1] = u[0];
    return dx;
  };
  m.output = [](double, const VectorXd& x, const VectorXd&, const VectorXd&) {
    return x;
  };
  m.estimand = m.output;
  m.nominal_x0 = VectorXd::Zero(N);
  m.nominal_params = VectorXd(0);
  m.nominal_control = [](double) { return VectorXd::Zero(1); };
  return m;
}

VectorXd heat_rod_target(int N, double A) {
  const double dr = 2.0 * M_PI / N;
  VectorXd w(N);
  for (int i = 0; i < N; ++i) w[i] = A * std::sin((i + 1) * dr / 2.0);
  return w;
}

VectorXd heat_rod_norm_weights(int N) {
  const double dr = 2.0 * M_PI / N;
  return VectorXd::Constant(N, std::sqrt(dr));
}

}  // namespace ambit
