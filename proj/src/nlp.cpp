#include "ambit/nlp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <cstdio>
#include <cstdlib>
#include <vector>

namespace ambit {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double fd_step(double xi) { return std::max(1e-6, 1e-7 * std::abs(xi)); }

VectorXd fd_gradient(const std::function<double(const VectorXd&)>& f,
                     const VectorXd& x) {
  VectorXd g(x.size());
  VectorXd xp = x;
  for (int i = 0; i < x.size(); ++i) {
    const double h = fd_step(x[i]);
    const double xi = x[i];
    xp[i] = xi + h;
    const double fp = f(xp);
    xp[i] = xi - h;
    const double fm = f(xp);
    xp[i] = xi;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

MatrixXd fd_jacobian(const std::function<VectorXd(const VectorXd&)>& c, int m,
                     const VectorXd& x) {
  MatrixXd J(m, x.size());
  VectorXd xp = x;
  for (int i = 0; i < x.size(); ++i) {
    const double h = fd_step(x[i]);
    const double xi = x[i];
    xp[i] = xi + h;
    const VectorXd cp = c(xp);
    xp[i] = xi - h;
    const VectorXd cm = c(xp);
    xp[i] = xi;
    J.col(i) = (cp - cm) / (2.0 * h);
  }
  return J;
}

VectorXd clamp_to_box(VectorXd x, const VectorXd& lo, const VectorXd& hi) {
  if (lo.size()) x = x.cwiseMax(lo);
  if (hi.size()) x = x.cwiseMin(hi);
  return x;
}

struct InnerOutcome {
  VectorXd x;
  double phi = 0.0;
  double pg_norm = 0.0;
  int iterations = 0;
};

// Bound-constrained BFGS (inverse-Hessian form) with Armijo backtracking and
// an active-set projection: components pinned against a bound with an
// outward-pushing gradient are frozen, and the BFGS memory is reset whenever
// the active set changes.
InnerOutcome inner_minimize(const std::function<double(const VectorXd&)>& phi,
                            const std::function<VectorXd(const VectorXd&)>& dphi,
                            VectorXd x, const VectorXd& lo, const VectorXd& hi,
                            double omega, int max_inner,
                            const std::function<void(int, double)>& trace,
                            int outer) {
  const int n = static_cast<int>(x.size());
  const double kActiveTol = 1e-12;
  MatrixXd H = MatrixXd::Identity(n, n);
  bool h_fresh = true;

  auto active_mask = [&](const VectorXd& xv, const VectorXd& g) {
    std::vector<bool> a(n, false);
    for (int i = 0; i < n; ++i) {
      const double l = lo.size() ? lo[i] : -std::numeric_limits<double>::infinity();
      const double u = hi.size() ? hi[i] : std::numeric_limits<double>::infinity();
      if (l == u || (xv[i] <= l + kActiveTol && g[i] > 0.0) ||
          (xv[i] >= u - kActiveTol && g[i] < 0.0))
        a[i] = true;
    }
    return a;
  };

  double f = phi(x);
  VectorXd g = dphi(x);
  std::vector<bool> act = active_mask(x, g);
  InnerOutcome out;
  out.iterations = 0;
  if (trace) trace(outer, f);

  for (int it = 0; it < max_inner; ++it) {
    VectorXd geff = g;
    for (int i = 0; i < n; ++i)
      if (act[i]) geff[i] = 0.0;
    out.pg_norm = geff.size() ? geff.cwiseAbs().maxCoeff() : 0.0;
    if (out.pg_norm <= omega) break;

    VectorXd d = -(H * geff);
    for (int i = 0; i < n; ++i)
      if (act[i]) d[i] = 0.0;
    double slope = g.dot(d);
    if (!(slope < 0.0)) {
      H.setIdentity();
      h_fresh = true;
      d = -geff;
      slope = g.dot(d);
      if (!(slope < 0.0)) break;
    }

    // Armijo backtracking on box-projected trial points.
    double alpha = 1.0;
    VectorXd xn;
    double fn = f;
    bool accepted = false;
    for (int ls = 0; ls < 50; ++ls) {
      xn = clamp_to_box(x + alpha * d, lo, hi);
      fn = phi(xn);
      const double pred = g.dot(xn - x);
      if (std::isfinite(fn) && fn <= f + 1e-4 * pred && pred < 0.0) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
      if (alpha < 1e-16) break;
    }
    if (!accepted) break;

    VectorXd gn = dphi(xn);
    const VectorXd s = xn - x;
    std::vector<bool> act_new = active_mask(xn, gn);
    if (act_new != act) {
      H.setIdentity();
      h_fresh = true;
    } else {
      VectorXd y = gn - g;
      for (int i = 0; i < n; ++i)
        if (act[i]) y[i] = 0.0;
      VectorXd sf = s;
      for (int i = 0; i < n; ++i)
        if (act[i]) sf[i] = 0.0;
      const double sy = sf.dot(y);
      if (sy > 1e-12 * sf.norm() * y.norm() && sy > 0.0) {
        if (h_fresh) {
          H *= sy / y.squaredNorm();
          h_fresh = false;
        }
        const VectorXd Hy = H * y;
        const double r = 1.0 / sy;
        H.noalias() -= r * (Hy * sf.transpose() + sf * Hy.transpose());
        H.noalias() += (r * r * (y.dot(Hy)) + r) * (sf * sf.transpose());
      }
    }
    x = xn;
    f = fn;
    g = gn;
    act = act_new;
    ++out.iterations;
    if (trace) trace(outer, f);
  }
  // Recompute the projected gradient at the final point.
  VectorXd geff = g;
  for (int i = 0; i < n; ++i)
    if (act[i]) geff[i] = 0.0;
  out.pg_norm = geff.size() ? geff.cwiseAbs().maxCoeff() : 0.0;
  out.x = x;
  out.phi = f;
  return out;
}

// Projected Levenberg-damped Gauss-Newton for augmented-Lagrangian inner
// problems with analytic constraint Jacobians.  The model Hessian is the
// Gauss-Newton term rho * J^T J of the penalty (equalities plus active
// inequalities); adaptive damping covers the missing objective curvature and
// constraint second derivatives.  Components pinned against a bound with an
// outward-pushing gradient are frozen out of the Newton system.
InnerOutcome inner_minimize_gn(
    const std::function<double(const VectorXd&)>& phi,
    const std::function<VectorXd(const VectorXd&)>& dphi,
    const std::function<MatrixXd(const VectorXd&)>& model_hess, VectorXd x,
    const VectorXd& lo, const VectorXd& hi, double omega, int max_inner,
    const std::function<void(int, double)>& trace, int outer) {
  const int n = static_cast<int>(x.size());
  const double kActiveTol = 1e-12;

  auto active_mask = [&](const VectorXd& xv, const VectorXd& g) {
    std::vector<bool> a(n, false);
    for (int i = 0; i < n; ++i) {
      const double l = lo.size() ? lo[i] : -std::numeric_limits<double>::infinity();
      const double u = hi.size() ? hi[i] : std::numeric_limits<double>::infinity();
      if (l == u || (xv[i] <= l + kActiveTol && g[i] > 0.0) ||
          (xv[i] >= u - kActiveTol && g[i] < 0.0))
        a[i] = true;
    }
    return a;
  };

  double f = phi(x);
  VectorXd g = dphi(x);
  std::vector<bool> act = active_mask(x, g);
  double nu = 1e-8;
  int flat = 0;
  double total_drop = 0.0;
  // Near-null ("soft") subspace of the model Hessian.  On collocation
  // problems the square defect Jacobian is nearly singular along the
  // trajectory manifold (one direction per free initial-condition degree of
  // freedom), so the Gauss-Newton model has negligible curvature there and
  // Levenberg damping throttles exactly the steps that move the objective.
  // A dedicated line search along the soft component of the gradient makes
  // that progress directly.
  MatrixXd soft_basis;           // columns: soft eigenvectors (free coords)
  std::vector<int> soft_free;    // free-index map the basis was built for
  int soft_age = 1 << 20;
  InnerOutcome out;
  out.iterations = 0;
  if (trace) trace(outer, f);

  for (int it = 0; it < max_inner; ++it) {
    VectorXd geff = g;
    for (int i = 0; i < n; ++i)
      if (act[i]) geff[i] = 0.0;
    out.pg_norm = geff.size() ? geff.cwiseAbs().maxCoeff() : 0.0;
    if (out.pg_norm <= omega) break;

    std::vector<int> free_idx;
    free_idx.reserve(n);
    for (int i = 0; i < n; ++i)
      if (!act[i]) free_idx.push_back(i);
    const int nf = static_cast<int>(free_idx.size());
    if (nf == 0) break;

    const MatrixXd B = model_hess(x);
    MatrixXd Bf(nf, nf);
    VectorXd gf(nf);
    for (int a = 0; a < nf; ++a) {
      gf[a] = g[free_idx[a]];
      for (int b = 0; b < nf; ++b) Bf(a, b) = B(free_idx[a], free_idx[b]);
    }
    const double diag_scale = std::max(1.0, Bf.diagonal().cwiseAbs().maxCoeff());

    bool accepted = false;
    VectorXd xn;
    double fn = f;
    for (int attempt = 0; attempt < 25 && !accepted; ++attempt) {
      MatrixXd Bd = Bf;
      Bd.diagonal().array() += nu * diag_scale;
      Eigen::LDLT<MatrixXd> ldlt(Bd);
      VectorXd df = -ldlt.solve(gf);
      VectorXd d = VectorXd::Zero(n);
      for (int a = 0; a < nf; ++a) d[free_idx[a]] = df[a];
      if (!d.allFinite() || !(g.dot(d) < 0.0)) {
        nu = std::max(nu * 100.0, 1e-8);
        continue;
      }
      // Short Armijo backtrack; on failure inflate the damping and re-solve
      // rather than shrinking the step toward a bad direction.
      double alpha = 1.0;
      for (int ls = 0; ls < 8; ++ls) {
        xn = clamp_to_box(x + alpha * d, lo, hi);
        fn = phi(xn);
        const double pred = g.dot(xn - x);
        if (std::isfinite(fn) && pred < 0.0 && fn <= f + 1e-4 * pred) {
          accepted = true;
          break;
        }
        alpha *= 0.25;
      }
      if (!accepted) nu = std::max(nu * 100.0, 1e-8);
    }

    VectorXd xs = accepted ? xn : x;
    double fs = accepted ? fn : f;
    VectorXd gs = accepted ? dphi(xs) : g;

    const bool gn_stalled =
        !accepted || f - fs <= 1e-6 * std::max(total_drop, 1e-300);

    // Refresh the soft basis from the current free-space model Hessian.
    if (gn_stalled && (soft_age >= 20 || soft_free != free_idx)) {
      soft_basis.resize(0, 0);
      soft_free = free_idx;
      soft_age = 0;
      Eigen::SelfAdjointEigenSolver<MatrixXd> es(Bf);
      if (es.info() == Eigen::Success && nf > 0) {
        const double emax = std::max(es.eigenvalues().cwiseAbs().maxCoeff(), 1e-300);
        int ns = 0;
        while (ns < nf && ns < 40 && es.eigenvalues()[ns] <= 1e-9 * emax) ++ns;
        if (ns > 0) soft_basis = es.eigenvectors().leftCols(ns);
      }
    }
    ++soft_age;

    // Minimize the merit over the soft subspace (a low-dimensional
    // quasi-Newton solve with finite-difference gradients): progress there is
    // invisible to the damped Gauss-Newton step and amounts to sliding along
    // the constraint surface.  It is much more expensive per iteration than a
    // Gauss-Newton step, so only engage it once the Gauss-Newton step fails
    // or its merit decrease has become negligible.
    bool soft_ok = false;
    const int ns = gn_stalled ? static_cast<int>(soft_basis.cols()) : 0;
    if (ns > 0) {
      auto lift = [&](const VectorXd& a) {
        VectorXd xt = xs;
        const VectorXd da = soft_basis * a;
        for (int k = 0; k < nf; ++k) xt[free_idx[k]] += da[k];
        return clamp_to_box(xt, lo, hi);
      };
      auto psi = [&](const VectorXd& a) { return phi(lift(a)); };
      const double h = 1e-7 * std::max(1.0, xs.norm());
      auto psi_grad = [&](const VectorXd& a, double fa) {
        VectorXd gr(ns);
        VectorXd ap = a;
        for (int k = 0; k < ns; ++k) {
          ap[k] = a[k] + h;
          gr[k] = (psi(ap) - fa) / h;
          ap[k] = a[k];
        }
        return gr;
      };
      VectorXd a = VectorXd::Zero(ns);
      double fa = fs;
      MatrixXd Hs = MatrixXd::Identity(ns, ns);
      VectorXd ga = psi_grad(a, fa);
      for (int sit = 0; sit < 30; ++sit) {
        VectorXd d = -(Hs * ga);
        double slope = ga.dot(d);
        if (!(slope < 0.0)) {
          Hs.setIdentity();
          d = -ga;
          slope = ga.dot(d);
          if (!(slope < 0.0)) break;
        }
        double alpha = 1.0;
        bool ok = false;
        VectorXd an;
        double fn2 = fa;
        for (int ls = 0; ls < 25; ++ls) {
          an = a + alpha * d;
          fn2 = psi(an);
          if (std::isfinite(fn2) && fn2 <= fa + 1e-4 * alpha * slope) {
            ok = true;
            break;
          }
          alpha *= 0.5;
        }
        if (!ok) break;
        const VectorXd gn2 = psi_grad(an, fn2);
        const VectorXd sv = an - a, yv = gn2 - ga;
        const double sy = sv.dot(yv);
        if (sy > 1e-12 * sv.norm() * yv.norm()) {
          const VectorXd Hy = Hs * yv;
          const double r = 1.0 / sy;
          Hs.noalias() -= r * (Hy * sv.transpose() + sv * Hy.transpose());
          Hs.noalias() += (r * r * yv.dot(Hy) + r) * (sv * sv.transpose());
        }
        a = an;
        fa = fn2;
        ga = gn2;
      }
      if (fa < fs - 1e-15 * (1.0 + std::abs(fs))) {
        xs = lift(a);
        fs = fa;
        gs = dphi(xs);
        soft_ok = true;
      }
    }
    if (!accepted && !soft_ok) break;

    // Merit stagnation: once decreases shrink to a negligible fraction of
    // the total decrease achieved so far, further iterations cannot reach a
    // tighter stationarity target; stop burning the budget.
    total_drop += f - fs;
    if (it >= 5 && f - fs <= 1e-7 * total_drop) {
      if (++flat >= 3) {
        x = xs;
        f = fs;
        g = gs;
        act = active_mask(x, g);
        break;
      }
    } else {
      flat = 0;
    }

    x = xs;
    f = fs;
    g = gs;
    act = active_mask(x, g);
    if (accepted) nu = std::max(nu * 0.1, 1e-12);
    ++out.iterations;
    if (trace) trace(outer, f);
  }
  VectorXd geff = g;
  for (int i = 0; i < n; ++i)
    if (act[i]) geff[i] = 0.0;
  out.pg_norm = geff.size() ? geff.cwiseAbs().maxCoeff() : 0.0;
  out.x = x;
  out.phi = f;
  return out;
}

}  // namespace

double feasibility_floor(const NlpProblem& problem, const Eigen::VectorXd& x0,
                         int max_steps) {
  if (!problem.eq || !problem.eq_jac || problem.eq_dim == 0) return 0.0;
  VectorXd x = clamp_to_box(x0, problem.lower, problem.upper);
  VectorXd c = problem.eq(x);
  if (!c.allFinite()) return std::numeric_limits<double>::infinity();
  for (int it = 0; it < max_steps; ++it) {
    const MatrixXd J = problem.eq_jac(x);
    MatrixXd JJt = J * J.transpose();
    const double base =
        1e-12 * std::max(1.0, JJt.diagonal().cwiseAbs().maxCoeff());
    const double step_cap = 0.1 * std::max(1.0, x.norm());
    VectorXd step;
    double damp = base;
    for (int t = 0; t < 40; ++t) {
      MatrixXd Jd = JJt;
      Jd.diagonal().array() += damp;
      step = -J.transpose() * Jd.ldlt().solve(c);
      if (step.allFinite() && step.norm() <= step_cap) break;
      damp *= 10.0;
    }
    if (!step.allFinite() || step.norm() > step_cap) break;
    const double cn = c.norm();
    double alpha = 1.0;
    bool ok = false;
    for (int ls = 0; ls < 8; ++ls) {
      const VectorXd xt =
          clamp_to_box(x + alpha * step, problem.lower, problem.upper);
      const VectorXd ct = problem.eq(xt);
      if (ct.allFinite() && ct.norm() < cn * (1.0 - 1e-4 * alpha)) {
        x = xt;
        c = ct;
        ok = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!ok) break;
  }
  return c.cwiseAbs().maxCoeff();
}

VectorXd StartSampler::sample(int index) const {
  if (index == 0) return nominal;
  std::mt19937_64 rng(splitmix64(seed + 0x9E3779B97F4A7C15ULL * index));
  std::normal_distribution<double> gauss(0.0, 1.0);
  VectorXd p = nominal;
  for (int i = 0; i < p.size(); ++i) p[i] += radius * gauss(rng);
  return p;
}

NlpResult solve(const NlpProblem& problem, const Eigen::VectorXd& initial_guess,
                const SolverOptions& options) {
  if (initial_guess.size() != problem.dim)
    throw std::invalid_argument("solve: initial guess dimension mismatch");
  if (problem.lower.size() && problem.upper.size() &&
      (problem.upper - problem.lower).minCoeff() < 0.0)
    throw std::invalid_argument("solve: lower > upper bound");

  const bool maximize = problem.sense == Sense::maximize;
  auto fobj = [&](const VectorXd& x) {
    const double v = problem.objective(x);
    return maximize ? -v : v;
  };
  const int me = problem.eq ? problem.eq_dim : 0;
  const int mi = problem.ineq ? problem.ineq_dim : 0;

  VectorXd x = clamp_to_box(initial_guess, problem.lower, problem.upper);
  {
    const double f0 = fobj(x);
    bool ok = std::isfinite(f0);
    if (ok && me) ok = problem.eq(x).allFinite();
    if (ok && mi) ok = problem.ineq(x).allFinite();
    if (!ok)
      throw EvaluationError("solve: non-finite callback value at initial point");
  }

  VectorXd lam = VectorXd::Zero(me);
  VectorXd mu = VectorXd::Zero(mi);
  double rho = options.penalty_init;

  auto violation = [&](const VectorXd& xv, double* eqv, double* inv) {
    *eqv = me ? problem.eq(xv).cwiseAbs().maxCoeff() : 0.0;
    *inv = mi ? std::max(0.0, problem.ineq(xv).maxCoeff()) : 0.0;
    return std::max(*eqv, *inv);
  };

  NlpResult res;
  res.solution = x;
  res.iterations = 0;

  double omega = 1.0 / rho;
  double eta = 1.0 / std::pow(rho, 0.1);
  double prev_viol = std::numeric_limits<double>::infinity();
  double prev_obj = std::numeric_limits<double>::quiet_NaN();
  int stalled = 0;
  int flat_outer = 0;
  bool stationary_ok = false;

  for (int outer = 0; outer < options.max_outer; ++outer) {
    auto phi = [&](const VectorXd& xv) {
      double v = fobj(xv);
      if (me) {
        const VectorXd c = problem.eq(xv);
        v += lam.dot(c) + 0.5 * rho * c.squaredNorm();
      }
      if (mi) {
        const VectorXd h = problem.ineq(xv);
        for (int i = 0; i < mi; ++i) {
          const double t = std::max(0.0, mu[i] + rho * h[i]);
          v += (t * t - mu[i] * mu[i]) / (2.0 * rho);
        }
      }
      return v;
    };
    const bool analytic = static_cast<bool>(problem.objective_grad) &&
                          (!me || static_cast<bool>(problem.eq_jac)) &&
                          (!mi || static_cast<bool>(problem.ineq_jac));
    auto dphi = [&](const VectorXd& xv) -> VectorXd {
      if (!analytic) return fd_gradient(phi, xv);
      VectorXd g = problem.objective_grad(xv);
      if (maximize) g = -g;
      if (me) {
        const VectorXd c = problem.eq(xv);
        g.noalias() += problem.eq_jac(xv).transpose() * (lam + rho * c);
      }
      if (mi) {
        const VectorXd h = problem.ineq(xv);
        VectorXd y(mi);
        for (int i = 0; i < mi; ++i) y[i] = std::max(0.0, mu[i] + rho * h[i]);
        g.noalias() += problem.ineq_jac(xv).transpose() * y;
      }
      return g;
    };

    auto model_hess = [&](const VectorXd& xv) -> MatrixXd {
      MatrixXd B = MatrixXd::Zero(problem.dim, problem.dim);
      // The curvature model is PSD in the caller's sense; it only helps when
      // the solver minimizes that sense directly.
      if (problem.objective_curvature && !maximize)
        B += problem.objective_curvature(xv);
      if (me) {
        const MatrixXd J = problem.eq_jac(xv);
        B.noalias() += rho * J.transpose() * J;
      }
      if (mi) {
        const VectorXd h = problem.ineq(xv);
        const MatrixXd J = problem.ineq_jac(xv);
        for (int i = 0; i < mi; ++i)
          if (mu[i] + rho * h[i] > 0.0)
            B.noalias() += rho * J.row(i).transpose() * J.row(i);
      }
      return B;
    };

    const double w = std::max(omega, options.stationarity_tol);
    InnerOutcome inner =
        analytic ? inner_minimize_gn(phi, dphi, model_hess, x, problem.lower,
                                     problem.upper, w, options.max_inner,
                                     options.trace, outer)
                 : inner_minimize(phi, dphi, x, problem.lower, problem.upper, w,
                                  options.max_inner, options.trace, outer);

    // Feasibility restoration: a few minimum-norm damped Gauss-Newton steps
    // on the equality residual.  The augmented-Lagrangian inner solve trades
    // constraint violation against the objective at finite rho; polishing the
    // violation here keeps the multiplier updates honest without driving rho
    // to numerically hopeless values.  Minimum-norm steps leave the (near-)
    // null-space of the Jacobian untouched, so the objective progress made by
    // the inner solve is preserved to first order.
    if (analytic && me) {
      VectorXd xr = inner.x;
      const double inv0 =
          mi ? std::max(0.0, problem.ineq(xr).maxCoeff()) : 0.0;
      for (int rs = 0; rs < 12; ++rs) {
        const VectorXd c0 = problem.eq(xr);
        if (c0.cwiseAbs().maxCoeff() <= 0.1 * options.feasibility_tol) break;
        // Slide along near-active inequalities: append their gradient rows
        // with a zero target so the correction does not push through them.
        int na = 0;
        VectorXd h;
        MatrixXd Ji;
        if (mi) {
          h = problem.ineq(xr);
          Ji = problem.ineq_jac(xr);
          for (int i = 0; i < mi; ++i)
            if (h[i] > -1e-6) ++na;
        }
        MatrixXd J(me + na, problem.dim);
        VectorXd c(me + na);
        J.topRows(me) = problem.eq_jac(xr);
        c.head(me) = c0;
        for (int i = 0, at = me; i < mi; ++i)
          if (h[i] > -1e-6) {
            J.row(at) = Ji.row(i);
            c[at++] = 0.0;
          }
        MatrixXd JJt = J * J.transpose();
        const double base =
            1e-12 * std::max(1.0, JJt.diagonal().cwiseAbs().maxCoeff());
        // Trust region: inflate the damping until the minimum-norm step is
        // modest.  This refuses to chase residual components that are only
        // removable by huge moves along near-singular directions (those are
        // discretization inconsistency, not correctable infeasibility).
        const double step_cap = 0.1 * std::max(1.0, xr.norm());
        VectorXd step;
        double damp = base;
        for (int t = 0; t < 40; ++t) {
          MatrixXd Jd = JJt;
          Jd.diagonal().array() += damp;
          step = -J.transpose() * Jd.ldlt().solve(c);
          if (step.allFinite() && step.norm() <= step_cap) break;
          damp *= 10.0;
        }
        if (!step.allFinite() || step.norm() > step_cap) break;
        const double cn = c0.norm();
        double alpha = 1.0;
        bool ok = false;
        for (int ls = 0; ls < 8; ++ls) {
          const VectorXd xt =
              clamp_to_box(xr + alpha * step, problem.lower, problem.upper);
          const VectorXd ct = problem.eq(xt);
          const double invt =
              mi ? std::max(0.0, problem.ineq(xt).maxCoeff()) : 0.0;
          if (ct.allFinite() && ct.norm() < cn * (1.0 - 1e-4 * alpha) &&
              invt <= inv0 + 0.1 * options.feasibility_tol) {
            xr = xt;
            ok = true;
            break;
          }
          alpha *= 0.5;
        }
        if (!ok) break;
      }
      x = xr;
      inner.x = xr;
    }
    x = inner.x;
    res.iterations += inner.iterations;

    double eqv, inv;
    const double viol = violation(x, &eqv, &inv);
    res.solution = x;
    res.max_eq_violation = eqv;
    res.max_ineq_violation = inv;

    if (viol <= std::max(eta, options.feasibility_tol)) {
      if (me) lam += rho * problem.eq(x);
      if (mi) {
        const VectorXd h = problem.ineq(x);
        for (int i = 0; i < mi; ++i) mu[i] = std::max(0.0, mu[i] + rho * h[i]);
      }
      stationary_ok = inner.pg_norm <= options.stationarity_tol &&
                      w <= options.stationarity_tol;
      if (viol <= options.feasibility_tol && stationary_ok) {
        res.status = NlpStatus::converged;
        res.objective_value = problem.objective(x);
        if (std::getenv("AMBIT_NLP_DEBUG"))
          std::fprintf(stderr, "return stationary outer=%d obj=%.3g\n", outer,
                       res.objective_value);
        return res;
      }
      eta = std::max(eta / std::pow(rho, 0.9), options.feasibility_tol * 0.1);
      omega = std::max(omega / rho, options.stationarity_tol * 0.1);
    } else {
      rho = std::min(rho * options.penalty_growth, options.penalty_max);
      eta = std::max(1.0 / std::pow(rho, 0.1), options.feasibility_tol * 0.1);
      omega = std::max(1.0 / rho, options.stationarity_tol * 0.1);
    }

    // Objective stagnation: when the inner solver cannot reach its
    // stationarity target (projected gradient pinned by near-singular
    // constraint directions) yet the objective no longer moves relative to
    // its own scale while the iterate stays within the feasibility acceptance
    // band, tightening omega or growing rho only burns inner iterations.
    const double obj_now = problem.objective(x);
    const double obj_scale =
        std::max(1e-30, std::abs(obj_now) +
                            (std::isfinite(prev_obj) ? std::abs(prev_obj) : 0.0));
    if (std::isfinite(prev_obj) &&
        std::abs(obj_now - prev_obj) <= 1e-6 * obj_scale) {
      if (viol <= 10.0 * options.feasibility_tol && inner.pg_norm > w &&
          ++flat_outer >= 3) {
        res.status = viol <= options.feasibility_tol
                         ? NlpStatus::converged
                         : NlpStatus::max_iterations;
        res.objective_value = obj_now;
        if (std::getenv("AMBIT_NLP_DEBUG"))
          std::fprintf(stderr, "return flat outer=%d obj=%.3g\n", outer,
                       res.objective_value);
        return res;
      }
    } else {
      flat_outer = 0;
    }
    prev_obj = obj_now;

    if (std::getenv("AMBIT_NLP_DEBUG"))
      std::fprintf(stderr,
                   "outer=%d rho=%.3g viol=%.3g pg=%.3g w=%.3g inner=%d\n",
                   outer, rho, viol, inner.pg_norm, w, inner.iterations);

    // Give up early when infeasibility stalls with the penalty saturated, or
    // when it stalls marginally above tolerance (within the 10x acceptance
    // band used by multistart selection): growing rho cannot help there.
    if (viol > options.feasibility_tol &&
        (rho >= options.penalty_max || viol <= 10.0 * options.feasibility_tol)) {
      if (viol > prev_viol - 1e-14 && ++stalled >= 3) {
        if (std::getenv("AMBIT_NLP_DEBUG"))
          std::fprintf(stderr, "break stall outer=%d ftol=%.3g viol=%.3g\n",
                       outer, options.feasibility_tol, viol);
        break;
      }
    } else {
      stalled = 0;
    }
    prev_viol = viol;
  }

  double eqv, inv;
  const double viol = violation(x, &eqv, &inv);
  res.solution = x;
  res.max_eq_violation = eqv;
  res.max_ineq_violation = inv;
  res.objective_value = problem.objective(x);
  // Within the 10x acceptance band used by multistart selection the result is
  // usable, just not polished; reserve "infeasible" for genuine violation.
  res.status = viol > 10.0 * options.feasibility_tol ? NlpStatus::infeasible
                                                     : NlpStatus::max_iterations;
  return res;
}

NlpResult multistart_solve(const NlpProblem& problem, int starts,
                           const StartSampler& sampler,
                           const SolverOptions& options) {
  if (starts < 1) throw std::invalid_argument("multistart_solve: starts >= 1");
  const bool maximize = problem.sense == Sense::maximize;
  const double feas = 10.0 * options.feasibility_tol;

  bool have_best = false, best_feasible = false;
  NlpResult best;
  int failures = 0;
  std::string first_error;

  for (int s = 0; s < starts; ++s) {
    NlpResult r;
    try {
      r = solve(problem, sampler.sample(s), options);
    } catch (const EvaluationError& e) {
      if (first_error.empty()) first_error = e.what();
      ++failures;
      continue;
    }
    r.start_index = s;
    const double viol = std::max(r.max_eq_violation, r.max_ineq_violation);
    const bool feasible = viol <= feas;
    if (!have_best) {
      best = r;
      best_feasible = feasible;
      have_best = true;
      continue;
    }
    if (feasible && !best_feasible) {
      best = r;
      best_feasible = true;
    } else if (feasible && best_feasible) {
      const double d = maximize ? r.objective_value - best.objective_value
                                : best.objective_value - r.objective_value;
      if (d > 1e-12) best = r;
    } else if (!feasible && !best_feasible) {
      const double bviol = std::max(best.max_eq_violation, best.max_ineq_violation);
      if (viol < bviol - 1e-15) best = r;
    }
  }
  if (!have_best)
    throw EvaluationError("multistart_solve: every start failed: " + first_error);
  if (!best_feasible) best.status = NlpStatus::infeasible;
  (void)failures;
  return best;
}

double check_derivatives(const NlpProblem& problem,
                         const std::vector<Eigen::VectorXd>& points) {
  double worst = 0.0;
  auto rel = [](double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
  };
  for (const auto& x : points) {
    if (problem.objective_grad) {
      const VectorXd ga = problem.objective_grad(x);
      const VectorXd gf = fd_gradient(problem.objective, x);
      for (int i = 0; i < x.size(); ++i) worst = std::max(worst, rel(ga[i], gf[i]));
    }
    if (problem.eq && problem.eq_jac) {
      const MatrixXd Ja = problem.eq_jac(x);
      const MatrixXd Jf = fd_jacobian(problem.eq, problem.eq_dim, x);
      worst = std::max(worst, (Ja - Jf).cwiseAbs().maxCoeff() /
                                  std::max(1.0, Jf.cwiseAbs().maxCoeff()));
    }
    if (problem.ineq && problem.ineq_jac) {
      const MatrixXd Ja = problem.ineq_jac(x);
      const MatrixXd Jf = fd_jacobian(problem.ineq, problem.ineq_dim, x);
      worst = std::max(worst, (Ja - Jf).cwiseAbs().maxCoeff() /
                                  std::max(1.0, Jf.cwiseAbs().maxCoeff()));
    }
  }
  return worst;
}

}  // namespace ambit
