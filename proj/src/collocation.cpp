#include "ambit/collocation.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <mutex>

namespace ambit {
namespace {

// Evaluates Legendre P_N at all entries of x via the three-term recurrence,
// returning the (node_count x N+1) table of P_0..P_N.
Eigen::MatrixXd legendre_table(const Eigen::VectorXd& x, int N) {
  const int m = static_cast<int>(x.size());
  Eigen::MatrixXd P(m, N + 1);
  P.col(0).setOnes();
  if (N >= 1) P.col(1) = x;
  for (int k = 2; k <= N; ++k)
    P.col(k) = ((2 * k - 1) * x.cwiseProduct(P.col(k - 1)) -
                (k - 1) * P.col(k - 2)) /
               static_cast<double>(k);
  return P;
}

std::unique_ptr<CollocationGrid> build_grid(int node_count) {
  const int N = node_count - 1;
  auto g = std::make_unique<CollocationGrid>();
  g->node_count = node_count;

  // Newton iteration for the LGL nodes from Chebyshev-point initial guesses.
  Eigen::VectorXd x(node_count);
  for (int j = 0; j < node_count; ++j)
    x[j] = -std::cos(M_PI * j / N);
  Eigen::VectorXd xold = Eigen::VectorXd::Constant(node_count, 2.0);
  Eigen::MatrixXd P;
  while ((x - xold).cwiseAbs().maxCoeff() > 1e-14) {
    xold = x;
    P = legendre_table(x, N);
    x = xold - (x.cwiseProduct(P.col(N)) - P.col(N - 1)).cwiseQuotient(
                   (node_count) * P.col(N));
  }
  // Symmetrize and pin the endpoints exactly.
  for (int j = 0; j < node_count / 2; ++j) {
    const double s = (x[j] - x[node_count - 1 - j]) / 2.0;
    x[j] = s;
    x[node_count - 1 - j] = -s;
  }
  if (node_count % 2 == 1) x[node_count / 2] = 0.0;
  x[0] = -1.0;
  x[node_count - 1] = 1.0;
  g->nodes = x;

  P = legendre_table(x, N);
  const Eigen::VectorXd PN = P.col(N);

  g->weights.resize(node_count);
  for (int j = 0; j < node_count; ++j)
    g->weights[j] = 2.0 / (N * (N + 1) * PN[j] * PN[j]);

  // Standard LGL differentiation matrix.
  g->diff_matrix.setZero(node_count, node_count);
  for (int i = 0; i < node_count; ++i)
    for (int j = 0; j < node_count; ++j)
      if (i != j) g->diff_matrix(i, j) = PN[i] / (PN[j] * (x[i] - x[j]));
  // Negative-sum diagonal: exact zero row sums, and it reproduces the
  // closed-form corner entries -N(N+1)/4 and +N(N+1)/4 to rounding.
  for (int i = 0; i < node_count; ++i)
    g->diff_matrix(i, i) = -g->diff_matrix.row(i).sum();

  // Barycentric weights; normalized for numerical range only (the formula is
  // scale invariant).
  g->bary.resize(node_count);
  for (int j = 0; j < node_count; ++j) {
    double w = 1.0;
    for (int k = 0; k < node_count; ++k)
      if (k != j) w /= (x[j] - x[k]);
    g->bary[j] = w;
  }
  g->bary /= g->bary.cwiseAbs().maxCoeff();
  return g;
}

}  // namespace

const CollocationGrid& lgl_grid(int node_count) {
  if (node_count < 2)
    throw std::invalid_argument("lgl_grid: node_count must be >= 2");
  static std::mutex mu;
  static std::map<int, std::unique_ptr<CollocationGrid>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(node_count);
  if (it == cache.end())
    it = cache.emplace(node_count, build_grid(node_count)).first;
  return *it->second;
}

double quadrature(const CollocationGrid& grid, const Eigen::VectorXd& values,
                  const TimeMap& map) {
  if (values.size() != grid.node_count)
    throw std::invalid_argument("quadrature: values length mismatch");
  return map.scale() * grid.weights.dot(values);
}

Eigen::VectorXd differentiate(const CollocationGrid& grid,
                              const Eigen::VectorXd& values,
                              const TimeMap& map) {
  if (values.size() != grid.node_count)
    throw std::invalid_argument("differentiate: values length mismatch");
  return (grid.diff_matrix * values) / map.scale();
}

Eigen::VectorXd interpolate(const CollocationGrid& grid,
                            const Eigen::VectorXd& values,
                            const Eigen::VectorXd& query_points) {
  if (values.size() != grid.node_count)
    throw std::invalid_argument("interpolate: values length mismatch");
  Eigen::VectorXd out(query_points.size());
  for (int q = 0; q < query_points.size(); ++q) {
    const double t = query_points[q];
    if (t < -1.0 - 1e-14 || t > 1.0 + 1e-14)
      throw OutOfDomainError("interpolate: query point outside [-1, 1]");
    double num = 0.0, den = 0.0;
    bool hit = false;
    for (int j = 0; j < grid.node_count && !hit; ++j) {
      const double d = t - grid.nodes[j];
      if (d == 0.0) {
        out[q] = values[j];
        hit = true;
      } else {
        const double c = grid.bary[j] / d;
        num += c * values[j];
        den += c;
      }
    }
    if (!hit) out[q] = num / den;
  }
  return out;
}

}  // namespace ambit
