#include "nmpm/eval.hpp"

#include <algorithm>
#include <cmath>

namespace nmpm {

// Log-domain Sinkhorn on the entropic OT problem
//   min <P, C> - eps H(P)  s.t.  P 1 = a, P^T 1 = b
// with uniform marginals. Potentials f, g are iterated via log-sum-exp
// softmins, which stays stable for eps far below the cost scale.
double sinkhorn_emd(const std::vector<float>& a, const std::vector<float>& b,
                    double epsilon, int max_iters, double tol) {
  if (a.size() % 2 || b.size() % 2)
    throw TensorError("sinkhorn_emd: point clouds must be N x 2");
  int n = static_cast<int>(a.size() / 2);
  int m = static_cast<int>(b.size() / 2);
  if (n == 0 || m == 0) throw TensorError("sinkhorn_emd: empty point cloud");
  if (!(epsilon > 0.0)) throw TensorError("sinkhorn_emd: epsilon must be positive");

  std::vector<double> C(static_cast<std::size_t>(n) * m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) {
      double dx = static_cast<double>(a[2 * i]) - b[2 * j];
      double dy = static_cast<double>(a[2 * i + 1]) - b[2 * j + 1];
      C[static_cast<std::size_t>(i) * m + j] = std::hypot(dx, dy);
    }

  double la = -std::log(static_cast<double>(n));  // log uniform weights
  double lb = -std::log(static_cast<double>(m));
  std::vector<double> f(static_cast<std::size_t>(n), 0.0);
  std::vector<double> g(static_cast<std::size_t>(m), 0.0);

  auto softmin_rows = [&](std::vector<double>& out) {
    // f_i <- -eps * logsumexp_j((g_j - C_ij)/eps + log b_j)
    for (int i = 0; i < n; ++i) {
      double hi = -1e300;
      for (int j = 0; j < m; ++j)
        hi = std::max(hi, (g[static_cast<std::size_t>(j)] -
                           C[static_cast<std::size_t>(i) * m + j]) / epsilon + lb);
      double acc = 0.0;
      for (int j = 0; j < m; ++j)
        acc += std::exp((g[static_cast<std::size_t>(j)] -
                         C[static_cast<std::size_t>(i) * m + j]) / epsilon + lb - hi);
      out[static_cast<std::size_t>(i)] = -epsilon * (hi + std::log(acc));
    }
  };
  auto softmin_cols = [&](std::vector<double>& out) {
    for (int j = 0; j < m; ++j) {
      double hi = -1e300;
      for (int i = 0; i < n; ++i)
        hi = std::max(hi, (f[static_cast<std::size_t>(i)] -
                           C[static_cast<std::size_t>(i) * m + j]) / epsilon + la);
      double acc = 0.0;
      for (int i = 0; i < n; ++i)
        acc += std::exp((f[static_cast<std::size_t>(i)] -
                         C[static_cast<std::size_t>(i) * m + j]) / epsilon + la - hi);
      out[static_cast<std::size_t>(j)] = -epsilon * (hi + std::log(acc));
    }
  };

  std::vector<double> f_new(static_cast<std::size_t>(n));
  for (int it = 0; it < max_iters; ++it) {
    softmin_rows(f_new);
    double delta = 0.0;
    for (int i = 0; i < n; ++i) {
      delta = std::max(delta, std::abs(f_new[static_cast<std::size_t>(i)] -
                                       f[static_cast<std::size_t>(i)]));
      f[static_cast<std::size_t>(i)] = f_new[static_cast<std::size_t>(i)];
    }
    softmin_cols(g);
    if (delta < tol && it > 0) break;
  }

  // transport cost <P, C> with P_ij = exp((f_i + g_j - C_ij)/eps) a_i b_j
  double cost = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) {
      double lp = (f[static_cast<std::size_t>(i)] + g[static_cast<std::size_t>(j)] -
                   C[static_cast<std::size_t>(i) * m + j]) / epsilon + la + lb;
      cost += std::exp(lp) * C[static_cast<std::size_t>(i) * m + j];
    }
  return cost;
}

}  // namespace nmpm
