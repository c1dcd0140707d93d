#include "croc/linalg.hpp"

#include <algorithm>
#include <cmath>

namespace croc {

namespace {

double off_diag_norm(const std::vector<double>& g, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) acc += g[i * n + j] * g[i * n + j];
  return std::sqrt(acc);
}

}  // namespace

std::vector<double> symmetric_eigenvalues(std::vector<double> g, std::size_t n) {
  if (n == 0) throw Error("symmetric_eigenvalues: empty matrix");
  if (g.size() != n * n) throw Error("symmetric_eigenvalues: size mismatch");

  double frob = 0.0;
  for (double x : g) frob += x * x;
  frob = std::sqrt(frob);
  const double tol = 1e-12 * std::max(1.0, frob);

  const std::size_t max_sweeps = 100;
  for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
    if (off_diag_norm(g, n) <= tol) break;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double gpq = g[p * n + q];
        if (std::abs(gpq) <= tol / static_cast<double>(n * n)) continue;
        const double gpp = g[p * n + p];
        const double gqq = g[q * n + q];
        const double theta = (gqq - gpp) / (2.0 * gpq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          if (k == p || k == q) continue;
          const double gpk = g[p * n + k];
          const double gqk = g[q * n + k];
          const double np = c * gpk - s * gqk;
          const double nq = s * gpk + c * gqk;
          g[p * n + k] = np;
          g[k * n + p] = np;
          g[q * n + k] = nq;
          g[k * n + q] = nq;
        }
        g[p * n + p] = gpp - t * gpq;
        g[q * n + q] = gqq + t * gpq;
        g[p * n + q] = 0.0;
        g[q * n + p] = 0.0;
      }
    }
  }

  std::vector<double> eig(n);
  for (std::size_t i = 0; i < n; ++i) eig[i] = g[i * n + i];
  std::sort(eig.begin(), eig.end(), std::greater<double>());
  return eig;
}

std::vector<double> singular_values(const std::vector<double>& a, std::size_t rows,
                                    std::size_t cols) {
  if (rows == 0 || cols == 0) throw Error("singular_values: empty matrix");
  if (rows < cols) {
    throw Error("singular_values: expected rows >= cols, got " + std::to_string(rows) +
                " x " + std::to_string(cols));
  }
  if (cols > 64) throw Error("singular_values: width above the supported 64 columns");
  if (a.size() != rows * cols) throw Error("singular_values: size mismatch");

  // Gram matrix A^T A, cols x cols.
  std::vector<double> g(cols * cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = a.data() + r * cols;
    for (std::size_t i = 0; i < cols; ++i) {
      const double vi = row[i];
      for (std::size_t j = i; j < cols; ++j) g[i * cols + j] += vi * row[j];
    }
  }
  for (std::size_t i = 0; i < cols; ++i)
    for (std::size_t j = 0; j < i; ++j) g[i * cols + j] = g[j * cols + i];

  std::vector<double> eig = symmetric_eigenvalues(std::move(g), cols);
  for (double& e : eig) e = std::sqrt(std::max(0.0, e));
  return eig;  // already descending; sqrt preserves order
}

std::vector<double> singular_values(const Tensor& a) {
  if (a.rank() != 2) throw Error("singular_values: expects a rank-2 tensor");
  std::vector<double> v(a.values().begin(), a.values().end());
  return singular_values(v, a.rows(), a.cols());
}

}  // namespace croc
