// Independent reference implementations used only by tests. These are written
// against the definitions directly (finite differences, n^2 pair counting,
// power iteration) so they share no code with the library paths they check.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "croc/tensor.hpp"

namespace oracles {

// Central finite differences against the tape's analytic gradients.
// `build` must run a complete forward pass on the given tape and return the
// scalar loss; parameter values are perturbed in place between calls.
template <class BuildLoss>
double fd_max_rel_err(BuildLoss&& build, std::vector<croc::Tensor> params,
                      double h = 1e-6) {
  for (auto& p : params) p.zero_grad();
  {
    croc::Tape tape;
    croc::Tensor loss = build(tape);
    tape.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  for (auto& p : params) {
    if (p.has_grad()) {
      analytic.emplace_back(p.grad().begin(), p.grad().end());
    } else {
      analytic.emplace_back(p.numel(), 0.0);
    }
  }
  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto vals = params[pi].mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double orig = vals[i];
      vals[i] = orig + h;
      double fp;
      {
        croc::Tape tape;
        fp = build(tape).item();
      }
      vals[i] = orig - h;
      double fm;
      {
        croc::Tape tape;
        fm = build(tape).item();
      }
      vals[i] = orig;
      const double fd = (fp - fm) / (2.0 * h);
      const double an = analytic[pi][i];
      const double err =
          std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-3});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

// Eigenvalues of a symmetric PSD matrix by power iteration with deflation.
inline std::vector<double> psd_eigenvalues_power(std::vector<double> g, std::size_t n,
                                                 std::size_t max_iters = 200000,
                                                 double tol = 1e-14) {
  std::vector<double> eig;
  std::mt19937_64 rng(12345);
  std::uniform_real_distribution<double> dist(0.1, 1.0);
  for (std::size_t j = 0; j < n; ++j) {
    std::vector<double> v(n);
    for (double& x : v) x = dist(rng);
    double lambda = 0.0;
    for (std::size_t it = 0; it < max_iters; ++it) {
      std::vector<double> w(n, 0.0);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c) w[r] += g[r * n + c] * v[c];
      double nrm = 0.0;
      for (double x : w) nrm += x * x;
      nrm = std::sqrt(nrm);
      if (nrm < 1e-300) {
        lambda = 0.0;
        break;
      }
      double next = 0.0;
      for (std::size_t r = 0; r < n; ++r) next += v[r] * w[r];
      for (std::size_t r = 0; r < n; ++r) v[r] = w[r] / nrm;
      if (it > 2 && std::abs(next - lambda) <= tol * std::max(1.0, std::abs(next))) {
        lambda = next;
        break;
      }
      lambda = next;
    }
    eig.push_back(std::max(0.0, lambda));
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < n; ++c) g[r * n + c] -= lambda * v[r] * v[c];
  }
  std::sort(eig.begin(), eig.end(), std::greater<double>());
  return eig;
}

// Cross-expert covariance penalty computed literally from its definition on
// dense row-major matrices: pair terms are l1 norms of centered cross
// products, scaled by 1/d^2.
inline double covloss_brute(const std::vector<std::vector<double>>& experts,
                            std::size_t n, std::size_t d, bool include_diagonal) {
  const std::size_t k = experts.size();
  std::vector<std::vector<double>> centered(k);
  for (std::size_t p = 0; p < k; ++p) {
    centered[p] = experts[p];
    for (std::size_t j = 0; j < d; ++j) {
      double mean = 0.0;
      for (std::size_t i = 0; i < n; ++i) mean += experts[p][i * d + j];
      mean /= static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) centered[p][i * d + j] -= mean;
    }
  }
  double total = 0.0;
  for (std::size_t p = 0; p < k; ++p) {
    const std::size_t q_end = include_diagonal ? p + 1 : p;
    for (std::size_t q = 0; q < q_end; ++q) {
      for (std::size_t a = 0; a < d; ++a) {
        for (std::size_t b = 0; b < d; ++b) {
          double c = 0.0;
          for (std::size_t i = 0; i < n; ++i)
            c += centered[p][i * d + a] * centered[q][i * d + b];
          total += std::abs(c);
        }
      }
    }
  }
  return total / static_cast<double>(d * d);
}

// AUC by direct pair counting, ties worth half. Returns NaN when one class is
// missing.
inline double auc_brute(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j]) {
        wins += 1.0;
      } else if (scores[i] == scores[j]) {
        wins += 0.5;
      }
    }
  }
  if (pairs == 0) return std::numeric_limits<double>::quiet_NaN();
  return wins / static_cast<double>(pairs);
}

}  // namespace oracles
