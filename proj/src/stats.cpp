#include "croc/stats.hpp"

#include "croc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace croc {

namespace {

// Lentz continued fraction for the incomplete beta function.
double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-14;
  constexpr double kFpMin = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log(1.0 - x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * betacf(a, b, x) / a;
  }
  return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double nu) {
  if (nu <= 0.0) throw Error("student_t_cdf: nu must be positive");
  const double x = nu / (nu + t * t);
  const double tail = 0.5 * incomplete_beta(nu / 2.0, 0.5, x);
  return t >= 0.0 ? 1.0 - tail : tail;
}

PairedTTest paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw Error("paired_t_test: size mismatch");
  PairedTTest r;
  const std::size_t n = a.size();
  if (n < 2) return r;
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
  r.mean_diff = mean(d);
  const double sd = stddev(d);
  if (sd == 0.0) {
    if (r.mean_diff > 0.0) {
      r.p_one_sided = 0.0;
      r.p_two_sided = 0.0;
      r.t = std::numeric_limits<double>::infinity();
    } else if (r.mean_diff < 0.0) {
      r.p_one_sided = 1.0;
      r.p_two_sided = 0.0;
      r.t = -std::numeric_limits<double>::infinity();
    }
    return r;
  }
  r.t = r.mean_diff / (sd / std::sqrt(static_cast<double>(n)));
  const double cdf = student_t_cdf(r.t, static_cast<double>(n - 1));
  r.p_one_sided = 1.0 - cdf;
  r.p_two_sided = 2.0 * std::min(cdf, 1.0 - cdf);
  return r;
}

double mann_whitney_p(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n1 = x.size(), n2 = y.size();
  if (n1 == 0 || n2 == 0) throw Error("mann_whitney_p: empty sample");
  struct Item {
    double v;
    int group;
  };
  std::vector<Item> all;
  all.reserve(n1 + n2);
  for (double v : x) all.push_back({v, 0});
  for (double v : y) all.push_back({v, 1});
  std::sort(all.begin(), all.end(), [](const Item& a, const Item& b) { return a.v < b.v; });

  // Midranks plus the tie-correction accumulator.
  const std::size_t n = all.size();
  std::vector<double> rank(n);
  double tie_sum = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && all[j + 1].v == all[i].v) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[k] = r;
    const double t = static_cast<double>(j - i + 1);
    tie_sum += t * t * t - t;
    i = j + 1;
  }
  double r1 = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (all[k].group == 0) r1 += rank[k];
  }
  const double fn1 = static_cast<double>(n1), fn2 = static_cast<double>(n2);
  const double u1 = r1 - fn1 * (fn1 + 1.0) / 2.0;
  const double mu = fn1 * fn2 / 2.0;
  const double fn = fn1 + fn2;
  const double var =
      fn1 * fn2 / 12.0 * ((fn + 1.0) - tie_sum / (fn * (fn - 1.0)));
  if (var <= 0.0) return 1.0;  // all values tied
  const double z = (u1 - mu) / std::sqrt(var);
  return std::erfc(std::abs(z) / std::sqrt(2.0));
}

double percentile(std::vector<double> v, double pct) {
  if (v.empty()) throw Error("percentile: empty input");
  if (pct < 0.0 || pct > 100.0) throw Error("percentile: pct out of range");
  std::sort(v.begin(), v.end());
  if (v.size() == 1) return v[0];
  const double pos = pct / 100.0 * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  if (lo + 1 >= v.size()) return v.back();
  const double frac = pos - static_cast<double>(lo);
  return v[lo] * (1.0 - frac) + v[lo + 1] * frac;
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double acc = 0.0;
  for (double x : v) acc += x;
  return acc / static_cast<double>(v.size());
}

double stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

}  // namespace croc
