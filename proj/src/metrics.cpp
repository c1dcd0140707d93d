#include "croc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "croc/io.hpp"
#include "croc/linalg.hpp"
#include "croc/stats.hpp"

namespace croc {

std::optional<double> auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw Error("auc: size mismatch");
  std::size_t pos = 0, neg = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw Error("auc: labels must be 0/1");
    (y == 1 ? pos : neg)++;
  }
  if (pos == 0 || neg == 0) return std::nullopt;

  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Midranks over tie groups, summed for positives.
  double pos_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // ranks are 1-based
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) pos_rank_sum += midrank;
    i = j;
  }
  const double u = pos_rank_sum - 0.5 * static_cast<double>(pos) * static_cast<double>(pos + 1);
  return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

std::optional<double> gauc(const std::vector<double>& scores, const std::vector<int>& labels,
                           const std::vector<std::int64_t>& users) {
  if (scores.size() != labels.size() || scores.size() != users.size())
    throw Error("gauc: size mismatch");
  std::map<std::int64_t, std::vector<std::size_t>> by_user;
  for (std::size_t i = 0; i < users.size(); ++i) by_user[users[i]].push_back(i);

  double weighted = 0.0;
  std::size_t impressions = 0;
  for (const auto& [user, rows] : by_user) {
    std::vector<double> s(rows.size());
    std::vector<int> y(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      s[k] = scores[rows[k]];
      y[k] = labels[rows[k]];
    }
    const auto a = auc(s, y);
    if (!a) continue;  // single-class user tells us nothing about ranking
    weighted += static_cast<double>(rows.size()) * *a;
    impressions += rows.size();
  }
  if (impressions == 0) return std::nullopt;
  return weighted / static_cast<double>(impressions);
}

double information_abundance(const std::vector<double>& matrix, std::size_t rows,
                             std::size_t cols) {
  if (rows == 0 || cols == 0) throw Error("information_abundance: empty matrix");
  if (matrix.size() != rows * cols) throw Error("information_abundance: size mismatch");

  std::vector<double> m = matrix;
  if (rows < cols) {  // singular values are transpose-invariant
    std::vector<double> t(matrix.size());
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = matrix[r * cols + c];
    m.swap(t);
    std::swap(rows, cols);
  }

  const std::vector<double> sigma = singular_values(m, rows, cols);
  const double top = sigma.empty() ? 0.0 : sigma.front();
  if (top <= 0.0) throw Error("information_abundance: all-zero matrix");
  double sum = 0.0;
  for (double s : sigma) sum += s;
  return sum / top;
}

EvalScores EvalScores::domain_slice(int domain) const {
  EvalScores out;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (domains[i] != domain) continue;
    out.scores.push_back(scores[i]);
    out.labels.push_back(labels[i]);
    out.users.push_back(users[i]);
    out.domains.push_back(domains[i]);
  }
  return out;
}

namespace {

std::vector<Batch> eval_batches(const Dataset& ds, std::size_t batch_size) {
  std::vector<Batch> out;
  const std::size_t n = ds.samples.size();
  for (std::size_t start = 0; start < n; start += batch_size) {
    std::vector<std::size_t> rows(std::min(batch_size, n - start));
    std::iota(rows.begin(), rows.end(), start);
    out.push_back(make_batch(ds, rows));
  }
  return out;
}

}  // namespace

EvalScores collect_scores(const Model& model, const Dataset& ds, std::size_t batch_size) {
  EvalScores out;
  out.scores.reserve(ds.samples.size());
  for (const Batch& batch : eval_batches(ds, batch_size)) {
    Tape tape(false);
    ForwardOut fwd = model.forward(tape, batch);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const int s = batch.domains[i];
      out.scores.push_back(fwd.domain_pred[static_cast<std::size_t>(s)].at(i, 0));
      out.labels.push_back(batch.label_ints[i]);
      out.users.push_back(batch.user_ids[i]);
      out.domains.push_back(s);
    }
  }
  return out;
}

std::vector<std::vector<double>> expert_norms(const Model& model, const Dataset& ds,
                                              std::size_t batch_size) {
  std::vector<std::vector<double>> norms(model.num_experts());
  for (auto& v : norms) v.reserve(ds.samples.size());
  for (const Batch& batch : eval_batches(ds, batch_size)) {
    Tape tape(false);
    ForwardOut fwd = model.forward(tape, batch);
    for (std::size_t k = 0; k < fwd.expert_out.size(); ++k) {
      const Tensor& o = fwd.expert_out[k];
      const std::size_t d = o.shape()[1];
      for (std::size_t i = 0; i < batch.size(); ++i) {
        double sq = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double v = o.at(i, j);
          sq += v * v;
        }
        norms[k].push_back(std::sqrt(sq));
      }
    }
  }
  return norms;
}

namespace {

// Maps domain -> expert index for models whose experts are domain-bound.
std::vector<std::size_t> bound_expert_of_domain(const Model& m) {
  std::vector<std::size_t> idx(m.num_domains(), static_cast<std::size_t>(-1));
  for (std::size_t k = 0; k < m.num_experts(); ++k) {
    const Binding b = m.expert_binding(k);
    if (b.domain_bound) idx[static_cast<std::size_t>(b.domain)] = k;
  }
  for (std::size_t s = 0; s < idx.size(); ++s)
    if (idx[s] == static_cast<std::size_t>(-1))
      throw Error("model has no expert bound to domain " + std::to_string(s));
  return idx;
}

std::pair<double, double> pooled_thresholds(const std::vector<std::vector<double>>& norms,
                                            const std::vector<std::size_t>& experts,
                                            const ConflictConfig& cfg) {
  std::vector<double> pooled;
  for (std::size_t k : experts)
    pooled.insert(pooled.end(), norms[k].begin(), norms[k].end());
  return {percentile(pooled, cfg.top_pct), percentile(pooled, cfg.bottom_pct)};
}

}  // namespace

std::vector<ConflictSet> build_conflict_sets(const Model& reference, const Dataset& ds,
                                             const ConflictConfig& cfg) {
  if (!reference.domain_bound_experts())
    throw Error("conflict sets need a reference model with domain-bound experts");
  const auto norms = expert_norms(reference, ds);
  const auto of_domain = bound_expert_of_domain(reference);
  const auto [tau_t, tau_b] = pooled_thresholds(norms, of_domain, cfg);

  const std::size_t n_dom = reference.num_domains();
  std::vector<ConflictSet> sets;
  for (std::size_t i = 0; i < n_dom; ++i) {
    for (std::size_t j = 0; j < n_dom; ++j) {
      if (i == j) continue;
      ConflictSet cs;
      cs.domain_i = static_cast<int>(i);
      cs.domain_j = static_cast<int>(j);
      cs.tau_t = tau_t;
      cs.tau_b = tau_b;
      const auto& ni = norms[of_domain[i]];
      const auto& nj = norms[of_domain[j]];
      for (std::size_t r = 0; r < ds.samples.size(); ++r)
        if (ni[r] >= tau_t && nj[r] <= tau_b) cs.members.push_back(r);
      sets.push_back(std::move(cs));
    }
  }
  return sets;
}

std::string DiResult::to_csv() const {
  std::ostringstream os;
  os << "pair_i,pair_j,set_size,di\n";
  for (const DiPair& p : pairs)
    os << p.domain_i << ',' << p.domain_j << ',' << p.set_size << ','
       << format_double(p.di) << '\n';
  return os.str();
}

DiResult diversity_index(const Model& candidate, const Dataset& ds,
                         const std::vector<ConflictSet>& sets, const ConflictConfig& cfg) {
  std::vector<std::size_t> of_domain;
  if (candidate.domain_bound_experts()) of_domain = bound_expert_of_domain(candidate);
  return diversity_index_from_norms(expert_norms(candidate, ds), of_domain, sets, cfg);
}

DiResult diversity_index_from_norms(const std::vector<std::vector<double>>& norms,
                                    const std::vector<std::size_t>& bound_of_domain,
                                    const std::vector<ConflictSet>& sets,
                                    const ConflictConfig& cfg) {
  std::vector<std::size_t> all_experts(norms.size());
  std::iota(all_experts.begin(), all_experts.end(), std::size_t{0});
  const auto [tau_t, tau_b] = pooled_thresholds(norms, all_experts, cfg);

  const bool bound = !bound_of_domain.empty();
  const std::vector<std::size_t>& of_domain = bound_of_domain;

  DiResult out;
  double sum = 0.0;
  for (const ConflictSet& cs : sets) {
    if (cs.members.empty()) {
      out.skipped_empty++;
      continue;
    }
    std::size_t hits = 0;
    for (std::size_t r : cs.members) {
      bool ok;
      if (bound) {
        ok = norms[of_domain[static_cast<std::size_t>(cs.domain_i)]][r] >= tau_t &&
             norms[of_domain[static_cast<std::size_t>(cs.domain_j)]][r] <= tau_b;
      } else {
        bool strong = false, weak = false;
        for (std::size_t k = 0; k < norms.size(); ++k) {
          strong = strong || norms[k][r] >= tau_t;
          weak = weak || norms[k][r] <= tau_b;
        }
        ok = strong && weak;
      }
      if (ok) ++hits;
    }
    DiPair p;
    p.domain_i = cs.domain_i;
    p.domain_j = cs.domain_j;
    p.set_size = cs.members.size();
    p.di = static_cast<double>(hits) / static_cast<double>(cs.members.size());
    sum += p.di;
    out.pairs.push_back(p);
  }
  out.average = out.pairs.empty() ? 0.0 : sum / static_cast<double>(out.pairs.size());
  return out;
}

HeatmapResult covariance_heatmaps_from(const std::vector<std::vector<double>>& expert_out,
                                       std::size_t n, std::size_t d) {
  const std::size_t k = expert_out.size();
  if (k == 0) throw Error("covariance_heatmaps: no experts");
  if (n < 2) throw Error("covariance_heatmaps: needs at least 2 rows");
  for (const auto& m : expert_out)
    if (m.size() != n * d) throw Error("covariance_heatmaps: bad expert matrix size");

  // Center each expert's columns once.
  std::vector<std::vector<double>> centered(k);
  for (std::size_t p = 0; p < k; ++p) {
    centered[p] = expert_out[p];
    for (std::size_t j = 0; j < d; ++j) {
      double mean = 0.0;
      for (std::size_t i = 0; i < n; ++i) mean += centered[p][i * d + j];
      mean /= static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) centered[p][i * d + j] -= mean;
    }
  }

  HeatmapResult out;
  out.n_experts = k;
  out.d = d;
  out.expert_level.assign(k * k, 0.0);
  out.dim_level.assign(k * d * k * d, 0.0);
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t q = 0; q < k; ++q) {
      double l1 = 0.0;
      for (std::size_t a = 0; a < d; ++a) {
        for (std::size_t b = 0; b < d; ++b) {
          double dot = 0.0;
          for (std::size_t i = 0; i < n; ++i)
            dot += centered[p][i * d + a] * centered[q][i * d + b];
          l1 += std::abs(dot);
          out.dim_level[(p * d + a) * (k * d) + (q * d + b)] = std::abs(dot);
        }
      }
      out.expert_level[p * k + q] = l1 / (static_cast<double>(d) * static_cast<double>(d));
    }
  }
  return out;
}

HeatmapResult covariance_heatmaps(const Model& model, const Dataset& ds,
                                  std::size_t batch_size) {
  const std::size_t n = ds.samples.size();
  std::vector<std::vector<double>> outs(model.num_experts());
  std::size_t d = 0;
  for (auto& m : outs) m.reserve(n * model.config().expert_dim);
  for (const Batch& batch : eval_batches(ds, batch_size)) {
    Tape tape(false);
    ForwardOut fwd = model.forward(tape, batch);
    for (std::size_t p = 0; p < fwd.expert_out.size(); ++p) {
      const auto v = fwd.expert_out[p].values();
      outs[p].insert(outs[p].end(), v.begin(), v.end());
      d = fwd.expert_out[p].shape()[1];
    }
  }
  return covariance_heatmaps_from(outs, n, d);
}

}  // namespace croc
