#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "croc/data.hpp"
#include "croc/model.hpp"

namespace croc {

/// Rank-sum AUC with midranks for ties. Empty when only one class is present.
std::optional<double> auc(const std::vector<double>& scores, const std::vector<int>& labels);

/// Impression-weighted mean of per-user AUCs; users with a single class are
/// skipped. Empty when no user contributes.
std::optional<double> gauc(const std::vector<double>& scores, const std::vector<int>& labels,
                           const std::vector<std::int64_t>& users);

/// sum(sigma_i) / max(sigma_i) of a rows x cols matrix (row-major). The wide
/// side is transposed in, so cols may exceed rows. All-zero matrices error.
double information_abundance(const std::vector<double>& matrix, std::size_t rows,
                             std::size_t cols);

/// Scores, labels and user ids for a dataset under a trained model, each
/// sample scored by its own domain's head. Row order follows the dataset.
struct EvalScores {
  std::vector<double> scores;
  std::vector<int> labels;
  std::vector<std::int64_t> users;
  std::vector<int> domains;

  EvalScores domain_slice(int domain) const;
};

EvalScores collect_scores(const Model& model, const Dataset& ds,
                          std::size_t batch_size = 1024);

/// Per-expert output norms over a dataset: result[k][i] = ||O_k(sample i)||_2.
std::vector<std::vector<double>> expert_norms(const Model& model, const Dataset& ds,
                                              std::size_t batch_size = 1024);

struct ConflictConfig {
  double top_pct = 75.0;     // tau_t percentile of the pooled norm distribution
  double bottom_pct = 25.0;  // tau_b percentile
};

/// Samples where the reference model's expert for domain i fires strongly
/// while its expert for domain j stays weak. Requires domain-bound experts.
struct ConflictSet {
  int domain_i = -1;
  int domain_j = -1;
  std::vector<std::size_t> members;  // dataset row indices
  double tau_t = 0.0;                // reference thresholds, kept for reporting
  double tau_b = 0.0;
};

std::vector<ConflictSet> build_conflict_sets(const Model& reference, const Dataset& ds,
                                             const ConflictConfig& cfg = {});

struct DiPair {
  int domain_i = -1;
  int domain_j = -1;
  std::size_t set_size = 0;
  double di = 0.0;
};

struct DiResult {
  std::vector<DiPair> pairs;         // empty conflict sets excluded
  std::size_t skipped_empty = 0;     // how many pairs had no members
  double average = 0.0;              // mean over included pairs

  std::string to_csv() const;        // pair_i,pair_j,set_size,di
};

/// Fraction of each conflict set the candidate handles with diverse experts.
/// Candidate thresholds come from its own pooled norms, so scales stay
/// comparable across models. Domain-bound candidates check the two bound
/// experts; free-expert candidates check existence of a strong and a weak one.
DiResult diversity_index(const Model& candidate, const Dataset& ds,
                         const std::vector<ConflictSet>& sets,
                         const ConflictConfig& cfg = {});

/// Norm-level core of diversity_index: norms[k][sample], bound_of_domain maps
/// domain -> expert index for domain-bound candidates (empty = free experts).
DiResult diversity_index_from_norms(const std::vector<std::vector<double>>& norms,
                                    const std::vector<std::size_t>& bound_of_domain,
                                    const std::vector<ConflictSet>& sets,
                                    const ConflictConfig& cfg = {});

struct HeatmapResult {
  std::size_t n_experts = 0;
  std::size_t d = 0;
  std::vector<double> expert_level;  // K x K, entry = ||centered cross||_1 / d^2
  std::vector<double> dim_level;     // (K d) x (K d), |centered cross| entries
};

/// Covariance structure of expert outputs over a dataset. The (p,q) expert
/// cell times d^2 equals the covariance penalty's (p,q) term on that data.
HeatmapResult covariance_heatmaps(const Model& model, const Dataset& ds,
                                  std::size_t batch_size = 1024);
HeatmapResult covariance_heatmaps_from(const std::vector<std::vector<double>>& expert_out,
                                       std::size_t n, std::size_t d);

}  // namespace croc
