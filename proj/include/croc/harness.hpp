#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "croc/trainer.hpp"

namespace croc {

/// One ablation cell: which embedding layout, which gate, which loss.
/// embedding: "SE" | "ME"; gating: "-" | "PG" | "PEG"; loss: "B" | "B+C".
struct AblationCell {
  std::string embedding = "ME";
  std::string gating = "PEG";
  std::string loss = "B+C";

  std::string label() const { return embedding + "/" + gating + "/" + loss; }
};

/// The seven-row grid the ablation table reports: the single-embedding MMoE
/// base, each ME/gate upgrade under plain BCE, and the same under BCE plus
/// the covariance penalty (last row = the full model).
std::vector<AblationCell> default_ablation_grid();

std::vector<AblationCell> parse_grid(const std::string& json_text);
std::string grid_to_json(const std::vector<AblationCell>& grid);

/// Model/loss settings for a cell, derived from base configs. Errors on
/// combinations the zoo cannot express (SE with a prior gate).
void apply_cell(const AblationCell& cell, ModelConfig& model_cfg, TrainConfig& train_cfg);

struct RunScore {
  std::uint64_t seed = 0;
  double auc = 0.0;
  double gauc = 0.0;
  double seconds = 0.0;
};

struct HarnessRow {
  std::string label;
  std::string variant;
  std::vector<RunScore> runs;  // one per seed, seed order
  double auc_mean = 0.0, auc_std = 0.0;
  double gauc_mean = 0.0, gauc_std = 0.0;
  // Two-sided paired t-test against the first (base) row; NaN on the base row.
  double p_auc = 0.0, p_gauc = 0.0;

  void finalize();  // fills means/stds from runs
};

struct AblationResult {
  std::vector<HarnessRow> rows;
  std::string to_csv() const;  // stats only, no timings: reruns must be byte-stable
};

/// Trains every cell over every seed on one shared dataset and aggregates.
/// Each (cell, seed) run is independent; per-run scores are kept so p-values
/// can be recomputed after a parallel merge.
AblationResult ablation_harness(const Dataset& ds, const std::vector<AblationCell>& grid,
                                const std::vector<std::uint64_t>& seeds,
                                const ModelConfig& base_model, const TrainConfig& base_train);

/// Computes mean/std/p-values for rows whose runs are already filled
/// (used to merge per-cell results from parallel worker processes).
void aggregate_rows(std::vector<HarnessRow>& rows);

RunScore run_cell_seed(const Dataset& ds, const AblationCell& cell, std::uint64_t seed,
                       const ModelConfig& base_model, const TrainConfig& base_train);

// ---- sensitivity sweeps ------------------------------------------------

struct SweepPoint {
  double x = 0.0;          // alpha, or table count M
  std::string series;      // model label
  std::vector<RunScore> runs;
  double auc_mean = 0.0, auc_std = 0.0;
  double gauc_mean = 0.0, gauc_std = 0.0;
};

struct SweepResult {
  std::string kind;  // "alpha" | "embeddings"
  std::vector<SweepPoint> points;
  std::string to_csv() const;
  std::string auc_svg() const;
  std::string gauc_svg() const;
};

/// Penalty-weight sensitivity on the full model (alpha = 0 is the no-penalty
/// base).
SweepResult alpha_sweep(const Dataset& ds, const std::vector<double>& alphas,
                        const std::vector<std::uint64_t>& seeds,
                        const ModelConfig& base_model, const TrainConfig& base_train);

/// Embedding-count sensitivity: the full model vs the scalar-gate variant
/// without the covariance penalty, at each table count.
SweepResult embedding_sweep(const Dataset& ds, const std::vector<std::size_t>& tables,
                            const std::vector<std::uint64_t>& seeds,
                            const ModelConfig& base_model, const TrainConfig& base_train);

}  // namespace croc
