#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "croc/data.hpp"
#include "croc/losses.hpp"
#include "croc/model.hpp"

namespace croc {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. State is keyed by parameter name so it survives
/// checkpoints. A NaN gradient aborts, naming the offending parameter.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(ParamStore& params);

  const AdamConfig& config() const { return cfg_; }
  std::uint64_t steps() const { return t_; }

  // Checkpoint plumbing: moments as named vectors plus the step counter.
  std::map<std::string, std::vector<double>> state_m() const { return m_; }
  std::map<std::string, std::vector<double>> state_v() const { return v_; }
  void restore(std::map<std::string, std::vector<double>> m,
               std::map<std::string, std::vector<double>> v, std::uint64_t t);

 private:
  AdamConfig cfg_;
  std::map<std::string, std::vector<double>> m_;
  std::map<std::string, std::vector<double>> v_;
  std::uint64_t t_ = 0;
};

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 256;
  double train_fraction = 0.8;  // stratified per domain
  AdamConfig adam;
  LossConfig loss;
  std::uint64_t seed = 17;       // shuffling, split, covariance sampling
  std::size_t eval_every = 1;    // epochs between held-out AUC/gAUC logs
  std::size_t ia_every = 1;      // epochs between embedding-table IA logs
  std::size_t checkpoint_every = 1;
  std::string ref_checkpoint;    // optional: log diversity index against this

  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
};

struct MetricRow {
  std::size_t step = 0;       // epoch
  std::string domain;         // "0".."S-1" or "overall"
  std::string metric;
  double value = 0.0;
};

struct IaRow {
  std::size_t step = 0;
  std::string table;
  double value = 0.0;
};

struct TrainResult {
  std::vector<MetricRow> metrics;
  std::vector<IaRow> ia;
  std::size_t steps = 0;  // optimizer steps taken
  double wall_seconds = 0.0;

  /// Last logged value for (domain, metric); NaN when never logged.
  double last(const std::string& domain, const std::string& metric) const;
  std::string metrics_csv() const;  // step,domain,metric,value
  std::string ia_csv() const;       // step,table,ia
};

/// Mini-batch training on a stratified split of ds. When out_dir is nonempty,
/// checkpoints land there ("checkpoint.bin") at the configured cadence; a
/// divergence abort keeps the last one on disk. Pass an Adam to continue a
/// run; otherwise a fresh one is used.
TrainResult train(Model& model, const Dataset& ds, const TrainConfig& cfg,
                  const std::string& out_dir = "", Adam* optimizer = nullptr);

/// Per-table information abundance rows for the current parameters: the
/// stacked bank tables ("bank{p}") plus each field table ("bank{p}/{field}").
std::vector<IaRow> model_ia_rows(const Model& model, std::size_t step);

// ---- checkpoints ------------------------------------------------------
// Binary layout (little-endian): magic "CROCCKP1", u32 version, u64 digest of
// the two config strings, length-prefixed model config JSON and train config
// JSON, u64 dataset fingerprint, u64 optimizer step, u32 tensor count, then
// name-sorted tensors as (name, rank, dims..., f64 values...).

struct Checkpoint {
  std::string model_config_json;
  std::string train_config_json;
  std::uint64_t dataset_fingerprint = 0;
  std::uint64_t step = 0;
  std::vector<std::pair<std::string, std::pair<Shape, std::vector<double>>>> tensors;

  const std::vector<double>* find(const std::string& name) const;
};

std::string encode_checkpoint(const Model& model, const Adam& adam, const TrainConfig& cfg,
                              std::uint64_t dataset_fingerprint, std::uint64_t step);
void save_checkpoint(const std::string& path, const Model& model, const Adam& adam,
                     const TrainConfig& cfg, std::uint64_t dataset_fingerprint,
                     std::uint64_t step);
Checkpoint decode_checkpoint(const std::string& bytes);
Checkpoint load_checkpoint(const std::string& path);

/// Rebuild the model a checkpoint was saved from. The schema must match the
/// one the checkpoint was trained on (tensor shapes are verified).
Model model_from_checkpoint(const Checkpoint& ckpt, const Schema& schema);
void restore_model_params(Model& model, const Checkpoint& ckpt);
void restore_adam(Adam& adam, const Checkpoint& ckpt, const Model& model);

}  // namespace croc
