#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "croc/data.hpp"
#include "croc/tensor.hpp"

namespace croc {

enum class PairSet { StrictCross, Literal };  // p > q, or the literal p >= q
enum class AltLoss { None, Dot, Cos };

std::string pair_set_name(PairSet p);
PairSet pair_set_from_name(const std::string& s);
std::string alt_loss_name(AltLoss a);
AltLoss alt_loss_from_name(const std::string& s);

struct LossConfig {
  double alpha = 1e-4;                     // disentangle-loss weight
  PairSet pair_set = PairSet::StrictCross;
  std::size_t cov_sample = 0;              // rows used by the sampled estimator; 0 = full batch
  AltLoss alt = AltLoss::None;             // replaces the covariance penalty when set

  std::string to_json() const;
  static LossConfig from_json(const std::string& text);
};

/// Per-domain mean BCE. Result has one slot per domain; domains absent from
/// the batch get an undefined tensor (they contribute 0 to this batch).
std::vector<Tensor> bce_per_domain(Tape& tape, const std::vector<Tensor>& preds,
                                   const Batch& batch);

/// Cross-expert covariance penalty: (1/d^2) * sum over selected (p,q) pairs of
/// || centered(O_p)^T centered(O_q) ||_1. No 1/N factor; alpha absorbs scale.
/// With fewer than one selected pair the result is a constant 0.
Tensor covloss(Tape& tape, const std::vector<Tensor>& experts, PairSet pairs);

/// covloss on a uniform row subset (same rows for every expert), rescaled by
/// N/n_sub so it estimates the full-batch value. n_sub = N reproduces covloss
/// bit-for-bit. Deterministic under seed.
Tensor covloss_sampled(Tape& tape, const std::vector<Tensor>& experts, std::size_t n_sub,
                       std::uint64_t seed, PairSet pairs);

/// Mean |dot| or |cosine| over strict-cross expert pairs and samples.
Tensor alt_disentangle_loss(Tape& tape, AltLoss kind, const std::vector<Tensor>& experts);

struct LossParts {
  std::vector<Tensor> bce;  // per domain; undefined when absent from batch
  Tensor disentangle;       // undefined when alpha = 0
  Tensor total;

  double bce_value(std::size_t domain) const;
  double disentangle_value() const;
  double total_value() const { return total.item(); }
};

/// Assembles sum of per-domain BCE plus alpha times the configured
/// disentangle term. cov_seed feeds the sampled estimator when enabled.
LossParts total_loss(Tape& tape, const LossConfig& config,
                     const std::vector<Tensor>& preds, const Batch& batch,
                     const std::vector<Tensor>& experts, std::uint64_t cov_seed);

}  // namespace croc
