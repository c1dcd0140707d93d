#include "croc/losses.hpp"

#include <algorithm>
#include <random>

#include <json.hpp>

namespace croc {

std::string pair_set_name(PairSet p) {
  return p == PairSet::StrictCross ? "strict-cross" : "literal";
}

PairSet pair_set_from_name(const std::string& s) {
  if (s == "strict-cross") return PairSet::StrictCross;
  if (s == "literal") return PairSet::Literal;
  throw Error("unknown pair set: " + s);
}

std::string alt_loss_name(AltLoss a) {
  switch (a) {
    case AltLoss::None: return "none";
    case AltLoss::Dot: return "dot";
    case AltLoss::Cos: return "cos";
  }
  throw Error("bad alt loss");
}

AltLoss alt_loss_from_name(const std::string& s) {
  if (s == "none") return AltLoss::None;
  if (s == "dot") return AltLoss::Dot;
  if (s == "cos") return AltLoss::Cos;
  throw Error("unknown alt loss: " + s);
}

std::string LossConfig::to_json() const {
  nlohmann::json j;
  j["alpha"] = alpha;
  j["pair_set"] = pair_set_name(pair_set);
  j["cov_sample"] = cov_sample;
  j["alt"] = alt_loss_name(alt);
  return j.dump(2);
}

LossConfig LossConfig::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  LossConfig c;
  if (j.contains("alpha")) c.alpha = j.at("alpha").get<double>();
  if (j.contains("pair_set")) c.pair_set = pair_set_from_name(j.at("pair_set").get<std::string>());
  if (j.contains("cov_sample")) c.cov_sample = j.at("cov_sample").get<std::size_t>();
  if (j.contains("alt")) c.alt = alt_loss_from_name(j.at("alt").get<std::string>());
  if (c.alpha < 0) throw Error("alpha must be >= 0");
  return c;
}

std::vector<Tensor> bce_per_domain(Tape& tape, const std::vector<Tensor>& preds,
                                   const Batch& batch) {
  if (preds.size() != batch.domain_rows.size())
    throw Error("bce_per_domain: prediction/domain count mismatch");
  std::vector<Tensor> out(preds.size());
  for (std::size_t s = 0; s < preds.size(); ++s) {
    const auto& rows = batch.domain_rows[s];
    if (rows.empty()) continue;
    std::vector<std::int64_t> idx(rows.begin(), rows.end());
    Tensor p = tape.gather_rows(preds[s], idx);
    std::vector<double> y(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) y[i] = batch.labels[rows[i]];
    Tensor target = Tensor::from({rows.size(), 1}, y);
    out[s] = tape.bce(p, target);
  }
  return out;
}

namespace {

std::vector<std::pair<std::size_t, std::size_t>> select_pairs(std::size_t k, PairSet pairs) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t p = 0; p < k; ++p) {
    const std::size_t q_end = pairs == PairSet::Literal ? p + 1 : p;
    for (std::size_t q = 0; q < q_end; ++q) out.emplace_back(p, q);
  }
  return out;
}

void check_expert_shapes(const std::vector<Tensor>& experts) {
  if (experts.empty()) throw Error("covloss: no experts");
  const Shape& s0 = experts[0].shape();
  if (s0.size() != 2) throw Error("covloss: experts must be rank-2");
  if (s0[0] < 2) throw Error("covloss: needs at least 2 rows to center");
  for (const Tensor& e : experts)
    if (e.shape() != s0) throw Error("covloss: expert shape mismatch");
}

Tensor covloss_on(Tape& tape, const std::vector<Tensor>& experts, PairSet pairs) {
  check_expert_shapes(experts);
  const double d = static_cast<double>(experts[0].shape()[1]);
  const auto pq = select_pairs(experts.size(), pairs);
  if (pq.empty()) return Tensor::scalar(0.0);

  std::vector<Tensor> centered(experts.size());
  for (std::size_t p = 0; p < experts.size(); ++p)
    centered[p] = tape.sub(experts[p], tape.mean_rows(experts[p]));

  Tensor acc;
  for (const auto& [p, q] : pq) {
    Tensor cross = tape.matmul(tape.transpose(centered[p]), centered[q]);
    Tensor term = tape.abs_sum(cross);
    acc = acc.defined() ? tape.add(acc, term) : term;
  }
  return tape.scale(acc, 1.0 / (d * d));
}

}  // namespace

Tensor covloss(Tape& tape, const std::vector<Tensor>& experts, PairSet pairs) {
  return covloss_on(tape, experts, pairs);
}

Tensor covloss_sampled(Tape& tape, const std::vector<Tensor>& experts, std::size_t n_sub,
                       std::uint64_t seed, PairSet pairs) {
  check_expert_shapes(experts);
  const std::size_t n = experts[0].shape()[0];
  if (n_sub < 2) throw Error("covloss_sampled: need at least 2 rows");
  if (n_sub > n) throw Error("covloss_sampled: subset larger than batch");
  if (n_sub == n) return covloss_on(tape, experts, pairs);

  // Partial Fisher-Yates, then sort so gather order is canonical.
  std::mt19937_64 rng(splitmix64(seed));
  std::vector<std::int64_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<std::int64_t>(i);
  for (std::size_t i = 0; i < n_sub; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(n_sub);
  std::sort(idx.begin(), idx.end());

  std::vector<Tensor> sub(experts.size());
  for (std::size_t p = 0; p < experts.size(); ++p) sub[p] = tape.gather_rows(experts[p], idx);
  Tensor partial = covloss_on(tape, sub, pairs);
  return tape.scale(partial, static_cast<double>(n) / static_cast<double>(n_sub));
}

Tensor alt_disentangle_loss(Tape& tape, AltLoss kind, const std::vector<Tensor>& experts) {
  if (kind == AltLoss::None) throw Error("alt_disentangle_loss: kind is none");
  check_expert_shapes(experts);
  const std::size_t n = experts[0].shape()[0];
  const auto pq = select_pairs(experts.size(), PairSet::StrictCross);
  if (pq.empty()) return Tensor::scalar(0.0);

  std::vector<Tensor> inv_norm(experts.size());
  if (kind == AltLoss::Cos) {
    for (std::size_t p = 0; p < experts.size(); ++p) {
      Tensor sq = tape.row_sum(tape.mul(experts[p], experts[p]));
      // Epsilon under the root keeps zero rows finite (floor ~1e-12 on the norm).
      inv_norm[p] = tape.sqrt(tape.add_const(sq, 1e-24));
    }
  }

  Tensor acc;
  for (const auto& [p, q] : pq) {
    Tensor dots = tape.row_sum(tape.mul(experts[p], experts[q]));
    if (kind == AltLoss::Cos)
      dots = tape.div(dots, tape.mul(inv_norm[p], inv_norm[q]));
    Tensor term = tape.abs_sum(dots);
    acc = acc.defined() ? tape.add(acc, term) : term;
  }
  return tape.scale(acc, 1.0 / (static_cast<double>(pq.size()) * static_cast<double>(n)));
}

double LossParts::bce_value(std::size_t domain) const {
  if (domain >= bce.size() || !bce[domain].defined()) return 0.0;
  return bce[domain].item();
}

double LossParts::disentangle_value() const {
  return disentangle.defined() ? disentangle.item() : 0.0;
}

LossParts total_loss(Tape& tape, const LossConfig& config,
                     const std::vector<Tensor>& preds, const Batch& batch,
                     const std::vector<Tensor>& experts, std::uint64_t cov_seed) {
  LossParts parts;
  parts.bce = bce_per_domain(tape, preds, batch);

  Tensor acc;
  for (const Tensor& b : parts.bce) {
    if (!b.defined()) continue;
    acc = acc.defined() ? tape.add(acc, b) : b;
  }
  if (!acc.defined()) throw Error("total_loss: batch has no samples");

  if (config.alpha > 0.0) {
    if (config.alt != AltLoss::None) {
      parts.disentangle = alt_disentangle_loss(tape, config.alt, experts);
    } else if (config.cov_sample > 0 && config.cov_sample < experts[0].shape()[0]) {
      parts.disentangle = covloss_sampled(tape, experts, config.cov_sample, cov_seed,
                                          config.pair_set);
    } else {
      parts.disentangle = covloss(tape, experts, config.pair_set);
    }
    acc = tape.add(acc, tape.scale(parts.disentangle, config.alpha));
  }
  parts.total = acc;
  return parts;
}

}  // namespace croc
