#include "croc/model.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "croc/io.hpp"

namespace croc {

using nlohmann::json;

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::SharedBottom: return "shared-bottom";
    case Variant::MMoE: return "mmoe";
    case Variant::PLE: return "ple";
    case Variant::MeMMoE: return "me-mmoe";
    case Variant::MePLE: return "me-ple";
    case Variant::SDEM: return "sdem";
    case Variant::Crocodile: return "crocodile";
  }
  throw Error("variant_name: bad variant");
}

std::vector<std::string> variant_names() {
  return {"shared-bottom", "mmoe", "ple", "me-mmoe", "me-ple", "sdem", "crocodile"};
}

Variant variant_from_name(const std::string& s) {
  if (s == "shared-bottom") return Variant::SharedBottom;
  if (s == "mmoe") return Variant::MMoE;
  if (s == "ple") return Variant::PLE;
  if (s == "me-mmoe") return Variant::MeMMoE;
  if (s == "me-ple") return Variant::MePLE;
  if (s == "sdem") return Variant::SDEM;
  if (s == "crocodile") return Variant::Crocodile;
  std::string valid;
  for (const auto& n : variant_names()) valid += (valid.empty() ? "" : ", ") + n;
  throw Error("unknown variant '" + s + "', expected one of: " + valid);
}

std::string gate_name(GateKind g) {
  switch (g) {
    case GateKind::Default: return "default";
    case GateKind::VectorSoftmax: return "vector-softmax";
    case GateKind::PriorScalar: return "prior-scalar";
    case GateKind::PriorElementwise: return "prior-elementwise";
  }
  throw Error("gate_name: bad gate kind");
}

GateKind gate_from_name(const std::string& s) {
  if (s == "default") return GateKind::Default;
  if (s == "vector-softmax") return GateKind::VectorSoftmax;
  if (s == "prior-scalar") return GateKind::PriorScalar;
  if (s == "prior-elementwise") return GateKind::PriorElementwise;
  throw Error("unknown gate kind '" + s + "'");
}

std::string ModelConfig::to_json() const {
  json j;
  j["variant"] = variant_name(variant);
  j["embed_tables"] = embed_tables;
  j["experts"] = experts;
  j["embed_dim"] = embed_dim;
  j["expert_dim"] = expert_dim;
  j["expert_hidden"] = expert_hidden;
  j["tower_hidden"] = tower_hidden;
  j["experts_per_table"] = experts_per_table;
  j["ple_shared_experts"] = ple_shared_experts;
  j["gate"] = gate_name(gate);
  j["prior_fields"] = prior_fields;
  j["seed"] = seed;
  return j.dump(2) + "\n";
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  ModelConfig c;
  json j = json::parse(text);
  if (j.contains("variant")) c.variant = variant_from_name(j["variant"].get<std::string>());
  if (j.contains("embed_tables")) c.embed_tables = j["embed_tables"].get<std::size_t>();
  if (j.contains("experts")) c.experts = j["experts"].get<std::size_t>();
  if (j.contains("embed_dim")) c.embed_dim = j["embed_dim"].get<std::size_t>();
  if (j.contains("expert_dim")) c.expert_dim = j["expert_dim"].get<std::size_t>();
  if (j.contains("expert_hidden"))
    c.expert_hidden = j["expert_hidden"].get<std::vector<std::size_t>>();
  if (j.contains("tower_hidden"))
    c.tower_hidden = j["tower_hidden"].get<std::vector<std::size_t>>();
  if (j.contains("experts_per_table"))
    c.experts_per_table = j["experts_per_table"].get<std::size_t>();
  if (j.contains("ple_shared_experts"))
    c.ple_shared_experts = j["ple_shared_experts"].get<std::size_t>();
  if (j.contains("gate")) c.gate = gate_from_name(j["gate"].get<std::string>());
  if (j.contains("prior_fields"))
    c.prior_fields = j["prior_fields"].get<std::vector<std::string>>();
  if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
  return c;
}

Mlp Mlp::init(const std::string& prefix, const std::vector<std::size_t>& widths,
              std::uint64_t seed, ParamStore& params) {
  if (widths.size() < 2) throw Error("mlp: need at least input and output widths");
  Mlp mlp;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const std::string wname = prefix + "/w" + std::to_string(i);
    const double bound = 1.0 / std::sqrt(static_cast<double>(widths[i]));
    std::mt19937_64 rng(splitmix64(seed ^ fnv1a64(wname)));
    Tensor w = Tensor::uniform({widths[i], widths[i + 1]}, -bound, bound, rng, true);
    Tensor b = Tensor::zeros({1, widths[i + 1]}, true);
    mlp.weights.push_back(params.add(wname, w));
    mlp.biases.push_back(params.add(prefix + "/b" + std::to_string(i), b));
  }
  return mlp;
}

Tensor Mlp::forward(Tape& tape, const Tensor& x) const {
  Tensor h = x;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    h = tape.add(tape.matmul(h, weights[i]), biases[i]);
    if (i + 1 < weights.size()) h = tape.relu(h);
  }
  return h;
}

namespace {

std::vector<std::size_t> expert_widths(const ModelConfig& c, std::size_t in_width) {
  std::vector<std::size_t> w{in_width};
  w.insert(w.end(), c.expert_hidden.begin(), c.expert_hidden.end());
  w.push_back(c.expert_dim);
  return w;
}

std::vector<std::size_t> tower_widths(const ModelConfig& c) {
  std::vector<std::size_t> w{c.expert_dim};
  w.insert(w.end(), c.tower_hidden.begin(), c.tower_hidden.end());
  w.push_back(1);
  return w;
}

}  // namespace

Model::Model(const ModelConfig& config, const Schema& schema)
    : config_(config), schema_(schema) {
  schema_.validate();
  n_domains_ = schema_.num_domains();
  const std::size_t S = n_domains_;
  const Variant v = config_.variant;

  if (config_.gate != GateKind::Default && v != Variant::Crocodile) {
    throw Error("gate override is only meaningful for crocodile; " + variant_name(v) +
                " has a fixed gate");
  }

  // Table layout per variant.
  std::size_t n_tables = 0;
  switch (v) {
    case Variant::SharedBottom:
    case Variant::MMoE:
    case Variant::PLE:
      n_tables = 1;
      break;
    case Variant::MeMMoE:
    case Variant::Crocodile:
      n_tables = std::max<std::size_t>(1, config_.embed_tables);
      break;
    case Variant::MePLE:
    case Variant::SDEM:
      n_tables = 1 + S;  // shared table first, then one per domain
      break;
  }
  bank_ = EmbeddingBank::init(schema_, n_tables, config_.embed_dim, config_.seed, params_);
  table_bindings_.assign(n_tables, {});
  if (v == Variant::MePLE || v == Variant::SDEM) {
    for (std::size_t s = 0; s < S; ++s) table_bindings_[1 + s] = {true, static_cast<int>(s)};
  }

  gate_ = GateKind::VectorSoftmax;
  if (v == Variant::SharedBottom) gate_ = GateKind::Default;  // no gate
  if (v == Variant::Crocodile) {
    gate_ = config_.gate == GateKind::PriorScalar ? GateKind::PriorScalar
                                                  : GateKind::PriorElementwise;
    prior_ = PriorEmbeddingTable::init(schema_, config_.prior_fields, config_.embed_dim,
                                       config_.seed, params_);
  }

  // Experts: which table each one reads, and domain bindings.
  const std::size_t in_width = bank_.concat_width();
  auto add_expert = [&](std::size_t table, Binding binding) {
    const std::size_t k = experts_.size();
    experts_.push_back(Mlp::init("expert" + std::to_string(k),
                                 expert_widths(config_, in_width), config_.seed, params_));
    expert_table_.push_back(table);
    expert_bindings_.push_back(binding);
  };
  switch (v) {
    case Variant::SharedBottom:
      add_expert(0, {});
      break;
    case Variant::MMoE: {
      const std::size_t k = config_.experts > 0 ? config_.experts
                                                : std::max<std::size_t>(1, config_.embed_tables);
      for (std::size_t i = 0; i < k; ++i) add_expert(0, {});
      break;
    }
    case Variant::PLE:
      for (std::size_t i = 0; i < config_.ple_shared_experts; ++i) add_expert(0, {});
      for (std::size_t s = 0; s < S; ++s) add_expert(0, {true, static_cast<int>(s)});
      break;
    case Variant::MeMMoE:
    case Variant::Crocodile:
      for (std::size_t p = 0; p < n_tables; ++p)
        for (std::size_t r = 0; r < std::max<std::size_t>(1, config_.experts_per_table); ++r)
          add_expert(p, {});
      break;
    case Variant::MePLE:
    case Variant::SDEM:
      for (std::size_t p = 0; p < n_tables; ++p) add_expert(p, table_bindings_[p]);
      break;
  }

  // Per-domain gate candidates and weights.
  gate_candidates_.resize(S);
  const std::size_t K = experts_.size();
  for (std::size_t s = 0; s < S; ++s) {
    switch (v) {
      case Variant::SharedBottom:
        gate_candidates_[s] = {0};
        break;
      case Variant::PLE:
        for (std::size_t i = 0; i < config_.ple_shared_experts; ++i)
          gate_candidates_[s].push_back(i);
        gate_candidates_[s].push_back(config_.ple_shared_experts + s);
        break;
      case Variant::MePLE:
      case Variant::SDEM:
        gate_candidates_[s] = {0, 1 + s};  // domain s sees shared + its own expert
        break;
      default: {  // MMoE, MeMMoE, Crocodile: all experts
        for (std::size_t k = 0; k < K; ++k) gate_candidates_[s].push_back(k);
        break;
      }
    }
  }
  if (v != Variant::SharedBottom) {
    for (std::size_t s = 0; s < S; ++s) {
      std::size_t gate_in = 0;
      std::size_t gate_out = gate_candidates_[s].size();
      switch (gate_) {
        case GateKind::VectorSoftmax:
          if (v == Variant::MePLE || v == Variant::SDEM) {
            gate_in = 2 * bank_.concat_width();  // shared + own-domain embedding
          } else if (v == Variant::MeMMoE) {
            gate_in = n_tables * bank_.concat_width();
          } else {
            gate_in = bank_.concat_width();
          }
          break;
        case GateKind::PriorScalar:
          gate_in = prior_->width();
          break;
        case GateKind::PriorElementwise:
          gate_in = prior_->width();
          gate_out = gate_candidates_[s].size() * config_.expert_dim;
          break;
        case GateKind::Default:
          break;
      }
      const std::string name = "gate" + std::to_string(s) + "/W";
      const double bound = 1.0 / std::sqrt(static_cast<double>(gate_in));
      std::mt19937_64 rng(splitmix64(config_.seed ^ fnv1a64(name)));
      gate_weights_.push_back(
          params_.add(name, Tensor::uniform({gate_in, gate_out}, -bound, bound, rng, true)));
    }
  }

  for (std::size_t s = 0; s < S; ++s) {
    towers_.push_back(Mlp::init("tower" + std::to_string(s), tower_widths(config_),
                                config_.seed, params_));
  }
}

bool Model::domain_bound_experts() const {
  return config_.variant == Variant::PLE || config_.variant == Variant::MePLE ||
         config_.variant == Variant::SDEM;
}

Tensor Model::mixture_for_domain(Tape& tape, std::size_t domain,
                                 const std::vector<Tensor>& expert_out, const Tensor& prior,
                                 const std::vector<Tensor>& embeddings) const {
  const Variant v = config_.variant;
  if (v == Variant::SharedBottom) return expert_out[0];

  const auto& cands = gate_candidates_[domain];
  const std::size_t d = config_.expert_dim;

  std::vector<Tensor> cand_out;
  cand_out.reserve(cands.size());
  for (std::size_t k : cands) cand_out.push_back(expert_out[k]);

  if (gate_ == GateKind::PriorElementwise) {
    Tensor flat = tape.matmul(prior, gate_weights_[domain]);  // N x (K*d)
    const std::size_t n = flat.rows();
    Tensor logits = tape.reshape(flat, {n, cands.size(), d});
    Tensor g = tape.softmax(logits, 1);
    Tensor stack = tape.reshape(tape.concat_cols(cand_out), {n, cands.size(), d});
    return tape.sum_mid(tape.mul(g, stack));
  }

  Tensor gate_in;
  if (gate_ == GateKind::PriorScalar) {
    gate_in = prior;
  } else if (v == Variant::MePLE || v == Variant::SDEM) {
    gate_in = tape.concat_cols(std::vector<Tensor>{embeddings[0], embeddings[1 + domain]});
  } else if (v == Variant::MeMMoE) {
    gate_in = tape.concat_cols(embeddings);
  } else {
    gate_in = embeddings[0];
  }
  Tensor g = tape.softmax(tape.matmul(gate_in, gate_weights_[domain]), 1);
  Tensor t;
  for (std::size_t c = 0; c < cand_out.size(); ++c) {
    Tensor term = tape.scale_rows(cand_out[c], tape.slice_cols(g, c, c + 1));
    t = c == 0 ? term : tape.add(t, term);
  }
  return t;
}

ForwardOut Model::forward(Tape& tape, const Batch& batch) const {
  std::vector<Tensor> embeddings;
  embeddings.reserve(bank_.num_tables());
  for (std::size_t p = 0; p < bank_.num_tables(); ++p) {
    embeddings.push_back(bank_.lookup_concat(tape, p, batch));
  }
  ForwardOut out;
  out.expert_out.reserve(experts_.size());
  for (std::size_t k = 0; k < experts_.size(); ++k) {
    out.expert_out.push_back(experts_[k].forward(tape, embeddings[expert_table_[k]]));
  }
  Tensor prior;
  if (prior_.has_value()) prior = prior_->lookup(tape, batch);

  out.domain_pred.reserve(n_domains_);
  for (std::size_t s = 0; s < n_domains_; ++s) {
    Tensor t = mixture_for_domain(tape, s, out.expert_out, prior, embeddings);
    out.domain_pred.push_back(tape.sigmoid(towers_[s].forward(tape, t)));
  }
  return out;
}

std::vector<double> Model::stacked_table(std::size_t p, std::size_t& rows,
                                         std::size_t& cols) const {
  cols = config_.embed_dim;
  rows = 0;
  for (const auto& f : schema_.fields) rows += f.vocab;
  std::vector<double> m;
  m.reserve(rows * cols);
  for (std::size_t f = 0; f < schema_.fields.size(); ++f) {
    auto vals = bank_.table(p, f).values();
    m.insert(m.end(), vals.begin(), vals.end());
  }
  return m;
}

std::vector<std::string> Model::domain_reachable_params(int domain) const {
  const Variant v = config_.variant;
  const std::size_t s = static_cast<std::size_t>(domain);
  std::vector<std::string> out;
  auto add_prefix = [&](const std::string& prefix) {
    for (const auto& [name, t] : params_.items()) {
      if (name.rfind(prefix, 0) == 0) out.push_back(name);
    }
  };

  const bool all_tables = v == Variant::MMoE || v == Variant::MeMMoE ||
                          v == Variant::Crocodile || v == Variant::SharedBottom ||
                          v == Variant::PLE;
  if (all_tables) {
    add_prefix("bank");
  } else {
    add_prefix("bank0/");
    add_prefix("bank" + std::to_string(1 + s) + "/");
  }
  if (prior_.has_value()) add_prefix("prior/");

  switch (v) {
    case Variant::SharedBottom:
      add_prefix("expert0/");
      break;
    case Variant::PLE:
      for (std::size_t i = 0; i < config_.ple_shared_experts; ++i)
        add_prefix("expert" + std::to_string(i) + "/");
      add_prefix("expert" + std::to_string(config_.ple_shared_experts + s) + "/");
      break;
    case Variant::MePLE:
    case Variant::SDEM:
      add_prefix("expert0/");
      add_prefix("expert" + std::to_string(1 + s) + "/");
      break;
    default:
      add_prefix("expert");
      break;
  }
  if (v != Variant::SharedBottom) add_prefix("gate" + std::to_string(s) + "/");
  add_prefix("tower" + std::to_string(s) + "/");
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace croc
