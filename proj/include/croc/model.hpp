#pragma once

#include <optional>
#include <string>
#include <vector>

#include "croc/data.hpp"
#include "croc/embedding.hpp"
#include "croc/tensor.hpp"

namespace croc {

enum class Variant {
  SharedBottom,
  MMoE,
  PLE,
  MeMMoE,
  MePLE,
  SDEM,
  Crocodile,
};

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& s);
std::vector<std::string> variant_names();

enum class GateKind { Default, VectorSoftmax, PriorScalar, PriorElementwise };

std::string gate_name(GateKind g);
GateKind gate_from_name(const std::string& s);

struct ModelConfig {
  Variant variant = Variant::Crocodile;
  std::size_t embed_tables = 5;  // M; single-embedding and domain-bound variants ignore it
  std::size_t experts = 0;       // MMoE expert count; 0 means "match embed_tables"
  std::size_t embed_dim = 8;     // d_e
  std::size_t expert_dim = 16;   // d
  std::vector<std::size_t> expert_hidden = {64};
  std::vector<std::size_t> tower_hidden = {32};
  std::size_t experts_per_table = 1;  // escape hatch: K = M * experts_per_table
  std::size_t ple_shared_experts = 1;
  GateKind gate = GateKind::Default;  // Crocodile only: PriorElementwise or PriorScalar
  std::vector<std::string> prior_fields = {"user", "item", "domain"};
  std::uint64_t seed = 1;

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

// One MLP: widths {in, hidden..., out}, ReLU between layers, linear final.
struct Mlp {
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;

  static Mlp init(const std::string& prefix, const std::vector<std::size_t>& widths,
                  std::uint64_t seed, ParamStore& params);
  Tensor forward(Tape& tape, const Tensor& x) const;
};

struct Binding {
  bool domain_bound = false;
  int domain = -1;  // meaningful only when domain_bound
};

struct ForwardOut {
  std::vector<Tensor> domain_pred;  // per domain, N x 1 in (0,1)
  std::vector<Tensor> expert_out;   // per expert, N x d
};

/// One of the seven architecture variants over a shared embedding bank.
/// Every expert is evaluated for every sample; domain routing happens in the
/// per-domain mixtures and losses, never by skipping experts.
class Model {
 public:
  Model(const ModelConfig& config, const Schema& schema);

  ForwardOut forward(Tape& tape, const Batch& batch) const;

  const ModelConfig& config() const { return config_; }
  const Schema& schema() const { return schema_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  std::size_t num_domains() const { return n_domains_; }
  std::size_t num_experts() const { return experts_.size(); }
  std::size_t num_tables() const { return bank_.num_tables(); }
  Binding expert_binding(std::size_t k) const { return expert_bindings_.at(k); }
  Binding table_binding(std::size_t p) const { return table_bindings_.at(p); }
  bool domain_bound_experts() const;  // PLE / ME-PLE / SDEM

  const EmbeddingBank& bank() const { return bank_; }

  /// All field tables of bank table p stacked vertically: (sum V_f) x d_e.
  std::vector<double> stacked_table(std::size_t p, std::size_t& rows,
                                    std::size_t& cols) const;

  /// Parameter names a single-domain batch of domain s can reach with nonzero
  /// gradients, given the variant's routing. Drives the structural tests.
  std::vector<std::string> domain_reachable_params(int domain) const;

  GateKind effective_gate() const { return gate_; }

 private:
  Tensor mixture_for_domain(Tape& tape, std::size_t domain,
                            const std::vector<Tensor>& expert_out, const Tensor& prior,
                            const std::vector<Tensor>& embeddings) const;

  ModelConfig config_;
  Schema schema_;
  std::size_t n_domains_ = 0;
  ParamStore params_;
  EmbeddingBank bank_;
  std::optional<PriorEmbeddingTable> prior_;
  GateKind gate_ = GateKind::VectorSoftmax;

  std::vector<Mlp> experts_;
  std::vector<std::size_t> expert_table_;  // expert k reads this bank table
  std::vector<Binding> expert_bindings_;
  std::vector<Binding> table_bindings_;
  std::vector<std::vector<std::size_t>> gate_candidates_;  // per domain: expert ids
  std::vector<Tensor> gate_weights_;                       // per domain
  std::vector<Mlp> towers_;
};

}  // namespace croc
