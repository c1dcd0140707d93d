#pragma once

#include <string>
#include <vector>

#include "croc/data.hpp"
#include "croc/tensor.hpp"

namespace croc {

/// Named parameter registry. Names are stable across runs and drive the
/// checkpoint layout and Adam state keys.
class ParamStore {
 public:
  Tensor add(const std::string& name, Tensor t);
  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  Tensor* find(const std::string& name);
  const Tensor* find(const std::string& name) const;
  void zero_grads();
  std::size_t total_elements() const;

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

/// M parallel embedding table sets over one field schema. Table p, field f is
/// a V_f x d_e parameter named "bank{p}/{field}". Whether a table is shared
/// or bound to a domain is the model's interpretation, not the bank's.
class EmbeddingBank {
 public:
  static EmbeddingBank init(const Schema& schema, std::size_t tables, std::size_t dim,
                            std::uint64_t seed, ParamStore& params);

  std::size_t num_tables() const { return tables_.size(); }
  std::size_t dim() const { return dim_; }
  std::size_t concat_width() const;  // F * d_e
  const Schema& schema() const { return schema_; }

  /// Per-sample concatenation of every field's row from table p, schema order.
  Tensor lookup_concat(Tape& tape, std::size_t table, const Batch& batch) const;

  const Tensor& table(std::size_t p, std::size_t field) const;

 private:
  Schema schema_;
  std::size_t dim_ = 0;
  std::vector<std::vector<Tensor>> tables_;  // [table][field]
};

/// Embedding tables for the prior fields only; output width l = F' * d_e.
class PriorEmbeddingTable {
 public:
  static PriorEmbeddingTable init(const Schema& schema,
                                  const std::vector<std::string>& prior_fields,
                                  std::size_t dim, std::uint64_t seed, ParamStore& params);

  std::size_t width() const { return field_indices_.size() * dim_; }
  Tensor lookup(Tape& tape, const Batch& batch) const;

 private:
  std::vector<std::size_t> field_indices_;
  std::size_t dim_ = 0;
  std::vector<Tensor> tables_;
};

/// Rows i.i.d. uniform in [-1/sqrt(d_e), +1/sqrt(d_e)], sub-seeded per
/// (table, field) so tables start decorrelated but reinit is reproducible.
Tensor init_embedding_table(std::size_t vocab, std::size_t dim, std::uint64_t seed,
                            std::size_t table_index, std::size_t field_index);

}  // namespace croc
