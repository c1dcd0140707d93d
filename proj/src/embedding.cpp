#include "croc/embedding.hpp"

#include <cmath>

namespace croc {

Tensor ParamStore::add(const std::string& name, Tensor t) {
  if (find(name) != nullptr) throw Error("param store: duplicate name " + name);
  items_.emplace_back(name, t);
  return t;
}

Tensor* ParamStore::find(const std::string& name) {
  for (auto& [n, t] : items_)
    if (n == name) return &t;
  return nullptr;
}

const Tensor* ParamStore::find(const std::string& name) const {
  for (const auto& [n, t] : items_)
    if (n == name) return &t;
  return nullptr;
}

void ParamStore::zero_grads() {
  for (auto& [n, t] : items_) t.zero_grad();
}

std::size_t ParamStore::total_elements() const {
  std::size_t acc = 0;
  for (const auto& [n, t] : items_) acc += t.numel();
  return acc;
}

Tensor init_embedding_table(std::size_t vocab, std::size_t dim, std::uint64_t seed,
                            std::size_t table_index, std::size_t field_index) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  std::mt19937_64 rng(splitmix64(splitmix64(seed ^ (0xa24baed4963ee407ULL * (table_index + 1))) ^
                                 (0x9fb21c651e98df25ULL * (field_index + 1))));
  return Tensor::uniform({vocab, dim}, -bound, bound, rng, true);
}

EmbeddingBank EmbeddingBank::init(const Schema& schema, std::size_t tables, std::size_t dim,
                                  std::uint64_t seed, ParamStore& params) {
  if (tables < 1) throw Error("embedding bank: need at least one table");
  if (dim < 1) throw Error("embedding bank: dim must be >= 1");
  schema.validate();
  EmbeddingBank bank;
  bank.schema_ = schema;
  bank.dim_ = dim;
  bank.tables_.resize(tables);
  for (std::size_t p = 0; p < tables; ++p) {
    for (std::size_t f = 0; f < schema.fields.size(); ++f) {
      Tensor t = init_embedding_table(schema.fields[f].vocab, dim, seed, p, f);
      bank.tables_[p].push_back(
          params.add("bank" + std::to_string(p) + "/" + schema.fields[f].name, t));
    }
  }
  return bank;
}

std::size_t EmbeddingBank::concat_width() const { return schema_.fields.size() * dim_; }

Tensor EmbeddingBank::lookup_concat(Tape& tape, std::size_t table, const Batch& batch) const {
  if (table >= tables_.size()) {
    throw Error("embedding bank: table index " + std::to_string(table) + " out of range");
  }
  if (batch.field_ids.size() != schema_.fields.size()) {
    throw Error("embedding bank: batch field count does not match schema");
  }
  std::vector<Tensor> parts;
  parts.reserve(schema_.fields.size());
  for (std::size_t f = 0; f < schema_.fields.size(); ++f) {
    parts.push_back(tape.gather_rows(tables_[table][f], batch.field_ids[f]));
  }
  return tape.concat_cols(parts);
}

const Tensor& EmbeddingBank::table(std::size_t p, std::size_t field) const {
  return tables_.at(p).at(field);
}

PriorEmbeddingTable PriorEmbeddingTable::init(const Schema& schema,
                                              const std::vector<std::string>& prior_fields,
                                              std::size_t dim, std::uint64_t seed,
                                              ParamStore& params) {
  if (prior_fields.empty()) throw Error("prior table: no prior fields configured");
  PriorEmbeddingTable prior;
  prior.dim_ = dim;
  for (const std::string& name : prior_fields) {
    const FieldSchema* f = schema.find(name);
    if (f == nullptr) throw Error("prior table: schema has no field named " + name);
    const std::size_t idx = schema.index_of(name);
    prior.field_indices_.push_back(idx);
    // Table index offset keeps prior sub-seeds disjoint from bank tables.
    Tensor t = init_embedding_table(f->vocab, dim, seed, 1000 + prior.field_indices_.size(), idx);
    prior.tables_.push_back(params.add("prior/" + name, t));
  }
  return prior;
}

Tensor PriorEmbeddingTable::lookup(Tape& tape, const Batch& batch) const {
  std::vector<Tensor> parts;
  parts.reserve(tables_.size());
  for (std::size_t k = 0; k < tables_.size(); ++k) {
    parts.push_back(tape.gather_rows(tables_[k], batch.field_ids.at(field_indices_[k])));
  }
  return tape.concat_cols(parts);
}

}  // namespace croc
