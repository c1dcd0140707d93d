#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "croc/tensor.hpp"

namespace croc {

enum class FieldRole { User, Item, Context, Domain };

std::string role_name(FieldRole r);
FieldRole role_from_name(const std::string& s);

struct FieldSchema {
  std::string name;
  std::size_t vocab = 0;
  FieldRole role = FieldRole::Context;
};

struct Schema {
  std::vector<FieldSchema> fields;

  void validate() const;  // exactly one domain field, vocab >= 1, unique names
  std::size_t domain_field() const;
  std::size_t user_field() const;  // first field with role User
  std::size_t num_domains() const { return fields[domain_field()].vocab; }
  const FieldSchema* find(const std::string& name) const;
  std::size_t index_of(const std::string& name) const;

  std::string to_json() const;
  static Schema from_json(const std::string& text);
};

struct Sample {
  std::vector<std::int64_t> ids;  // one per schema field
  int domain = 0;
  int label = 0;
  std::int64_t user_id = 0;  // raw id kept for gAUC grouping, survives filtering
};

struct Dataset {
  Schema schema;
  std::vector<Sample> samples;
  std::vector<std::size_t> domain_counts;

  std::size_t size() const { return samples.size(); }
  std::size_t num_domains() const { return schema.num_domains(); }
  void recount_domains();
  std::uint64_t fingerprint() const;
};

struct GenSpec {
  // Per-domain sample counts; Kuairand-like 2.4 : 7.8 : 0.4 : 0.9 : 0.2 ratios.
  std::vector<std::size_t> sizes = {2400, 7800, 400, 900, 200};
  std::size_t users = 400;
  std::size_t items = 600;
  std::size_t context_vocab = 8;
  double conflict_rate = 0.3;
  double zipf_exponent = 1.0;   // item popularity skew
  double label_scale = 7.0;     // steepness of the planted affinity -> label link
  std::uint64_t seed = 42;

  std::string to_json() const;
  static GenSpec from_json(const std::string& text);
};

/// Planted-affinity generator. Every (user, item) pair carries latent
/// per-domain affinities with a shared sign; with probability conflict_rate
/// the sign is flipped in one of two sampled domains, so cross-domain
/// interest conflicts exist at a controlled rate. Labels are Bernoulli with
/// probability sigmoid(label_scale * affinity + domain bias). Pure function
/// of spec.
Dataset generate_synthetic(const GenSpec& spec);

struct Batch {
  std::vector<std::vector<std::int64_t>> field_ids;  // [field][row]
  std::vector<double> labels;
  std::vector<int> label_ints;
  std::vector<int> domains;
  std::vector<std::int64_t> user_ids;
  std::vector<std::vector<std::int64_t>> domain_rows;  // [domain] -> row indices
  std::vector<std::size_t> sample_indices;             // rows back into the dataset

  std::size_t size() const { return labels.size(); }
};

Batch make_batch(const Dataset& ds, const std::vector<std::size_t>& indices);

/// Seed-shuffled mini-batches covering the dataset exactly once.
std::vector<Batch> batch_iter(const Dataset& ds, std::size_t batch_size,
                              std::uint64_t seed);

/// Values occurring fewer than min_count times are remapped to the reserved
/// default id 0; survivors are renumbered densely (ascending original id) and
/// vocabularies shrink to match. The domain field is structural and exempt.
Dataset filter_low_frequency(const Dataset& ds, std::size_t min_count = 10);

/// Per-domain stratified split; fraction goes to the first (train) part.
std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double train_fraction,
                                          std::uint64_t seed);

// CSV + schema JSON persistence. save_dataset writes data.csv and schema.json
// under dir; load_dataset reads them back.
std::string dataset_to_csv(const Dataset& ds);
Dataset dataset_from_csv(const std::string& text, const Schema& schema);
void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace croc
