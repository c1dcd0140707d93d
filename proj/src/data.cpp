#include "croc/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "croc/io.hpp"

namespace croc {

using nlohmann::json;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::string role_name(FieldRole r) {
  switch (r) {
    case FieldRole::User: return "user";
    case FieldRole::Item: return "item";
    case FieldRole::Context: return "context";
    case FieldRole::Domain: return "domain";
  }
  throw Error("role_name: bad role");
}

FieldRole role_from_name(const std::string& s) {
  if (s == "user") return FieldRole::User;
  if (s == "item") return FieldRole::Item;
  if (s == "context") return FieldRole::Context;
  if (s == "domain") return FieldRole::Domain;
  throw Error("unknown field role: " + s);
}

void Schema::validate() const {
  if (fields.empty()) throw Error("schema: no fields");
  std::size_t domain_fields = 0;
  for (const auto& f : fields) {
    if (f.vocab < 1) throw Error("schema: field " + f.name + " has empty vocabulary");
    if (f.name.empty()) throw Error("schema: unnamed field");
    if (f.role == FieldRole::Domain) ++domain_fields;
  }
  if (domain_fields != 1) {
    throw Error("schema: expected exactly one domain field, found " +
                std::to_string(domain_fields));
  }
  for (std::size_t i = 0; i < fields.size(); ++i)
    for (std::size_t j = i + 1; j < fields.size(); ++j)
      if (fields[i].name == fields[j].name)
        throw Error("schema: duplicate field name " + fields[i].name);
}

std::size_t Schema::domain_field() const {
  for (std::size_t i = 0; i < fields.size(); ++i)
    if (fields[i].role == FieldRole::Domain) return i;
  throw Error("schema: no domain field");
}

std::size_t Schema::user_field() const {
  for (std::size_t i = 0; i < fields.size(); ++i)
    if (fields[i].role == FieldRole::User) return i;
  throw Error("schema: no user field");
}

const FieldSchema* Schema::find(const std::string& name) const {
  for (const auto& f : fields)
    if (f.name == name) return &f;
  return nullptr;
}

std::size_t Schema::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < fields.size(); ++i)
    if (fields[i].name == name) return i;
  throw Error("schema: no field named " + name);
}

std::string Schema::to_json() const {
  json j;
  j["fields"] = json::array();
  for (const auto& f : fields) {
    j["fields"].push_back({{"name", f.name}, {"vocab", f.vocab}, {"role", role_name(f.role)}});
  }
  return j.dump(2) + "\n";
}

Schema Schema::from_json(const std::string& text) {
  Schema s;
  json j = json::parse(text);
  for (const auto& f : j.at("fields")) {
    s.fields.push_back({f.at("name").get<std::string>(), f.at("vocab").get<std::size_t>(),
                        role_from_name(f.at("role").get<std::string>())});
  }
  s.validate();
  return s;
}

void Dataset::recount_domains() {
  domain_counts.assign(num_domains(), 0);
  for (const auto& s : samples) domain_counts[static_cast<std::size_t>(s.domain)]++;
}

std::uint64_t Dataset::fingerprint() const {
  Fnv1a f;
  f.u64(schema.fields.size());
  for (const auto& fd : schema.fields) {
    f.str(fd.name);
    f.u64(fd.vocab);
    f.str(role_name(fd.role));
  }
  f.u64(samples.size());
  for (const auto& s : samples) {
    for (std::int64_t id : s.ids) f.i64(id);
    f.i64(s.domain);
    f.i64(s.label);
    f.i64(s.user_id);
  }
  return f.value();
}

std::string GenSpec::to_json() const {
  json j;
  j["sizes"] = sizes;
  j["users"] = users;
  j["items"] = items;
  j["context_vocab"] = context_vocab;
  j["conflict_rate"] = conflict_rate;
  j["zipf_exponent"] = zipf_exponent;
  j["label_scale"] = label_scale;
  j["seed"] = seed;
  return j.dump(2) + "\n";
}

GenSpec GenSpec::from_json(const std::string& text) {
  GenSpec g;
  json j = json::parse(text);
  if (j.contains("sizes")) g.sizes = j["sizes"].get<std::vector<std::size_t>>();
  if (j.contains("users")) g.users = j["users"].get<std::size_t>();
  if (j.contains("items")) g.items = j["items"].get<std::size_t>();
  if (j.contains("context_vocab")) g.context_vocab = j["context_vocab"].get<std::size_t>();
  if (j.contains("conflict_rate")) g.conflict_rate = j["conflict_rate"].get<double>();
  if (j.contains("zipf_exponent")) g.zipf_exponent = j["zipf_exponent"].get<double>();
  if (j.contains("label_scale")) g.label_scale = j["label_scale"].get<double>();
  if (j.contains("seed")) g.seed = j["seed"].get<std::uint64_t>();
  return g;
}

namespace {

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Latent preferences of one (user, item) pair, independent of the global
// sample stream so the pair's story is identical wherever it appears.
struct PairAffinity {
  double base_sign;
  bool conflicted;
  int flip_domain;
  std::vector<double> magnitude;  // per domain, in [0.7, 1.5]

  double operator()(int domain) const {
    double a = base_sign * magnitude[static_cast<std::size_t>(domain)];
    if (conflicted && domain == flip_domain) a = -a;
    return a;
  }
};

PairAffinity pair_affinity(std::uint64_t seed, std::int64_t u, std::int64_t i,
                           std::size_t n_domains, double conflict_rate) {
  std::mt19937_64 rng(splitmix64(splitmix64(seed ^ (0x517cc1b727220a95ULL *
                                                    static_cast<std::uint64_t>(u + 1))) ^
                                 (0x2545f4914f6cdd1dULL * static_cast<std::uint64_t>(i + 1))));
  PairAffinity p;
  p.base_sign = std::bernoulli_distribution(0.5)(rng) ? 1.0 : -1.0;
  p.conflicted = std::bernoulli_distribution(conflict_rate)(rng);
  std::uniform_int_distribution<int> dom(0, static_cast<int>(n_domains) - 1);
  const int strong = dom(rng);
  int flip = dom(rng);
  while (flip == strong) flip = dom(rng);
  p.flip_domain = flip;
  p.magnitude.resize(n_domains);
  std::uniform_real_distribution<double> mag(0.7, 1.5);
  for (double& m : p.magnitude) m = mag(rng);
  return p;
}

}  // namespace

Dataset generate_synthetic(const GenSpec& spec) {
  if (spec.sizes.size() < 2) throw Error("generate_synthetic: need at least 2 domains");
  for (std::size_t n : spec.sizes)
    if (n == 0) throw Error("generate_synthetic: zero-size domain");
  if (spec.conflict_rate < 0.0 || spec.conflict_rate > 1.0)
    throw Error("generate_synthetic: conflict_rate outside [0,1]");
  if (spec.users == 0 || spec.items == 0)
    throw Error("generate_synthetic: users and items must be positive");

  const std::size_t n_domains = spec.sizes.size();
  Dataset ds;
  ds.schema.fields = {
      {"user", spec.users, FieldRole::User},
      {"item", spec.items, FieldRole::Item},
      {"ctx", spec.context_vocab, FieldRole::Context},
      {"domain", n_domains, FieldRole::Domain},
  };
  ds.schema.validate();

  std::mt19937_64 rng(splitmix64(spec.seed));
  std::uniform_real_distribution<double> bias_dist(-0.3, 0.3);
  std::vector<double> domain_bias(n_domains);
  for (double& b : domain_bias) b = bias_dist(rng);

  // Zipf CDF over items: popularity ~ (rank+1)^-zipf_exponent.
  std::vector<double> item_cdf(spec.items);
  double acc = 0.0;
  for (std::size_t i = 0; i < spec.items; ++i) {
    acc += std::pow(static_cast<double>(i + 1), -spec.zipf_exponent);
    item_cdf[i] = acc;
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto draw_item = [&]() -> std::int64_t {
    const double r = unit(rng) * acc;
    const auto it = std::lower_bound(item_cdf.begin(), item_cdf.end(), r);
    return static_cast<std::int64_t>(std::distance(item_cdf.begin(), it));
  };

  std::uniform_int_distribution<std::int64_t> user_dist(0, static_cast<std::int64_t>(spec.users) - 1);
  std::uniform_int_distribution<std::int64_t> ctx_dist(0, static_cast<std::int64_t>(spec.context_vocab) - 1);

  for (std::size_t s = 0; s < n_domains; ++s) {
    for (std::size_t n = 0; n < spec.sizes[s]; ++n) {
      const std::int64_t u = user_dist(rng);
      const std::int64_t it = draw_item();
      const std::int64_t cx = ctx_dist(rng);
      const PairAffinity aff =
          pair_affinity(spec.seed, u, it, n_domains, spec.conflict_rate);
      const double p =
          stable_sigmoid(spec.label_scale * aff(static_cast<int>(s)) + domain_bias[s]);
      const int y = std::bernoulli_distribution(p)(rng) ? 1 : 0;
      Sample sample;
      sample.ids = {u, it, cx, static_cast<std::int64_t>(s)};
      sample.domain = static_cast<int>(s);
      sample.label = y;
      sample.user_id = u;
      ds.samples.push_back(std::move(sample));
    }
  }
  ds.domain_counts = spec.sizes;
  return ds;
}

Batch make_batch(const Dataset& ds, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw Error("make_batch: empty index list");
  const std::size_t n_fields = ds.schema.fields.size();
  Batch b;
  b.field_ids.assign(n_fields, {});
  for (auto& v : b.field_ids) v.reserve(indices.size());
  b.domain_rows.assign(ds.num_domains(), {});
  b.sample_indices = indices;
  for (std::size_t row = 0; row < indices.size(); ++row) {
    const Sample& s = ds.samples.at(indices[row]);
    for (std::size_t f = 0; f < n_fields; ++f) b.field_ids[f].push_back(s.ids[f]);
    b.labels.push_back(static_cast<double>(s.label));
    b.label_ints.push_back(s.label);
    b.domains.push_back(s.domain);
    b.user_ids.push_back(s.user_id);
    b.domain_rows[static_cast<std::size_t>(s.domain)].push_back(
        static_cast<std::int64_t>(row));
  }
  return b;
}

std::vector<Batch> batch_iter(const Dataset& ds, std::size_t batch_size,
                              std::uint64_t seed) {
  if (ds.samples.empty()) throw Error("batch_iter: empty dataset");
  if (batch_size < 1) throw Error("batch_iter: batch_size must be >= 1");
  std::vector<std::size_t> perm(ds.samples.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(splitmix64(seed ^ 0xb5297a4d3f8c2e1aULL));
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < perm.size(); start += batch_size) {
    const std::size_t end = std::min(start + batch_size, perm.size());
    batches.push_back(make_batch(
        ds, std::vector<std::size_t>(perm.begin() + static_cast<std::ptrdiff_t>(start),
                                     perm.begin() + static_cast<std::ptrdiff_t>(end))));
  }
  return batches;
}

Dataset filter_low_frequency(const Dataset& ds, std::size_t min_count) {
  if (min_count < 1) throw Error("filter_low_frequency: min_count must be >= 1");
  Dataset out;
  out.schema = ds.schema;
  out.samples = ds.samples;

  for (std::size_t f = 0; f < ds.schema.fields.size(); ++f) {
    if (ds.schema.fields[f].role == FieldRole::Domain) continue;
    std::map<std::int64_t, std::size_t> counts;
    for (const auto& s : ds.samples) counts[s.ids[f]]++;
    std::map<std::int64_t, std::int64_t> remap;
    std::int64_t next = 1;  // id 0 is the reserved default bucket
    for (const auto& [value, count] : counts) {
      if (count >= min_count) remap[value] = next++;
    }
    for (auto& s : out.samples) {
      const auto it = remap.find(s.ids[f]);
      s.ids[f] = it == remap.end() ? 0 : it->second;
    }
    out.schema.fields[f].vocab = static_cast<std::size_t>(next);
  }
  out.recount_domains();
  return out;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double train_fraction,
                                          std::uint64_t seed) {
  if (train_fraction <= 0.0 || train_fraction >= 1.0)
    throw Error("split_dataset: train_fraction must be in (0,1)");
  std::vector<std::vector<std::size_t>> by_domain(ds.num_domains());
  for (std::size_t i = 0; i < ds.samples.size(); ++i)
    by_domain[static_cast<std::size_t>(ds.samples[i].domain)].push_back(i);

  std::mt19937_64 rng(splitmix64(seed ^ 0x94d049bb133111ebULL));
  Dataset train, test;
  train.schema = ds.schema;
  test.schema = ds.schema;
  for (auto& idx : by_domain) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const std::size_t n_train =
        static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(idx.size())));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      (k < n_train ? train : test).samples.push_back(ds.samples[idx[k]]);
    }
  }
  train.recount_domains();
  test.recount_domains();
  if (train.samples.empty() || test.samples.empty())
    throw Error("split_dataset: a split side came out empty; adjust the fraction");
  return {std::move(train), std::move(test)};
}

std::string dataset_to_csv(const Dataset& ds) {
  std::ostringstream out;
  bool first = true;
  for (const auto& f : ds.schema.fields) {
    out << (first ? "" : ",") << f.name;
    first = false;
  }
  // Contract columns not already covered by schema field names.
  const bool need_label = ds.schema.find("label") == nullptr;
  const bool need_user = ds.schema.find("user_id") == nullptr;
  if (need_label) out << ",label";
  if (need_user) out << ",user_id";
  out << "\n";
  for (const auto& s : ds.samples) {
    first = true;
    for (std::int64_t id : s.ids) {
      out << (first ? "" : ",") << id;
      first = false;
    }
    if (need_label) out << "," << s.label;
    if (need_user) out << "," << s.user_id;
    out << "\n";
  }
  return out.str();
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  cells.push_back(cur);
  return cells;
}

std::int64_t parse_int(const std::string& cell, std::size_t line_no, const std::string& col) {
  if (cell.empty()) throw Error("csv line " + std::to_string(line_no) + ": empty " + col);
  std::size_t pos = 0;
  std::int64_t v = 0;
  try {
    v = std::stoll(cell, &pos);
  } catch (const std::exception&) {
    throw Error("csv line " + std::to_string(line_no) + ": bad integer '" + cell +
                "' in column " + col);
  }
  if (pos != cell.size()) {
    throw Error("csv line " + std::to_string(line_no) + ": bad integer '" + cell +
                "' in column " + col);
  }
  return v;
}

}  // namespace

Dataset dataset_from_csv(const std::string& text, const Schema& schema) {
  schema.validate();
  Dataset ds;
  ds.schema = schema;

  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw Error("csv: empty file");
  const std::vector<std::string> header = split_line(line);
  auto col_of = [&](const std::string& name) -> std::ptrdiff_t {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<std::ptrdiff_t>(i);
    return -1;
  };

  std::vector<std::size_t> field_cols;
  for (const auto& f : schema.fields) {
    const std::ptrdiff_t c = col_of(f.name);
    if (c < 0) throw Error("csv: missing column " + f.name);
    field_cols.push_back(static_cast<std::size_t>(c));
  }
  const std::ptrdiff_t label_col = col_of("label");
  if (label_col < 0) throw Error("csv: missing column label");
  const std::ptrdiff_t user_id_col = col_of("user_id");  // optional, falls back to user field
  const std::size_t domain_f = schema.domain_field();
  const std::size_t user_f = schema.user_field();
  const std::size_t n_domains = schema.num_domains();

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::vector<std::string> cells = split_line(line);
    if (cells.size() != header.size()) {
      throw Error("csv line " + std::to_string(line_no) + ": expected " +
                  std::to_string(header.size()) + " cells, got " + std::to_string(cells.size()));
    }
    Sample s;
    s.ids.resize(schema.fields.size());
    for (std::size_t f = 0; f < schema.fields.size(); ++f) {
      const std::int64_t v = parse_int(cells[field_cols[f]], line_no, schema.fields[f].name);
      if (v < 0 || static_cast<std::size_t>(v) >= schema.fields[f].vocab) {
        throw Error("csv line " + std::to_string(line_no) + ": id " + std::to_string(v) +
                    " outside vocabulary of " + schema.fields[f].name);
      }
      s.ids[f] = v;
    }
    const std::int64_t dom = s.ids[domain_f];
    if (static_cast<std::size_t>(dom) >= n_domains) {
      throw Error("csv line " + std::to_string(line_no) + ": unknown domain id " +
                  std::to_string(dom));
    }
    s.domain = static_cast<int>(dom);
    const std::int64_t y = parse_int(cells[static_cast<std::size_t>(label_col)], line_no, "label");
    if (y != 0 && y != 1) {
      throw Error("csv line " + std::to_string(line_no) + ": label must be 0 or 1, got " +
                  std::to_string(y));
    }
    s.label = static_cast<int>(y);
    s.user_id = user_id_col >= 0
                    ? parse_int(cells[static_cast<std::size_t>(user_id_col)], line_no, "user_id")
                    : s.ids[user_f];
    ds.samples.push_back(std::move(s));
  }
  ds.recount_domains();
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  atomic_write_file((fs::path(dir) / "schema.json").string(), ds.schema.to_json());
  atomic_write_file((fs::path(dir) / "data.csv").string(), dataset_to_csv(ds));
}

Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const Schema schema = Schema::from_json(read_file((fs::path(dir) / "schema.json").string()));
  return dataset_from_csv(read_file((fs::path(dir) / "data.csv").string()), schema);
}

}  // namespace croc
