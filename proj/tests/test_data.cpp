#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include <doctest.h>

#include "croc/data.hpp"
#include "croc/io.hpp"

using namespace croc;

namespace {

GenSpec small_spec() {
  GenSpec spec;
  spec.sizes = {300, 900, 60, 120, 40};
  spec.users = 50;
  spec.items = 80;
  spec.seed = 11;
  return spec;
}

}  // namespace

TEST_CASE("schema validation") {
  Schema s;
  s.fields = {{"user", 10, FieldRole::User},
              {"item", 20, FieldRole::Item},
              {"domain", 3, FieldRole::Domain}};
  CHECK_NOTHROW(s.validate());
  CHECK(s.num_domains() == 3);
  CHECK(s.domain_field() == 2);
  CHECK(s.user_field() == 0);
  CHECK(s.index_of("item") == 1);

  Schema no_domain = s;
  no_domain.fields[2].role = FieldRole::Context;
  CHECK_THROWS(no_domain.validate());

  Schema two_domains = s;
  two_domains.fields[0] = {"d2", 2, FieldRole::Domain};
  CHECK_THROWS(two_domains.validate());

  Schema dup = s;
  dup.fields[1].name = "user";
  CHECK_THROWS(dup.validate());

  Schema round = Schema::from_json(s.to_json());
  CHECK(round.fields.size() == 3);
  CHECK(round.fields[1].vocab == 20);
  CHECK(round.fields[2].role == FieldRole::Domain);
}

TEST_CASE("synthetic generator hits requested sizes and is deterministic") {
  const GenSpec spec = small_spec();
  const Dataset ds = generate_synthetic(spec);
  CHECK(ds.size() == 1420);
  REQUIRE(ds.domain_counts.size() == 5);
  for (std::size_t s = 0; s < 5; ++s) CHECK(ds.domain_counts[s] == spec.sizes[s]);

  // Ids stay inside their vocabularies; id 0 is reserved for "unknown".
  for (const Sample& smp : ds.samples) {
    REQUIRE(smp.ids.size() == ds.schema.fields.size());
    for (std::size_t f = 0; f < smp.ids.size(); ++f) {
      CHECK(smp.ids[f] >= 0);
      CHECK(smp.ids[f] < static_cast<std::int64_t>(ds.schema.fields[f].vocab));
    }
    CHECK((smp.label == 0 || smp.label == 1));
    CHECK(smp.domain == smp.ids[ds.schema.domain_field()]);
  }

  const Dataset again = generate_synthetic(spec);
  CHECK(ds.fingerprint() == again.fingerprint());

  GenSpec other = spec;
  other.seed += 1;
  CHECK(generate_synthetic(other).fingerprint() != ds.fingerprint());
}

TEST_CASE("zero conflict rate gives strongly aligned cross-domain labels") {
  // With no planted conflicts and a steep label link, a (user, item) pair seen
  // in several domains should carry the same label almost always.
  GenSpec spec;
  spec.sizes = {3000, 3000, 3000};
  spec.users = 40;  // few users/items so pairs recur across domains
  spec.items = 50;
  spec.conflict_rate = 0.0;
  spec.seed = 5;
  const Dataset ds = generate_synthetic(spec);

  const std::size_t uf = ds.schema.user_field();
  const std::size_t itf = ds.schema.index_of("item");
  std::map<std::pair<std::int64_t, std::int64_t>, std::array<int, 2>> votes;
  for (const Sample& s : ds.samples) {
    auto& v = votes[{s.ids[uf], s.ids[itf]}];
    v[static_cast<std::size_t>(s.label)]++;
  }
  std::size_t agree = 0, total = 0;
  for (const auto& [pair, v] : votes) {
    const int n = v[0] + v[1];
    if (n < 2) continue;
    agree += static_cast<std::size_t>(std::max(v[0], v[1]));
    total += static_cast<std::size_t>(n);
  }
  REQUIRE(total > 1000);
  CHECK(static_cast<double>(agree) / static_cast<double>(total) >= 0.95);
}

TEST_CASE("conflict rate plants disagreeing pairs") {
  GenSpec spec;
  spec.sizes = {4000, 4000};
  spec.users = 30;
  spec.items = 40;
  spec.conflict_rate = 1.0;
  spec.seed = 9;
  const Dataset ds = generate_synthetic(spec);

  // Majority label per (pair, domain); with every pair conflicted, pairs seen
  // in both domains should disagree between domains far more often than at
  // conflict 0.
  std::map<std::tuple<std::int64_t, std::int64_t, int>, std::array<int, 2>> votes;
  const std::size_t uf = ds.schema.user_field();
  const std::size_t itf = ds.schema.index_of("item");
  for (const Sample& s : ds.samples)
    votes[{s.ids[uf], s.ids[itf], s.domain}][static_cast<std::size_t>(s.label)]++;

  std::size_t flips = 0, both = 0;
  for (const auto& [key, v0] : votes) {
    const auto& [u, i, d] = key;
    if (d != 0) continue;
    auto it = votes.find({u, i, 1});
    if (it == votes.end()) continue;
    const int maj0 = v0[1] >= v0[0] ? 1 : 0;
    const int maj1 = it->second[1] >= it->second[0] ? 1 : 0;
    both++;
    if (maj0 != maj1) flips++;
  }
  REQUIRE(both > 300);
  CHECK(static_cast<double>(flips) / static_cast<double>(both) > 0.5);
}

TEST_CASE("item popularity is zipf-skewed") {
  const Dataset ds = generate_synthetic(small_spec());
  const std::size_t itf = ds.schema.index_of("item");
  std::map<std::int64_t, std::size_t> counts;
  for (const Sample& s : ds.samples) counts[s.ids[itf]]++;
  std::vector<std::size_t> sorted;
  for (const auto& [id, c] : counts) sorted.push_back(c);
  std::sort(sorted.rbegin(), sorted.rend());
  // Head items dominate the tail.
  std::size_t head = 0, total = 0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (i < sorted.size() / 10) head += sorted[i];
    total += sorted[i];
  }
  CHECK(static_cast<double>(head) / static_cast<double>(total) > 0.25);
}

TEST_CASE("make_batch groups rows by domain") {
  const Dataset ds = generate_synthetic(small_spec());
  const Batch b = make_batch(ds, {0, 5, 10, 200, 400, 1300});
  CHECK(b.size() == 6);
  REQUIRE(b.field_ids.size() == ds.schema.fields.size());
  for (const auto& col : b.field_ids) CHECK(col.size() == 6);
  std::size_t covered = 0;
  for (std::size_t s = 0; s < b.domain_rows.size(); ++s) {
    for (std::size_t row : b.domain_rows[s]) {
      CHECK(b.domains[row] == static_cast<int>(s));
      covered++;
    }
  }
  CHECK(covered == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    const Sample& s = ds.samples[b.sample_indices[i]];
    CHECK(b.labels[i] == static_cast<double>(s.label));
    CHECK(b.user_ids[i] == s.user_id);
  }
}

TEST_CASE("batch_iter covers the dataset exactly once and reshuffles by seed") {
  const Dataset ds = generate_synthetic(small_spec());
  const auto batches = batch_iter(ds, 128, 3);
  std::set<std::size_t> seen;
  std::size_t total = 0;
  for (const Batch& b : batches) {
    CHECK(b.size() <= 128);
    for (std::size_t idx : b.sample_indices) seen.insert(idx);
    total += b.size();
  }
  CHECK(total == ds.size());
  CHECK(seen.size() == ds.size());

  const auto same = batch_iter(ds, 128, 3);
  CHECK(same.front().sample_indices == batches.front().sample_indices);
  const auto other = batch_iter(ds, 128, 4);
  CHECK(other.front().sample_indices != batches.front().sample_indices);
}

TEST_CASE("low-frequency filtering remaps to the default id") {
  Schema schema;
  schema.fields = {{"user", 6, FieldRole::User},
                   {"item", 5, FieldRole::Item},
                   {"domain", 2, FieldRole::Domain}};
  Dataset ds;
  ds.schema = schema;
  // user 1 appears 3x, user 2 appears 1x, user 5 appears 2x.
  const std::vector<std::int64_t> users = {1, 1, 1, 2, 5, 5};
  for (std::size_t i = 0; i < users.size(); ++i) {
    Sample s;
    s.ids = {users[i], static_cast<std::int64_t>(1 + i % 2), static_cast<std::int64_t>(i % 2)};
    s.domain = static_cast<int>(i % 2);
    s.label = static_cast<int>(i % 2);
    s.user_id = users[i];
    ds.samples.push_back(s);
  }
  ds.recount_domains();

  const Dataset f = filter_low_frequency(ds, 2);
  // Survivors: user 1 (3x) and user 5 (2x) -> renumbered 1, 2; user 2 -> 0.
  CHECK(f.schema.fields[0].vocab == 3);
  CHECK(f.samples[0].ids[0] == 1);
  CHECK(f.samples[3].ids[0] == 0);
  CHECK(f.samples[4].ids[0] == 2);
  // items: 1 appears 3x, 2 appears 3x -> both survive.
  CHECK(f.schema.fields[1].vocab == 3);
  // The domain field is structural and never filtered.
  CHECK(f.schema.fields[2].vocab == 2);
  for (std::size_t i = 0; i < f.samples.size(); ++i) {
    CHECK(f.samples[i].domain == ds.samples[i].domain);
    CHECK(f.samples[i].ids[2] == ds.samples[i].ids[2]);
    CHECK(f.samples[i].user_id == ds.samples[i].user_id);  // raw id survives
  }

  // A tighter threshold keeps nothing but the default.
  const Dataset g = filter_low_frequency(ds, 10);
  CHECK(g.schema.fields[0].vocab == 1);
  for (const Sample& s : g.samples) CHECK(s.ids[0] == 0);
}

TEST_CASE("stratified split keeps domain proportions and partitions") {
  const Dataset ds = generate_synthetic(small_spec());
  const auto [train, test] = split_dataset(ds, 0.8, 7);
  CHECK(train.size() + test.size() == ds.size());
  for (std::size_t s = 0; s < ds.num_domains(); ++s) {
    const double expect = 0.8 * static_cast<double>(ds.domain_counts[s]);
    CHECK(std::abs(static_cast<double>(train.domain_counts[s]) - expect) <= 1.0);
    CHECK(train.domain_counts[s] + test.domain_counts[s] == ds.domain_counts[s]);
    CHECK(test.domain_counts[s] > 0);  // every domain present on both sides
    CHECK(train.domain_counts[s] > 0);
  }
  // Deterministic under the seed.
  const auto [train2, test2] = split_dataset(ds, 0.8, 7);
  CHECK(train.fingerprint() == train2.fingerprint());
  CHECK_THROWS(split_dataset(ds, 0.0, 1));
  CHECK_THROWS(split_dataset(ds, 1.0, 1));
}

TEST_CASE("csv round trip preserves the dataset") {
  const Dataset ds = generate_synthetic(small_spec());
  const std::string csv = dataset_to_csv(ds);
  const Dataset back = dataset_from_csv(csv, ds.schema);
  CHECK(back.fingerprint() == ds.fingerprint());

  const std::string dir = "/tmp/croc_test_dataset";
  std::filesystem::remove_all(dir);
  save_dataset(ds, dir);
  CHECK(std::filesystem::exists(dir + "/data.csv"));
  CHECK(std::filesystem::exists(dir + "/schema.json"));
  const Dataset loaded = load_dataset(dir);
  CHECK(loaded.fingerprint() == ds.fingerprint());
  std::filesystem::remove_all(dir);
}

TEST_CASE("csv loader reports the offending line") {
  Schema schema;
  schema.fields = {{"user", 4, FieldRole::User},
                   {"item", 4, FieldRole::Item},
                   {"domain", 2, FieldRole::Domain}};

  // Out-of-vocabulary id on data line 2 (file line 3).
  const std::string bad_id =
      "user,item,domain,label,user_id\n"
      "1,1,0,1,1\n"
      "9,1,1,0,9\n";
  CHECK_THROWS_WITH_AS(dataset_from_csv(bad_id, schema),
                       doctest::Contains("line 3"), Error);

  const std::string bad_label =
      "user,item,domain,label,user_id\n"
      "1,1,0,2,1\n";
  CHECK_THROWS_WITH_AS(dataset_from_csv(bad_label, schema),
                       doctest::Contains("line 2"), Error);

  const std::string missing_col =
      "user,item,label,user_id\n"
      "1,1,1,1\n";
  CHECK_THROWS_AS(dataset_from_csv(missing_col, schema), Error);

  const std::string short_row =
      "user,item,domain,label,user_id\n"
      "1,1,0\n";
  CHECK_THROWS_WITH_AS(dataset_from_csv(short_row, schema),
                       doctest::Contains("line 2"), Error);
}

TEST_CASE("genspec json round trip") {
  GenSpec spec = small_spec();
  spec.conflict_rate = 0.55;
  const GenSpec back = GenSpec::from_json(spec.to_json());
  CHECK(back.sizes == spec.sizes);
  CHECK(back.users == spec.users);
  CHECK(back.conflict_rate == doctest::Approx(0.55));
  CHECK(back.seed == spec.seed);

  GenSpec one_domain = small_spec();
  one_domain.sizes = {100};
  CHECK_THROWS(generate_synthetic(one_domain));  // needs >= 2 domains
  GenSpec bad_rate = small_spec();
  bad_rate.conflict_rate = 1.5;
  CHECK_THROWS(generate_synthetic(bad_rate));
}
