#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <vector>

#include <doctest.h>

#include "croc/losses.hpp"
#include "croc/metrics.hpp"
#include "oracles.hpp"

using namespace croc;
using namespace oracles;

namespace {

Schema toy_schema() {
  Schema s;
  s.fields = {{"user", 9, FieldRole::User},
              {"item", 12, FieldRole::Item},
              {"domain", 3, FieldRole::Domain}};
  s.validate();
  return s;
}

Dataset toy_dataset(std::size_t n = 30) {
  const Schema schema = toy_schema();
  Dataset ds;
  ds.schema = schema;
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    s.domain = static_cast<int>(i % 3);
    s.ids = {static_cast<std::int64_t>((2 * i + 1) % 9),
             static_cast<std::int64_t>((7 * i + 3) % 12),
             static_cast<std::int64_t>(s.domain)};
    s.label = static_cast<int>((i * i + i / 3) % 2);
    s.user_id = s.ids[0];
    ds.samples.push_back(s);
  }
  ds.recount_domains();
  return ds;
}

ModelConfig tiny_config(Variant v, std::uint64_t seed = 4) {
  ModelConfig c;
  c.variant = v;
  c.embed_tables = 3;
  c.embed_dim = 3;
  c.expert_dim = 5;
  c.expert_hidden = {6};
  c.tower_hidden = {4};
  c.seed = seed;
  return c;
}

double gauc_brute(const std::vector<double>& scores, const std::vector<int>& labels,
                  const std::vector<std::int64_t>& users, bool& valid) {
  std::map<std::int64_t, std::vector<std::size_t>> by_user;
  for (std::size_t i = 0; i < users.size(); ++i) by_user[users[i]].push_back(i);
  double acc = 0.0;
  double weight = 0.0;
  for (const auto& [u, rows] : by_user) {
    std::vector<double> s;
    std::vector<int> y;
    for (std::size_t r : rows) {
      s.push_back(scores[r]);
      y.push_back(labels[r]);
    }
    const double a = auc_brute(s, y);
    if (std::isnan(a)) continue;
    acc += static_cast<double>(rows.size()) * a;
    weight += static_cast<double>(rows.size());
  }
  valid = weight > 0.0;
  return valid ? acc / weight : 0.0;
}

}  // namespace

TEST_CASE("auc basics and tie convention") {
  CHECK(*auc({0.9, 0.1}, {1, 0}) == 1.0);
  CHECK(*auc({0.1, 0.9}, {1, 0}) == 0.0);
  CHECK(*auc({0.4, 0.4, 0.4, 0.4}, {1, 0, 1, 0}) == 0.5);
  CHECK(!auc({0.2, 0.4}, {1, 1}).has_value());
  CHECK(!auc({0.2, 0.4}, {0, 0}).has_value());
  CHECK_THROWS(auc({0.5}, {2}));
  CHECK_THROWS(auc({0.5, 0.1}, {1}));
}

TEST_CASE("auc equals the pairwise brute-force oracle with ties") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> n_dist(2, 1000);
  std::uniform_int_distribution<int> grid(0, 9);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  int with_value = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = n_dist(rng);
    std::vector<double> scores(static_cast<std::size_t>(n));
    std::vector<int> labels(static_cast<std::size_t>(n));
    const bool tie_heavy = trial % 2 == 0;
    const bool single_class = trial % 17 == 0;
    for (int i = 0; i < n; ++i) {
      scores[static_cast<std::size_t>(i)] =
          tie_heavy ? grid(rng) / 10.0 : unit(rng);
      labels[static_cast<std::size_t>(i)] =
          single_class ? 1 : (unit(rng) < 0.3 ? 1 : 0);
    }
    const auto got = auc(scores, labels);
    const double expect = auc_brute(scores, labels);
    if (std::isnan(expect)) {
      CHECK(!got.has_value());
    } else {
      REQUIRE(got.has_value());
      CHECK(std::abs(*got - expect) <= 1e-12);
      ++with_value;
    }
  }
  CHECK(with_value > 150);  // the sweep actually exercised two-class cases
}

TEST_CASE("auc is invariant under strictly increasing transforms") {
  std::mt19937_64 rng(55);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> scores(60);
    std::vector<int> labels(60);
    for (std::size_t i = 0; i < scores.size(); ++i) {
      scores[i] = unit(rng);
      labels[i] = unit(rng) < 0.5 ? 1 : 0;
    }
    std::vector<double> warped(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i)
      warped[i] = std::exp(3.0 * scores[i]) - 7.0;
    const auto a = auc(scores, labels);
    const auto b = auc(warped, labels);
    REQUIRE(a.has_value());
    REQUIRE(b.has_value());
    CHECK(*a == *b);  // rank statistics see the same order
  }
}

TEST_CASE("gauc weighted example and degenerate users") {
  // User 1: 4 impressions, perfectly ranked. User 2: 2 impressions, tied.
  // User 3: single class, skipped. Expected (4*1 + 2*0.5) / 6 = 5/6.
  const std::vector<double> scores = {0.9, 0.8, 0.2, 0.1, 0.5, 0.5, 0.7, 0.6};
  const std::vector<int> labels = {1, 1, 0, 0, 1, 0, 1, 1};
  const std::vector<std::int64_t> users = {1, 1, 1, 1, 2, 2, 3, 3};
  const auto g = gauc(scores, labels, users);
  REQUIRE(g.has_value());
  CHECK(*g == doctest::Approx(5.0 / 6.0).epsilon(1e-12));

  // A single user reduces to plain auc.
  const std::vector<std::int64_t> one_user(8, 42);
  CHECK(*gauc(scores, labels, one_user) == *auc(scores, labels));

  // No user with both classes.
  CHECK(!gauc({0.1, 0.9}, {1, 1}, {1, 2}).has_value());
}

TEST_CASE("gauc equals the per-user brute-force oracle") {
  std::mt19937_64 rng(31337);
  std::uniform_int_distribution<int> n_dist(2, 400);
  std::uniform_int_distribution<std::int64_t> user_dist(0, 25);
  std::uniform_int_distribution<int> grid(0, 6);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = static_cast<std::size_t>(n_dist(rng));
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    std::vector<std::int64_t> users(n);
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = trial % 2 == 0 ? grid(rng) / 6.0 : unit(rng);
      labels[i] = unit(rng) < 0.25 ? 1 : 0;
      users[i] = user_dist(rng);
    }
    bool valid = false;
    const double expect = gauc_brute(scores, labels, users, valid);
    const auto got = gauc(scores, labels, users);
    CHECK(got.has_value() == valid);
    if (valid) CHECK(std::abs(*got - expect) <= 1e-12);
  }
}

TEST_CASE("information abundance closed forms and invariances") {
  // Identity: all singular values 1.
  const std::vector<double> eye = {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};
  CHECK(information_abundance(eye, 4, 4) == doctest::Approx(4.0).epsilon(1e-12));

  // Rank-1: a single nonzero singular value.
  std::vector<double> rank1(6 * 3);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 3; ++j) rank1[i * 3 + j] = (i + 1.0) * (j + 1.0);
  // The eigensolver leaves ~1e-8-relative dust on the zero singular values.
  CHECK(information_abundance(rank1, 6, 3) == doctest::Approx(1.0).epsilon(1e-6));

  std::mt19937_64 rng(808);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> m(20 * 5);
    for (double& x : m) x = dist(rng);
    const double base = information_abundance(m, 20, 5);
    CHECK(base >= 1.0);
    CHECK(base <= 5.0);

    // Scalar rescaling cancels in the ratio.
    std::vector<double> scaled = m;
    for (double& x : scaled) x *= 37.5;
    CHECK(information_abundance(scaled, 20, 5) == doctest::Approx(base).epsilon(1e-9));

    // Row permutation preserves singular values.
    std::vector<double> perm = m;
    std::vector<std::size_t> order(20);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t r = 0; r < 20; ++r)
      std::copy_n(m.begin() + static_cast<std::ptrdiff_t>(order[r] * 5), 5,
                  perm.begin() + static_cast<std::ptrdiff_t>(r * 5));
    CHECK(information_abundance(perm, 20, 5) == doctest::Approx(base).epsilon(1e-9));

    // Transposing changes nothing (wide inputs are handled by transposition).
    std::vector<double> t(5 * 20);
    for (std::size_t r = 0; r < 20; ++r)
      for (std::size_t c = 0; c < 5; ++c) t[c * 20 + r] = m[r * 5 + c];
    CHECK(information_abundance(t, 5, 20) == doctest::Approx(base).epsilon(1e-9));
  }

  CHECK_THROWS(information_abundance(std::vector<double>(12, 0.0), 4, 3));
  CHECK_THROWS(information_abundance({1.0, 2.0}, 1, 1));
}

TEST_CASE("information abundance tracks an independent spectrum oracle") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> dist(-2.0, 2.0);
  std::vector<double> m(50 * 8);
  for (double& x : m) x = dist(rng);

  // Gram spectrum via power iteration with deflation.
  std::vector<double> gram(8 * 8, 0.0);
  for (std::size_t a = 0; a < 8; ++a)
    for (std::size_t b = 0; b < 8; ++b) {
      double acc = 0.0;
      for (std::size_t r = 0; r < 50; ++r) acc += m[r * 8 + a] * m[r * 8 + b];
      gram[a * 8 + b] = acc;
    }
  const std::vector<double> eig = psd_eigenvalues_power(gram, 8);
  double sum = 0.0, top = 0.0;
  for (double e : eig) {
    const double s = std::sqrt(std::max(0.0, e));
    sum += s;
    top = std::max(top, s);
  }
  CHECK(information_abundance(m, 50, 8) == doctest::Approx(sum / top).epsilon(1e-8));
}

TEST_CASE("collect_scores picks each sample's own-domain head") {
  const Dataset ds = toy_dataset();
  Model m(tiny_config(Variant::Crocodile), ds.schema);
  const EvalScores ev = collect_scores(m, ds);
  REQUIRE(ev.scores.size() == ds.size());

  std::vector<std::size_t> rows(ds.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  Tape tape(false);
  const ForwardOut fwd = m.forward(tape, make_batch(ds, rows));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const int s = ds.samples[i].domain;
    CHECK(ev.scores[i] == fwd.domain_pred[static_cast<std::size_t>(s)].at(i, 0));
    CHECK(ev.labels[i] == ds.samples[i].label);
    CHECK(ev.users[i] == ds.samples[i].user_id);
    CHECK(ev.domains[i] == s);
  }

  // Batched evaluation must agree with single-shot evaluation.
  const EvalScores small = collect_scores(m, ds, 7);
  CHECK(small.scores == ev.scores);

  const EvalScores slice = ev.domain_slice(1);
  CHECK(slice.scores.size() == ds.domain_counts[1]);
}

TEST_CASE("expert norms match a direct forward pass") {
  const Dataset ds = toy_dataset();
  Model m(tiny_config(Variant::SDEM), ds.schema);
  const auto norms = expert_norms(m, ds, 8);  // deliberately small batches
  REQUIRE(norms.size() == m.num_experts());

  std::vector<std::size_t> rows(ds.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  Tape tape(false);
  const ForwardOut fwd = m.forward(tape, make_batch(ds, rows));
  for (std::size_t k = 0; k < norms.size(); ++k) {
    REQUIRE(norms[k].size() == ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
      double sq = 0.0;
      for (std::size_t j = 0; j < 5; ++j) sq += fwd.expert_out[k].at(i, j) * fwd.expert_out[k].at(i, j);
      CHECK(norms[k][i] == doctest::Approx(std::sqrt(sq)).epsilon(1e-12));
    }
  }
}

TEST_CASE("conflict sets enumerate ordered pairs against the threshold rule") {
  const Dataset ds = toy_dataset(60);
  Model ref(tiny_config(Variant::SDEM), ds.schema);

  const auto sets = build_conflict_sets(ref, ds);
  CHECK(sets.size() == 3 * 2);  // ordered domain pairs

  // Membership re-derived from the public norm API.
  const auto norms = expert_norms(ref, ds);
  std::vector<std::size_t> bound(3);
  for (std::size_t k = 0; k < ref.num_experts(); ++k) {
    const Binding b = ref.expert_binding(k);
    if (b.domain_bound) bound[static_cast<std::size_t>(b.domain)] = k;
  }
  for (const ConflictSet& cs : sets) {
    CHECK(cs.tau_t >= cs.tau_b);
    std::set<std::size_t> members(cs.members.begin(), cs.members.end());
    for (std::size_t r = 0; r < ds.size(); ++r) {
      const bool expect =
          norms[bound[static_cast<std::size_t>(cs.domain_i)]][r] >= cs.tau_t &&
          norms[bound[static_cast<std::size_t>(cs.domain_j)]][r] <= cs.tau_b;
      CHECK(members.count(r) == (expect ? 1 : 0));
    }
  }

  // Raising the top percentile never grows a set.
  ConflictConfig strict;
  strict.top_pct = 90.0;
  const auto tighter = build_conflict_sets(ref, ds, strict);
  for (std::size_t i = 0; i < sets.size(); ++i) {
    std::set<std::size_t> loose(sets[i].members.begin(), sets[i].members.end());
    for (std::size_t r : tighter[i].members) CHECK(loose.count(r) == 1);
  }

  // A reference without domain-bound experts is rejected.
  Model free_ref(tiny_config(Variant::MMoE), ds.schema);
  CHECK_THROWS(build_conflict_sets(free_ref, ds));
}

TEST_CASE("diversity index on hand-set norms") {
  ConflictConfig cfg;  // P75 / P25

  SUBCASE("existential witness scores a hit") {
    // One sample, two experts with norms 5 and 0: pooled thresholds 3.75/1.25.
    const std::vector<std::vector<double>> norms = {{5.0}, {0.0}};
    ConflictSet cs;
    cs.domain_i = 0;
    cs.domain_j = 1;
    cs.members = {0};
    const DiResult di = diversity_index_from_norms(norms, {}, {cs}, cfg);
    REQUIRE(di.pairs.size() == 1);
    CHECK(di.pairs[0].di == 1.0);
    CHECK(di.average == 1.0);
  }
  SUBCASE("identical experts per sample can never split") {
    // Both experts share each sample's norm; pooled P75 > P25, so no sample
    // can be simultaneously strong and weak.
    std::vector<std::vector<double>> norms(2, std::vector<double>(8));
    for (std::size_t i = 0; i < 8; ++i) norms[0][i] = norms[1][i] = static_cast<double>(i + 1);
    ConflictSet cs;
    cs.domain_i = 0;
    cs.domain_j = 1;
    cs.members = {0, 1, 2, 3, 4, 5, 6, 7};
    const DiResult di = diversity_index_from_norms(norms, {}, {cs}, cfg);
    CHECK(di.pairs[0].di == 0.0);
  }
  SUBCASE("domain-bound form checks the two bound experts only") {
    // Expert 0 strong on sample 0 only; expert 1 weak everywhere.
    const std::vector<std::vector<double>> norms = {{9.0, 1.0, 1.0, 1.0},
                                                    {0.0, 0.0, 0.0, 0.0},
                                                    {9.0, 9.0, 9.0, 9.0}};
    ConflictSet cs01;
    cs01.domain_i = 0;
    cs01.domain_j = 1;
    cs01.members = {0, 1};
    const DiResult di = diversity_index_from_norms(norms, {0, 1, 2}, {cs01}, cfg);
    // Pooled: {9,1,1,1, 0,0,0,0, 9,9,9,9} -> tau_t = P75 = 9, tau_b = P25 = 0.
    // Sample 0: expert0 9 >= 9 and expert1 0 <= 0: hit. Sample 1: expert0 is 1: miss.
    REQUIRE(di.pairs.size() == 1);
    CHECK(di.pairs[0].di == doctest::Approx(0.5));
  }
  SUBCASE("empty sets are excluded and counted") {
    const std::vector<std::vector<double>> norms = {{5.0, 2.0}, {0.0, 2.0}};
    ConflictSet full;
    full.domain_i = 0;
    full.domain_j = 1;
    full.members = {0};
    ConflictSet empty;
    empty.domain_i = 1;
    empty.domain_j = 0;
    const DiResult di = diversity_index_from_norms(norms, {}, {full, empty}, cfg);
    CHECK(di.pairs.size() == 1);
    CHECK(di.skipped_empty == 1);
    CHECK(di.average == di.pairs[0].di);
  }
}

TEST_CASE("diversity index of real models lands in [0, 1]") {
  const Dataset ds = toy_dataset(60);
  Model ref(tiny_config(Variant::SDEM), ds.schema);
  const auto sets = build_conflict_sets(ref, ds);

  for (Variant v : {Variant::MMoE, Variant::Crocodile, Variant::PLE}) {
    CAPTURE(variant_name(v));
    Model cand(tiny_config(v, 77), ds.schema);
    const DiResult di = diversity_index(cand, ds, sets);
    for (const DiPair& p : di.pairs) {
      CHECK(p.di >= 0.0);
      CHECK(p.di <= 1.0);
    }
    CHECK(di.average >= 0.0);
    CHECK(di.average <= 1.0);
    CHECK(di.pairs.size() + di.skipped_empty == sets.size());
  }
}

TEST_CASE("covariance heatmaps match the covloss terms") {
  const Dataset ds = toy_dataset(40);
  Model m(tiny_config(Variant::MeMMoE), ds.schema);
  const HeatmapResult hm = covariance_heatmaps(m, ds, 16);
  const std::size_t k = hm.n_experts, d = hm.d;
  REQUIRE(k == 3);
  REQUIRE(d == 5);
  REQUIRE(hm.expert_level.size() == k * k);
  REQUIRE(hm.dim_level.size() == k * d * k * d);

  // Symmetry at both levels.
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t q = 0; q < k; ++q)
      CHECK(hm.expert_level[p * k + q] ==
            doctest::Approx(hm.expert_level[q * k + p]).epsilon(1e-12));
  for (std::size_t a = 0; a < k * d; ++a)
    for (std::size_t b = 0; b < k * d; ++b)
      CHECK(hm.dim_level[a * k * d + b] == doctest::Approx(hm.dim_level[b * k * d + a]).epsilon(1e-12));

  // The (p,q) expert cell times d^2 is the covloss term for that pair on the
  // same rows.
  std::vector<std::size_t> rows(ds.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  Tape tape(false);
  const ForwardOut fwd = m.forward(tape, make_batch(ds, rows));
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t q = 0; q < p; ++q) {
      Tape t2;
      const double term =
          covloss(t2, {fwd.expert_out[p], fwd.expert_out[q]}, PairSet::StrictCross).item();
      CHECK(std::abs(hm.expert_level[p * k + q] - term) <= 1e-12 * std::max(1.0, term));
    }
  }

  // Expert cells aggregate the dimension cells.
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t q = 0; q < k; ++q) {
      double acc = 0.0;
      for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b < d; ++b)
          acc += hm.dim_level[(p * d + a) * k * d + (q * d + b)];
      CHECK(hm.expert_level[p * k + q] ==
            doctest::Approx(acc / static_cast<double>(d * d)).epsilon(1e-12));
    }
  }
}
