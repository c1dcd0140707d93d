#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <vector>

#include <doctest.h>

#include "croc/io.hpp"
#include "croc/metrics.hpp"
#include "croc/trainer.hpp"

using namespace croc;

namespace {

Dataset tiny_synthetic() {
  GenSpec spec;
  spec.sizes = {240, 480, 120};
  spec.users = 40;
  spec.items = 60;
  spec.seed = 3;
  return generate_synthetic(spec);
}

ModelConfig tiny_model(Variant v = Variant::Crocodile) {
  ModelConfig c;
  c.variant = v;
  c.embed_tables = 2;
  c.embed_dim = 3;
  c.expert_dim = 4;
  c.expert_hidden = {6};
  c.tower_hidden = {5};
  c.seed = 10;
  return c;
}

TrainConfig tiny_train(std::size_t epochs = 2) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 64;
  c.seed = 5;
  return c;
}

bool params_equal(const Model& a, const Model& b) {
  const auto& ia = a.params().items();
  const auto& ib = b.params().items();
  if (ia.size() != ib.size()) return false;
  for (std::size_t i = 0; i < ia.size(); ++i) {
    if (ia[i].first != ib[i].first) return false;
    auto va = ia[i].second.values();
    auto vb = ib[i].second.values();
    if (!std::equal(va.begin(), va.end(), vb.begin())) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("adam reproduces the reference update rule") {
  ParamStore store;
  Tensor w = store.add("w", Tensor::from({1, 1}, {2.0}, true));
  AdamConfig cfg;
  cfg.lr = 0.1;
  Adam adam(cfg);

  // Reference state tracked by hand.
  double ref_w = 2.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 5; ++t) {
    w.zero_grad();
    Tape tape;
    // loss = 3 * w + w^2 -> dL/dw = 3 + 2w.
    const Tensor loss = tape.sum(tape.add(tape.scale(w, 3.0), tape.mul(w, w)));
    tape.backward(loss);
    adam.step(store);

    const double g = 3.0 + 2.0 * ref_w;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mhat = m / (1.0 - std::pow(0.9, t));
    const double vhat = v / (1.0 - std::pow(0.999, t));
    ref_w -= 0.1 * mhat / (std::sqrt(vhat) + 1e-8);
    CHECK(w.at(0, 0) == doctest::Approx(ref_w).epsilon(1e-14));
  }
  CHECK(adam.steps() == 5);
}

TEST_CASE("adam leaves zero-gradient parameters untouched") {
  ParamStore store;
  Tensor w = store.add("w", Tensor::from({1, 2}, {1.5, -2.5}, true));
  Adam adam;
  w.zero_grad();
  Tape tape;
  const Tensor loss = tape.sum(tape.mul(w, Tensor::zeros({1, 2})));
  tape.backward(loss);
  adam.step(store);
  CHECK(w.at(0, 0) == 1.5);
  CHECK(w.at(0, 1) == -2.5);

  // A parameter backward never reached keeps no gradient and is skipped.
  store.add("unused", Tensor::from({1, 1}, {7.0}, true));
  w.zero_grad();
  Tape t2;
  t2.backward(t2.sum(t2.mul(w, Tensor::zeros({1, 2}))));
  adam.step(store);
  CHECK(store.find("unused")->at(0, 0) == 7.0);
}

TEST_CASE("adam aborts on a non-finite gradient, naming the parameter") {
  ParamStore store;
  Tensor w = store.add("embed/weird", Tensor::from({1, 1}, {0.0}, true));
  Adam adam;
  w.zero_grad();
  Tape tape;
  // Every forward value is finite (0 * 1e300 * 1e300 == 0), but the chain
  // rule multiplies the two huge factors: dL/dw = 1e600 overflows to inf.
  const Tensor c = Tensor::from({1, 1}, {1e300});
  tape.backward(tape.sum(tape.mul(tape.mul(w, c), c)));
  CHECK_THROWS_WITH_AS(adam.step(store), doctest::Contains("embed/weird"), NumericError);
}

TEST_CASE("training runs deterministically and improves the loss") {
  const Dataset ds = tiny_synthetic();
  Model a(tiny_model(), ds.schema);
  Model b(tiny_model(), ds.schema);
  TrainConfig cfg = tiny_train(4);

  const TrainResult ra = train(a, ds, cfg);
  const TrainResult rb = train(b, ds, cfg);
  CHECK(params_equal(a, b));
  REQUIRE(ra.metrics.size() == rb.metrics.size());
  for (std::size_t i = 0; i < ra.metrics.size(); ++i)
    CHECK(ra.metrics[i].value == rb.metrics[i].value);

  // Loss goes down over the run.
  double first = 0.0, last = 0.0;
  for (const MetricRow& r : ra.metrics) {
    if (r.metric != "loss_total") continue;
    if (r.step == 1) first = r.value;
    last = r.value;
  }
  CHECK(last < first);
  const auto [train_ds, eval_ds] = split_dataset(ds, cfg.train_fraction, cfg.seed);
  CHECK(ra.steps == 4 * ((train_ds.size() + cfg.batch_size - 1) / cfg.batch_size));

  // Held-out metrics exist for every domain and overall.
  CHECK(!std::isnan(ra.last("overall", "auc")));
  CHECK(!std::isnan(ra.last("overall", "gauc")));
  for (int s = 0; s < 3; ++s) CHECK(!std::isnan(ra.last(std::to_string(s), "auc")));

  // IA rows cover stacked tables and field tables at each cadence point.
  CHECK(!ra.ia.empty());
  for (const IaRow& row : ra.ia) CHECK(row.value >= 1.0);
}

TEST_CASE("logged loss parts add up to the logged total") {
  const Dataset ds = tiny_synthetic();
  TrainConfig cfg = tiny_train(3);
  cfg.loss.alpha = 0.05;
  Model m(tiny_model(), ds.schema);
  const TrainResult res = train(m, ds, cfg);

  for (std::size_t epoch = 1; epoch <= 3; ++epoch) {
    double total = std::nan(""), cov = std::nan(""), bce_sum = 0.0;
    for (const MetricRow& r : res.metrics) {
      if (r.step != epoch) continue;
      if (r.metric == "loss_total") total = r.value;
      if (r.metric == "loss_cov") cov = r.value;
      if (r.metric == "loss_bce") bce_sum += r.value;
    }
    REQUIRE(!std::isnan(total));
    REQUIRE(!std::isnan(cov));
    CHECK(std::abs(total - (bce_sum + cfg.loss.alpha * cov)) <=
          1e-12 * std::max(1.0, std::abs(total)));
  }
}

TEST_CASE("alpha zero trains on pure bce and logs zero penalty") {
  const Dataset ds = tiny_synthetic();
  TrainConfig cfg = tiny_train(1);
  cfg.loss.alpha = 0.0;
  Model m(tiny_model(), ds.schema);
  const TrainResult res = train(m, ds, cfg);
  CHECK(res.last("overall", "loss_cov") == 0.0);
}

TEST_CASE("eval cadence controls which epochs log ranking metrics") {
  const Dataset ds = tiny_synthetic();
  TrainConfig cfg = tiny_train(3);
  cfg.eval_every = 2;
  cfg.ia_every = 3;
  Model m(tiny_model(), ds.schema);
  const TrainResult res = train(m, ds, cfg);

  std::set<std::size_t> auc_epochs, ia_epochs;
  for (const MetricRow& r : res.metrics)
    if (r.metric == "auc" && r.domain == "overall") auc_epochs.insert(r.step);
  for (const IaRow& r : res.ia) ia_epochs.insert(r.step);
  CHECK(auc_epochs == std::set<std::size_t>{2, 3});  // cadence plus final epoch
  CHECK(ia_epochs == std::set<std::size_t>{3});
}

TEST_CASE("checkpoint bytes round-trip and restore an identical model") {
  const Dataset ds = tiny_synthetic();
  Model m(tiny_model(Variant::SDEM), ds.schema);
  TrainConfig cfg = tiny_train(2);
  Adam adam(cfg.adam);
  const TrainResult res = train(m, ds, cfg, "", &adam);

  const std::string bytes =
      encode_checkpoint(m, adam, cfg, ds.fingerprint(), adam.steps());
  const Checkpoint ck = decode_checkpoint(bytes);
  CHECK(ck.dataset_fingerprint == ds.fingerprint());
  CHECK(ck.step == adam.steps());
  CHECK(encode_checkpoint(m, adam, cfg, ds.fingerprint(), adam.steps()) == bytes);

  Model restored = model_from_checkpoint(ck, ds.schema);
  CHECK(params_equal(m, restored));

  // Forward equality is exact on a fresh batch.
  const EvalScores ea = collect_scores(m, ds);
  const EvalScores eb = collect_scores(restored, ds);
  CHECK(ea.scores == eb.scores);

  // Tampering with the stored config is caught.
  std::string bad = bytes;
  const std::size_t at = bad.find("\"variant\"");
  REQUIRE(at != std::string::npos);
  bad[at + 1] = 'x';
  CHECK_THROWS_WITH_AS(decode_checkpoint(bad), doctest::Contains("digest"), Error);
  CHECK_THROWS_WITH_AS(decode_checkpoint("JUNKFILE"), doctest::Contains("magic"), Error);
}

TEST_CASE("resume from checkpoint replays an uninterrupted run exactly") {
  const Dataset ds = tiny_synthetic();
  const std::string dir = "/tmp/croc_test_resume";
  std::filesystem::remove_all(dir);

  // Straight-through run: 3 epochs.
  Model full(tiny_model(), ds.schema);
  TrainConfig cfg3 = tiny_train(3);
  train(full, ds, cfg3);

  // Interrupted run: 2 epochs, checkpoint, then 1 more from the checkpoint.
  Model part(tiny_model(), ds.schema);
  TrainConfig cfg2 = tiny_train(2);
  Adam adam(cfg2.adam);
  train(part, ds, cfg2, dir, &adam);

  const Checkpoint ck = load_checkpoint(dir + "/checkpoint.bin");
  Model resumed = model_from_checkpoint(ck, ds.schema);
  Adam adam2(cfg2.adam);
  restore_adam(adam2, ck, resumed);
  CHECK(adam2.steps() == adam.steps());
  TrainConfig cfg1 = tiny_train(1);
  train(resumed, ds, cfg1, "", &adam2);

  CHECK(params_equal(full, resumed));
  std::filesystem::remove_all(dir);
}

TEST_CASE("divergence aborts with a clear error and keeps the last checkpoint") {
  const Dataset ds = tiny_synthetic();
  const std::string dir = "/tmp/croc_test_diverge";
  std::filesystem::remove_all(dir);

  Model good(tiny_model(), ds.schema);
  train(good, ds, tiny_train(1), dir);
  const std::string saved = read_file(dir + "/checkpoint.bin");

  Model doomed(tiny_model(), ds.schema);
  TrainConfig wild = tiny_train(2);
  wild.adam.lr = 1e150;  // parameters overflow within the first epoch
  CHECK_THROWS_WITH_AS(train(doomed, ds, wild, dir), doctest::Contains("diverged"),
                       NumericError);
  CHECK(read_file(dir + "/checkpoint.bin") == saved);
  std::filesystem::remove_all(dir);
}

TEST_CASE("train can log a diversity index against a reference checkpoint") {
  const Dataset ds = tiny_synthetic();
  const std::string dir = "/tmp/croc_test_ref";
  std::filesystem::remove_all(dir);

  Model ref(tiny_model(Variant::SDEM), ds.schema);
  train(ref, ds, tiny_train(1), dir);

  TrainConfig cfg = tiny_train(1);
  cfg.ref_checkpoint = dir + "/checkpoint.bin";
  Model cand(tiny_model(), ds.schema);
  const TrainResult res = train(cand, ds, cfg);
  const double di = res.last("overall", "di");
  REQUIRE(!std::isnan(di));
  CHECK(di >= 0.0);
  CHECK(di <= 1.0);
  std::filesystem::remove_all(dir);
}

TEST_CASE("metric and ia csv renderings are stable") {
  TrainResult res;
  res.metrics.push_back({1, "overall", "auc", 0.75});
  res.metrics.push_back({1, "0", "loss_bce", 1.0 / 3.0});
  res.ia.push_back({1, "bank0", 3.5});
  CHECK(res.metrics_csv() ==
        "step,domain,metric,value\n1,overall,auc,0.75\n1,0,loss_bce," +
            format_double(1.0 / 3.0) + "\n");
  CHECK(res.ia_csv() == "step,table,ia\n1,bank0,3.5\n");
}

TEST_CASE("train config json round trip") {
  TrainConfig c;
  c.epochs = 7;
  c.batch_size = 32;
  c.train_fraction = 0.75;
  c.adam.lr = 0.01;
  c.loss.alpha = 0.5;
  c.loss.cov_sample = 16;
  c.seed = 99;
  c.eval_every = 2;
  c.ref_checkpoint = "/some/path.bin";
  const TrainConfig back = TrainConfig::from_json(c.to_json());
  CHECK(back.epochs == 7);
  CHECK(back.batch_size == 32);
  CHECK(back.train_fraction == 0.75);
  CHECK(back.adam.lr == 0.01);
  CHECK(back.loss.alpha == 0.5);
  CHECK(back.loss.cov_sample == 16);
  CHECK(back.seed == 99);
  CHECK(back.eval_every == 2);
  CHECK(back.ref_checkpoint == "/some/path.bin");
  CHECK_THROWS(TrainConfig::from_json("{\"epochs\": 0}"));
}
