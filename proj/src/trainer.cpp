#include "croc/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <memory>
#include <sstream>

#include <json.hpp>

#include "croc/io.hpp"
#include "croc/metrics.hpp"

namespace croc {

using nlohmann::json;

void Adam::step(ParamStore& params) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (const auto& [name, stored] : params.items()) {
    Tensor tensor = stored;  // shared handle; writes hit the stored values
    auto g = tensor.grad();
    if (g.empty()) continue;  // never touched by backward this step
    auto& m = m_[name];
    auto& v = v_[name];
    if (m.empty()) m.assign(g.size(), 0.0);
    if (v.empty()) v.assign(g.size(), 0.0);
    if (m.size() != g.size()) throw Error("adam: state size mismatch for " + name);
    auto vals = tensor.mutable_values();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(g[i]))
        throw NumericError("adam: non-finite gradient in parameter " + name);
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      vals[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

void Adam::restore(std::map<std::string, std::vector<double>> m,
                   std::map<std::string, std::vector<double>> v, std::uint64_t t) {
  m_ = std::move(m);
  v_ = std::move(v);
  t_ = t;
}

std::string TrainConfig::to_json() const {
  json j;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["train_fraction"] = train_fraction;
  j["lr"] = adam.lr;
  j["beta1"] = adam.beta1;
  j["beta2"] = adam.beta2;
  j["eps"] = adam.eps;
  j["loss"] = json::parse(loss.to_json());
  j["seed"] = seed;
  j["eval_every"] = eval_every;
  j["ia_every"] = ia_every;
  j["checkpoint_every"] = checkpoint_every;
  if (!ref_checkpoint.empty()) j["ref_checkpoint"] = ref_checkpoint;
  return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  json j = json::parse(text);
  TrainConfig c;
  if (j.contains("epochs")) c.epochs = j.at("epochs").get<std::size_t>();
  if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<std::size_t>();
  if (j.contains("train_fraction")) c.train_fraction = j.at("train_fraction").get<double>();
  if (j.contains("lr")) c.adam.lr = j.at("lr").get<double>();
  if (j.contains("beta1")) c.adam.beta1 = j.at("beta1").get<double>();
  if (j.contains("beta2")) c.adam.beta2 = j.at("beta2").get<double>();
  if (j.contains("eps")) c.adam.eps = j.at("eps").get<double>();
  if (j.contains("loss")) c.loss = LossConfig::from_json(j.at("loss").dump());
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("eval_every")) c.eval_every = j.at("eval_every").get<std::size_t>();
  if (j.contains("ia_every")) c.ia_every = j.at("ia_every").get<std::size_t>();
  if (j.contains("checkpoint_every"))
    c.checkpoint_every = j.at("checkpoint_every").get<std::size_t>();
  if (j.contains("ref_checkpoint")) c.ref_checkpoint = j.at("ref_checkpoint").get<std::string>();
  if (c.epochs == 0) throw Error("epochs must be >= 1");
  if (c.batch_size < 2) throw Error("batch_size must be >= 2");
  return c;
}

double TrainResult::last(const std::string& domain, const std::string& metric) const {
  for (auto it = metrics.rbegin(); it != metrics.rend(); ++it)
    if (it->domain == domain && it->metric == metric) return it->value;
  return std::nan("");
}

std::string TrainResult::metrics_csv() const {
  std::ostringstream os;
  os << "step,domain,metric,value\n";
  for (const MetricRow& r : metrics)
    os << r.step << ',' << r.domain << ',' << r.metric << ',' << format_double(r.value)
       << '\n';
  return os.str();
}

std::string TrainResult::ia_csv() const {
  std::ostringstream os;
  os << "step,table,ia\n";
  for (const IaRow& r : ia)
    os << r.step << ',' << r.table << ',' << format_double(r.value) << '\n';
  return os.str();
}

std::vector<IaRow> model_ia_rows(const Model& model, std::size_t step) {
  std::vector<IaRow> rows;
  const Schema& schema = model.schema();
  for (std::size_t p = 0; p < model.num_tables(); ++p) {
    std::size_t r = 0, c = 0;
    const std::vector<double> stacked = model.stacked_table(p, r, c);
    rows.push_back({step, "bank" + std::to_string(p), information_abundance(stacked, r, c)});
    for (std::size_t f = 0; f < schema.fields.size(); ++f) {
      const Tensor& t = model.bank().table(p, f);
      std::vector<double> vals(t.values().begin(), t.values().end());
      rows.push_back({step, "bank" + std::to_string(p) + "/" + schema.fields[f].name,
                      information_abundance(vals, t.shape()[0], t.shape()[1])});
    }
  }
  return rows;
}

namespace {

void eval_rows(const Model& model, const Dataset& test, std::size_t epoch,
               std::vector<MetricRow>& out) {
  const EvalScores ev = collect_scores(model, test);
  for (std::size_t s = 0; s < model.num_domains(); ++s) {
    const EvalScores slice = ev.domain_slice(static_cast<int>(s));
    if (slice.scores.empty()) continue;
    const std::string dom = std::to_string(s);
    if (auto a = auc(slice.scores, slice.labels)) out.push_back({epoch, dom, "auc", *a});
    if (auto g = gauc(slice.scores, slice.labels, slice.users))
      out.push_back({epoch, dom, "gauc", *g});
  }
  if (auto a = auc(ev.scores, ev.labels)) out.push_back({epoch, "overall", "auc", *a});
  if (auto g = gauc(ev.scores, ev.labels, ev.users))
    out.push_back({epoch, "overall", "gauc", *g});
}

}  // namespace

TrainResult train(Model& model, const Dataset& ds, const TrainConfig& cfg,
                  const std::string& out_dir, Adam* optimizer) {
  const auto t0 = std::chrono::steady_clock::now();
  auto [train_ds, test_ds] = split_dataset(ds, cfg.train_fraction, cfg.seed);
  const std::uint64_t data_fp = ds.fingerprint();

  Adam local(cfg.adam);
  Adam& adam = optimizer ? *optimizer : local;

  // Optional reference for the diversity-index log.
  std::unique_ptr<Model> ref;
  std::vector<ConflictSet> conflict_sets;
  if (!cfg.ref_checkpoint.empty()) {
    const Checkpoint ck = load_checkpoint(cfg.ref_checkpoint);
    ref = std::make_unique<Model>(model_from_checkpoint(ck, ds.schema));
    conflict_sets = build_conflict_sets(*ref, test_ds);
  }

  TrainResult result;
  const std::size_t n_dom = model.num_domains();
  const std::string ckpt_path =
      out_dir.empty() ? "" : (std::filesystem::path(out_dir) / "checkpoint.bin").string();

  std::size_t global_step = adam.steps();
  // Resuming from a checkpoint continues the absolute epoch numbering, so a
  // resumed run replays the exact batch order of an uninterrupted one.
  const std::size_t batches_per_epoch =
      (train_ds.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t epoch_offset =
      batches_per_epoch == 0 ? 0 : global_step / batches_per_epoch;
  for (std::size_t local = 1; local <= cfg.epochs; ++local) {
    const std::size_t epoch = epoch_offset + local;
    std::vector<double> bce_sum(n_dom, 0.0);
    double cov_sum = 0.0, total_sum = 0.0;
    std::size_t n_batches = 0;

    const std::uint64_t shuffle_seed = splitmix64(cfg.seed ^ (0x9e3779b97f4a7c15ULL * epoch));
    try {
      for (const Batch& batch : batch_iter(train_ds, cfg.batch_size, shuffle_seed)) {
        model.params().zero_grads();
        Tape tape;
        ForwardOut fwd = model.forward(tape, batch);
        const std::uint64_t cov_seed =
            splitmix64(cfg.seed ^ (0xc2b2ae3d27d4eb4fULL * (global_step + 1)));
        LossParts parts =
            total_loss(tape, cfg.loss, fwd.domain_pred, batch, fwd.expert_out, cov_seed);
        tape.backward(parts.total);
        adam.step(model.params());
        for (std::size_t s = 0; s < n_dom; ++s) bce_sum[s] += parts.bce_value(s);
        cov_sum += parts.disentangle_value();
        total_sum += parts.total_value();
        ++n_batches;
        ++global_step;
      }
    } catch (const NumericError& e) {
      throw NumericError("training diverged at epoch " + std::to_string(epoch) + ": " +
                         e.what() + (ckpt_path.empty() ? "" : "; last checkpoint retained"));
    }

    const double nb = static_cast<double>(n_batches);
    for (std::size_t s = 0; s < n_dom; ++s)
      result.metrics.push_back({epoch, std::to_string(s), "loss_bce", bce_sum[s] / nb});
    result.metrics.push_back({epoch, "overall", "loss_cov", cov_sum / nb});
    result.metrics.push_back({epoch, "overall", "loss_total", total_sum / nb});

    const bool last_epoch = local == cfg.epochs;
    if ((cfg.eval_every > 0 && epoch % cfg.eval_every == 0) || last_epoch)
      eval_rows(model, test_ds, epoch, result.metrics);
    if ((cfg.ia_every > 0 && epoch % cfg.ia_every == 0) || last_epoch) {
      const auto rows = model_ia_rows(model, epoch);
      result.ia.insert(result.ia.end(), rows.begin(), rows.end());
      if (ref) {
        const DiResult di = diversity_index(model, test_ds, conflict_sets);
        result.metrics.push_back({epoch, "overall", "di", di.average});
      }
    }
    if (!ckpt_path.empty() &&
        ((cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0) || last_epoch))
      save_checkpoint(ckpt_path, model, adam, cfg, data_fp, global_step);
  }

  result.steps = global_step;
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

// ---- checkpoints ------------------------------------------------------

namespace {
constexpr char kMagic[9] = "CROCCKP1";
constexpr std::uint32_t kVersion = 1;

void put_tensor(std::string& out, const std::string& name, const Shape& shape,
                const std::vector<double>& values) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out.append(name);
  put_u32(out, static_cast<std::uint32_t>(shape.size()));
  for (std::size_t d : shape) put_u64(out, d);
  for (double v : values) put_f64(out, v);
}
}  // namespace

std::string encode_checkpoint(const Model& model, const Adam& adam, const TrainConfig& cfg,
                              std::uint64_t dataset_fingerprint, std::uint64_t step) {
  const std::string model_json = model.config().to_json();
  const std::string train_json = cfg.to_json();

  std::vector<std::pair<std::string, std::pair<Shape, std::vector<double>>>> tensors;
  for (const auto& [name, t] : model.params().items())
    tensors.push_back({name, {t.shape(), {t.values().begin(), t.values().end()}}});
  for (const auto& [name, m] : adam.state_m())
    tensors.push_back({"adam/m/" + name, {{m.size()}, m}});
  for (const auto& [name, v] : adam.state_v())
    tensors.push_back({"adam/v/" + name, {{v.size()}, v}});
  tensors.push_back({"adam/t", {{1}, {static_cast<double>(adam.steps())}}});
  std::sort(tensors.begin(), tensors.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  Fnv1a digest;
  digest.str(model_json);
  digest.str(train_json);

  std::string out;
  out.append(kMagic, 8);
  put_u32(out, kVersion);
  put_u64(out, digest.value());
  put_u32(out, static_cast<std::uint32_t>(model_json.size()));
  out.append(model_json);
  put_u32(out, static_cast<std::uint32_t>(train_json.size()));
  out.append(train_json);
  put_u64(out, dataset_fingerprint);
  put_u64(out, step);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, st] : tensors) put_tensor(out, name, st.first, st.second);
  return out;
}

void save_checkpoint(const std::string& path, const Model& model, const Adam& adam,
                     const TrainConfig& cfg, std::uint64_t dataset_fingerprint,
                     std::uint64_t step) {
  atomic_write_file(path, encode_checkpoint(model, adam, cfg, dataset_fingerprint, step));
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 8 || bytes.compare(0, 8, kMagic, 8) != 0)
    throw Error("checkpoint: bad magic");
  std::size_t pos = 8;
  const std::uint32_t version = get_u32(bytes, pos);
  if (version != kVersion)
    throw Error("checkpoint: unsupported version " + std::to_string(version));
  const std::uint64_t stored_digest = get_u64(bytes, pos);

  Checkpoint ck;
  const std::uint32_t mlen = get_u32(bytes, pos);
  ck.model_config_json = bytes.substr(pos, mlen);
  pos += mlen;
  const std::uint32_t tlen = get_u32(bytes, pos);
  ck.train_config_json = bytes.substr(pos, tlen);
  pos += tlen;
  Fnv1a digest;
  digest.str(ck.model_config_json);
  digest.str(ck.train_config_json);
  if (digest.value() != stored_digest) throw Error("checkpoint: config digest mismatch");

  ck.dataset_fingerprint = get_u64(bytes, pos);
  ck.step = get_u64(bytes, pos);
  const std::uint32_t count = get_u32(bytes, pos);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t nlen = get_u32(bytes, pos);
    if (pos + nlen > bytes.size()) throw Error("checkpoint: truncated name");
    std::string name = bytes.substr(pos, nlen);
    pos += nlen;
    const std::uint32_t rank = get_u32(bytes, pos);
    Shape shape(rank);
    std::size_t elems = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      shape[r] = get_u64(bytes, pos);
      elems *= shape[r];
    }
    std::vector<double> values(elems);
    for (std::size_t e = 0; e < elems; ++e) values[e] = get_f64(bytes, pos);
    ck.tensors.push_back({std::move(name), {std::move(shape), std::move(values)}});
  }
  if (pos != bytes.size()) throw Error("checkpoint: trailing bytes");
  return ck;
}

Checkpoint load_checkpoint(const std::string& path) {
  return decode_checkpoint(read_file(path));
}

const std::vector<double>* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, st] : tensors)
    if (n == name) return &st.second;
  return nullptr;
}

void restore_model_params(Model& model, const Checkpoint& ckpt) {
  for (const auto& [name, param] : model.params().items()) {
    Tensor tensor = param;  // shared handle
    const std::vector<double>* stored = nullptr;
    const Shape* shape = nullptr;
    for (const auto& [n, st] : ckpt.tensors) {
      if (n == name) {
        shape = &st.first;
        stored = &st.second;
        break;
      }
    }
    if (!stored) throw Error("checkpoint: missing tensor " + name);
    if (*shape != tensor.shape()) throw Error("checkpoint: shape mismatch for " + name);
    auto vals = tensor.mutable_values();
    std::copy(stored->begin(), stored->end(), vals.begin());
  }
}

Model model_from_checkpoint(const Checkpoint& ckpt, const Schema& schema) {
  Model model(ModelConfig::from_json(ckpt.model_config_json), schema);
  restore_model_params(model, ckpt);
  return model;
}

void restore_adam(Adam& adam, const Checkpoint& ckpt, const Model& model) {
  std::map<std::string, std::vector<double>> m, v;
  for (const auto& [name, tensor] : model.params().items()) {
    const std::vector<double>* sm = ckpt.find("adam/m/" + name);
    const std::vector<double>* sv = ckpt.find("adam/v/" + name);
    if (!sm || !sv) throw Error("checkpoint: missing optimizer state for " + name);
    m[name] = *sm;
    v[name] = *sv;
  }
  const std::vector<double>* t = ckpt.find("adam/t");
  if (!t || t->size() != 1) throw Error("checkpoint: missing optimizer step");
  adam.restore(std::move(m), std::move(v), static_cast<std::uint64_t>((*t)[0]));
}

}  // namespace croc
