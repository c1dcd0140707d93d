// Command-line surface: data generation, training, diagnostics, and the
// ablation/sensitivity harnesses, each emitting a manifest that reproduces
// the run byte-for-byte. Exit codes: 0 ok, 1 runtime failure, 2 usage error.
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "croc/harness.hpp"
#include "croc/io.hpp"
#include "croc/metrics.hpp"
#include "croc/trainer.hpp"

using json = nlohmann::json;
using namespace croc;

namespace {

constexpr const char* kVersion = "croc 0.1.0";

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string digest_of(const std::string& content) { return hex64(fnv1a64(content)); }

/// Default-seed override: used only when neither a flag nor a config file
/// pins the seed.
std::optional<std::uint64_t> croc_seed_env() {
  const char* v = std::getenv("CROC_SEED");
  if (!v || !*v) return std::nullopt;
  char* end = nullptr;
  errno = 0;
  const unsigned long long x = std::strtoull(v, &end, 10);
  if (errno != 0 || end == v || *end != '\0')
    throw Error("CROC_SEED must be a non-negative integer, got '" + std::string(v) + "'");
  return x;
}

/// Collects the files a command writes, so the manifest can list their
/// digests. All writes are atomic; subdirectories are created as needed.
class OutputSet {
 public:
  explicit OutputSet(std::string dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
  }

  void write(const std::string& name, const std::string& content) {
    const std::filesystem::path path = std::filesystem::path(dir_) / name;
    std::filesystem::create_directories(path.parent_path());
    atomic_write_file(path.string(), content);
    files_[name] = digest_of(content);
    std::cout << "wrote " << path.string() << "\n";
  }

  /// Record a file some callee already wrote under this directory.
  void record_existing(const std::string& name) {
    const std::filesystem::path path = std::filesystem::path(dir_) / name;
    files_[name] = digest_of(read_file(path.string()));
  }

  json digests() const {
    json j = json::object();
    for (const auto& [name, d] : files_) j[name] = d;
    return j;
  }

  const std::string& dir() const { return dir_; }

 private:
  std::string dir_;
  std::map<std::string, std::string> files_;
};

void write_manifest(const std::string& dir, const json& manifest) {
  const std::string path = (std::filesystem::path(dir) / "manifest.json").string();
  atomic_write_file(path, manifest.dump(2) + "\n");
  std::cout << "wrote " << path << "\n";
}

// ---- dataset sources -------------------------------------------------------
// A manifest stores where the data came from: a directory of CSVs or an
// inline generator spec, plus the dataset fingerprint for drift detection.

json data_entry_from_dir(const std::string& dir) {
  const Dataset ds = load_dataset(dir);
  return {{"kind", "dir"},
          {"path", std::filesystem::absolute(dir).string()},
          {"fingerprint", hex64(ds.fingerprint())}};
}

json data_entry_from_spec(const GenSpec& spec) {
  const Dataset ds = generate_synthetic(spec);
  return {{"kind", "gen"},
          {"spec", json::parse(spec.to_json())},
          {"fingerprint", hex64(ds.fingerprint())}};
}

Dataset data_from_entry(const json& e) {
  const std::string kind = e.at("kind").get<std::string>();
  Dataset ds;
  if (kind == "dir") {
    ds = load_dataset(e.at("path").get<std::string>());
  } else if (kind == "gen") {
    ds = generate_synthetic(GenSpec::from_json(e.at("spec").dump()));
  } else {
    throw Error("manifest: unknown data kind '" + kind + "'");
  }
  const std::string want = e.at("fingerprint").get<std::string>();
  if (hex64(ds.fingerprint()) != want)
    throw Error("manifest: dataset fingerprint mismatch (data changed since the "
                "manifest was written)");
  return ds;
}

// ---- command cores ---------------------------------------------------------
// Each core takes fully resolved inputs (no flags, no environment) and is
// shared between the subcommand and `rerun`, which replays a manifest.

json core_gen_data(const json& spec_json, const std::string& out_dir) {
  const GenSpec spec = GenSpec::from_json(spec_json.dump());
  const Dataset ds = generate_synthetic(spec);
  OutputSet out(out_dir);
  out.write("data.csv", dataset_to_csv(ds));
  out.write("schema.json", ds.schema.to_json());
  json manifest = {{"command", "gen-data"},
                   {"version", kVersion},
                   {"spec", spec_json},
                   {"fingerprint", hex64(ds.fingerprint())},
                   {"outputs", out.digests()}};
  write_manifest(out_dir, manifest);
  return manifest;
}

json core_train(const json& data_entry, const json& model_json, const json& train_json,
                bool resume, const std::string& out_dir) {
  const Dataset ds = data_from_entry(data_entry);
  TrainConfig tc = TrainConfig::from_json(train_json.dump());
  json model_resolved = model_json;

  OutputSet out(out_dir);
  const std::string ckpt_path =
      (std::filesystem::path(out_dir) / "checkpoint.bin").string();

  TrainResult res;
  if (resume && std::filesystem::exists(ckpt_path)) {
    const Checkpoint ck = load_checkpoint(ckpt_path);
    model_resolved = json::parse(ck.model_config_json);
    Model model = model_from_checkpoint(ck, ds.schema);
    Adam adam(tc.adam);
    restore_adam(adam, ck, model);
    const std::size_t train_n = split_dataset(ds, tc.train_fraction, tc.seed).first.size();
    const std::size_t per_epoch = (train_n + tc.batch_size - 1) / tc.batch_size;
    const std::size_t done = per_epoch == 0 ? 0 : ck.step / per_epoch;
    if (done >= tc.epochs) {
      // A run killed mid-flight leaves a checkpoint but no CSVs; record
      // whatever is actually there.
      std::cout << "checkpoint already covers " << done << " epochs; nothing to resume\n";
      for (const char* name : {"metrics.csv", "ia.csv", "checkpoint.bin"})
        if (std::filesystem::exists(std::filesystem::path(out_dir) / name))
          out.record_existing(name);
    } else {
      TrainConfig remaining = tc;
      remaining.epochs = tc.epochs - done;
      std::cout << "resuming after epoch " << done << "\n";
      res = train(model, ds, remaining, out_dir, &adam);
      out.write("metrics.csv", res.metrics_csv());
      out.write("ia.csv", res.ia_csv());
      out.record_existing("checkpoint.bin");
    }
  } else {
    const ModelConfig mc = ModelConfig::from_json(model_json.dump());
    Model model(mc, ds.schema);
    res = train(model, ds, tc, out_dir);
    out.write("metrics.csv", res.metrics_csv());
    out.write("ia.csv", res.ia_csv());
    out.record_existing("checkpoint.bin");
  }

  json manifest = {{"command", "train"},  {"version", kVersion},
                   {"data", data_entry},  {"model", model_resolved},
                   {"train", train_json}, {"resume", resume},
                   {"outputs", out.digests()}};
  write_manifest(out_dir, manifest);
  return manifest;
}

std::string matrix_csv(const std::vector<double>& values, std::size_t rows,
                       std::size_t cols) {
  std::string s;
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      if (j) s += ',';
      s += format_double(values[i * cols + j]);
    }
    s += '\n';
  }
  return s;
}

json core_diagnose(const json& data_entry, const std::string& ckpt_path,
                   const std::string& ref_path, const std::string& out_dir) {
  const Dataset ds = data_from_entry(data_entry);
  const Checkpoint ck = load_checkpoint(ckpt_path);
  const Model model = model_from_checkpoint(ck, ds.schema);
  OutputSet out(out_dir);

  // Ranking metrics, per domain and overall.
  const EvalScores ev = collect_scores(model, ds);
  std::string auc_csv = "domain,metric,value\n";
  auto add_metric = [&auc_csv](const std::string& dom, const char* name,
                               const std::optional<double>& v) {
    if (v) auc_csv += dom + "," + name + "," + format_double(*v) + "\n";
  };
  for (std::size_t s = 0; s < model.num_domains(); ++s) {
    const EvalScores slice = ev.domain_slice(static_cast<int>(s));
    if (slice.scores.empty()) continue;
    add_metric(std::to_string(s), "auc", auc(slice.scores, slice.labels));
    add_metric(std::to_string(s), "gauc", gauc(slice.scores, slice.labels, slice.users));
  }
  add_metric("overall", "auc", auc(ev.scores, ev.labels));
  add_metric("overall", "gauc", gauc(ev.scores, ev.labels, ev.users));
  out.write("auc.csv", auc_csv);

  // Information abundance, one row per embedding table.
  std::string ia_csv = "table,ia\n";
  for (const IaRow& row : model_ia_rows(model, ck.step))
    ia_csv += row.table + "," + format_double(row.value) + "\n";
  out.write("ia.csv", ia_csv);

  // Covariance structure.
  const HeatmapResult hm = covariance_heatmaps(model, ds);
  std::vector<std::string> expert_labels;
  for (std::size_t k = 0; k < hm.n_experts; ++k)
    expert_labels.push_back("e" + std::to_string(k));
  out.write("heatmap_experts.csv", matrix_csv(hm.expert_level, hm.n_experts, hm.n_experts));
  out.write("heatmap_experts.svg",
            svg_heatmap(hm.expert_level, hm.n_experts, hm.n_experts, expert_labels,
                        "expert-level covariance (L1 / d^2)"));
  const std::size_t kd = hm.n_experts * hm.d;
  out.write("heatmap_dims.csv", matrix_csv(hm.dim_level, kd, kd));
  out.write("heatmap_dims.svg",
            svg_heatmap(hm.dim_level, kd, kd, {}, "dimension-level covariance"));

  // Diversity index needs a domain-bound reference model.
  json ref_entry;
  if (!ref_path.empty()) {
    const std::string ref_bytes = read_file(ref_path);
    const Checkpoint ref_ck = decode_checkpoint(ref_bytes);
    const Model ref = model_from_checkpoint(ref_ck, ds.schema);
    const DiResult di = diversity_index(model, ds, build_conflict_sets(ref, ds));
    out.write("di.csv", di.to_csv());
    std::cout << "diversity index: " << format_double(di.average) << " over "
              << di.pairs.size() << " pairs (" << di.skipped_empty << " empty)\n";
    ref_entry = {{"path", std::filesystem::absolute(ref_path).string()},
                 {"digest", digest_of(ref_bytes)}};
  } else {
    ref_entry = nullptr;
  }

  json manifest = {{"command", "diagnose"},
                   {"version", kVersion},
                   {"data", data_entry},
                   {"checkpoint",
                    {{"path", std::filesystem::absolute(ckpt_path).string()},
                     {"digest", digest_of(read_file(ckpt_path))}}},
                   {"ref_checkpoint", ref_entry},
                   {"outputs", out.digests()}};
  write_manifest(out_dir, manifest);
  return manifest;
}

// ---- ablation --------------------------------------------------------------

std::string runs_csv_header() { return "cell,variant,seed,auc,gauc\n"; }

std::string cell_variant(const AblationCell& cell, const ModelConfig& base_model,
                         const TrainConfig& base_train) {
  ModelConfig mc = base_model;
  TrainConfig tc = base_train;
  apply_cell(cell, mc, tc);
  return variant_name(mc.variant);
}

std::string cell_runs_csv(const AblationCell& cell, const std::string& variant,
                          const std::vector<RunScore>& runs) {
  std::string s;
  for (const RunScore& r : runs)
    s += cell.label() + "," + variant + "," + std::to_string(r.seed) + "," +
         format_double(r.auc) + "," + format_double(r.gauc) + "\n";
  return s;
}

/// Spawns `croc ablate --job ... --only-cell i` per cell, at most `parallel`
/// at a time, then merges the per-cell scores.
void run_cells_in_processes(const std::string& job_path, const std::string& out_dir,
                            std::size_t n_cells, std::size_t parallel) {
  const std::string self = std::filesystem::read_symlink("/proc/self/exe").string();
  std::map<pid_t, std::size_t> running;

  auto reap_one = [&running]() {
    int status = 0;
    const pid_t pid = waitpid(-1, &status, 0);
    if (pid < 0) throw Error("ablate: waitpid failed");
    const auto it = running.find(pid);
    if (it == running.end()) return;
    const std::size_t cell = it->second;
    running.erase(it);
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0)
      throw Error("ablate: worker for cell " + std::to_string(cell) + " failed");
  };

  for (std::size_t i = 0; i < n_cells; ++i) {
    while (running.size() >= parallel) reap_one();
    const std::string idx = std::to_string(i);
    const pid_t pid = fork();
    if (pid < 0) throw Error("ablate: fork failed");
    if (pid == 0) {
      execl(self.c_str(), self.c_str(), "ablate", "--job", job_path.c_str(),
            "--only-cell", idx.c_str(), "--out", out_dir.c_str(),
            static_cast<char*>(nullptr));
      _exit(127);  // exec failed
    }
    running.emplace(pid, i);
  }
  while (!running.empty()) reap_one();
}

json core_ablate(const json& data_entry, const json& grid_json,
                 const std::vector<std::uint64_t>& seeds, const json& model_json,
                 const json& train_json, std::size_t parallel, int only_cell,
                 const std::string& out_dir) {
  const Dataset ds = data_from_entry(data_entry);
  const std::vector<AblationCell> grid = parse_grid(grid_json.dump());
  const ModelConfig mc = ModelConfig::from_json(model_json.dump());
  const TrainConfig tc = TrainConfig::from_json(train_json.dump());

  if (only_cell >= 0) {
    // Worker mode: one cell, all seeds, one CSV, no manifest.
    if (static_cast<std::size_t>(only_cell) >= grid.size())
      throw Error("ablate: --only-cell out of range");
    const AblationCell& cell = grid[static_cast<std::size_t>(only_cell)];
    std::vector<RunScore> runs;
    for (const std::uint64_t seed : seeds) runs.push_back(run_cell_seed(ds, cell, seed, mc, tc));
    OutputSet out(out_dir);
    out.write("cells/cell_" + std::to_string(only_cell) + ".csv",
              runs_csv_header() + cell_runs_csv(cell, cell_variant(cell, mc, tc), runs));
    return json();
  }

  AblationResult result;
  if (parallel > 1) {
    // The job file carries everything resolved so workers skip flag parsing.
    const json job = {{"data", data_entry},
                      {"grid", grid_json},
                      {"seeds", seeds},
                      {"model", model_json},
                      {"train", train_json}};
    const std::string job_path = (std::filesystem::path(out_dir) / "job.json").string();
    std::filesystem::create_directories(out_dir);
    atomic_write_file(job_path, job.dump(2) + "\n");
    run_cells_in_processes(job_path, out_dir, grid.size(), parallel);

    // Merge per-cell scores; format_double round-trips exactly, so the merged
    // CSVs are byte-identical to a sequential run's.
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const std::string path =
          (std::filesystem::path(out_dir) / "cells" / ("cell_" + std::to_string(i) + ".csv"))
              .string();
      HarnessRow row;
      row.label = grid[i].label();
      row.variant = cell_variant(grid[i], mc, tc);
      std::istringstream in(read_file(path));
      std::string line;
      std::getline(in, line);  // header
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        RunScore r;
        // columns: cell,variant,seed,auc,gauc
        std::istringstream fields(line);
        std::string cell_s, variant_s, seed_s, auc_s, gauc_s;
        std::getline(fields, cell_s, ',');
        std::getline(fields, variant_s, ',');
        std::getline(fields, seed_s, ',');
        std::getline(fields, auc_s, ',');
        std::getline(fields, gauc_s, ',');
        r.seed = std::stoull(seed_s);
        r.auc = std::stod(auc_s);
        r.gauc = std::stod(gauc_s);
        row.runs.push_back(r);
      }
      result.rows.push_back(std::move(row));
    }
    aggregate_rows(result.rows);
  } else {
    result = ablation_harness(ds, grid, seeds, mc, tc);
  }

  OutputSet out(out_dir);
  out.write("ablation.csv", result.to_csv());
  std::string runs = runs_csv_header();
  for (std::size_t i = 0; i < result.rows.size(); ++i)
    runs += cell_runs_csv(grid[i], result.rows[i].variant, result.rows[i].runs);
  out.write("runs.csv", runs);

  json manifest = {{"command", "ablate"}, {"version", kVersion},
                   {"data", data_entry},  {"grid", grid_json},
                   {"seeds", seeds},      {"model", model_json},
                   {"train", train_json}, {"outputs", out.digests()}};
  write_manifest(out_dir, manifest);
  return manifest;
}

json core_sweep(const std::string& kind, const json& xs_json,
                const json& data_entry, const std::vector<std::uint64_t>& seeds,
                const json& model_json, const json& train_json,
                const std::string& out_dir) {
  const Dataset ds = data_from_entry(data_entry);
  const ModelConfig mc = ModelConfig::from_json(model_json.dump());
  const TrainConfig tc = TrainConfig::from_json(train_json.dump());

  SweepResult result;
  if (kind == "alpha") {
    result = alpha_sweep(ds, xs_json.get<std::vector<double>>(), seeds, mc, tc);
  } else if (kind == "embeddings") {
    result = embedding_sweep(ds, xs_json.get<std::vector<std::size_t>>(), seeds, mc, tc);
  } else {
    throw Error("sweep: unknown kind '" + kind + "', expected alpha or embeddings");
  }

  OutputSet out(out_dir);
  out.write("sweep.csv", result.to_csv());
  out.write("sweep_auc.svg", result.auc_svg());
  out.write("sweep_gauc.svg", result.gauc_svg());

  json manifest = {{"command", "sweep"},  {"version", kVersion},
                   {"kind", kind},        {"xs", xs_json},
                   {"data", data_entry},  {"seeds", seeds},
                   {"model", model_json}, {"train", train_json},
                   {"outputs", out.digests()}};
  write_manifest(out_dir, manifest);
  return manifest;
}

// ---- flag resolution helpers ------------------------------------------------

std::vector<double> parse_doubles(const std::string& csv) {
  std::vector<double> out;
  std::istringstream in(csv);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw Error("expected a comma-separated list of numbers, got '" + tok + "'");
    }
  }
  if (out.empty()) throw Error("expected a non-empty list of numbers");
  return out;
}

std::vector<std::size_t> parse_sizes(const std::string& csv) {
  std::vector<std::size_t> out;
  for (const double v : parse_doubles(csv)) {
    if (v < 1 || v != static_cast<double>(static_cast<std::size_t>(v)))
      throw Error("expected positive integers, got '" + format_double(v) + "'");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

std::vector<std::uint64_t> seed_list(std::uint64_t base, std::size_t count) {
  std::vector<std::uint64_t> seeds(count);
  for (std::size_t i = 0; i < count; ++i) seeds[i] = base + i;
  return seeds;
}

/// Model/train configs from an optional --config file holding
/// {"model": {...}, "train": {...}} (both sections optional), returning the
/// raw sections so seed resolution can tell "set by file" from "default".
struct LoadedConfig {
  ModelConfig model;
  TrainConfig train;
  json raw_model = json::object();
  json raw_train = json::object();
};

LoadedConfig load_config(const std::string& path) {
  LoadedConfig c;
  if (path.empty()) return c;
  const json j = json::parse(read_file(path));
  if (j.contains("model")) {
    c.raw_model = j.at("model");
    c.model = ModelConfig::from_json(c.raw_model.dump());
  }
  if (j.contains("train")) {
    c.raw_train = j.at("train");
    c.train = TrainConfig::from_json(c.raw_train.dump());
  }
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-domain recommendation toolkit"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  // gen-data ------------------------------------------------------------
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic multi-domain dataset");
  std::string gen_spec_file, gen_out;
  std::uint64_t gen_seed = 0;
  gen->add_option("--spec", gen_spec_file, "generator spec JSON (default: built-in)")
      ->check(CLI::ExistingFile);
  gen->add_option("--out", gen_out, "output directory")->required();
  auto* gen_seed_opt = gen->add_option("--seed", gen_seed, "generator seed");

  // train ---------------------------------------------------------------
  auto* tr = app.add_subcommand("train", "train one model variant");
  std::string tr_data, tr_gen, tr_config, tr_out, tr_variant, tr_ref;
  std::uint64_t tr_seed = 0;
  std::size_t tr_epochs = 0, tr_batch = 0, tr_tables = 0;
  double tr_lr = 0.0, tr_alpha = 0.0;
  bool tr_resume = false;
  auto* tr_src = tr->add_option_group("data source");
  tr_src->add_option("--data", tr_data, "dataset directory (data.csv + schema.json)");
  tr_src->add_option("--gen", tr_gen, "generator spec JSON to synthesize from")
      ->check(CLI::ExistingFile);
  tr_src->require_option(1);
  tr->add_option("--config", tr_config, "JSON with model/train sections")
      ->check(CLI::ExistingFile);
  tr->add_option("--out", tr_out, "output directory")->required();
  auto* tr_variant_opt =
      tr->add_option("--variant", tr_variant, "architecture variant")
          ->check(CLI::IsMember(variant_names()));
  auto* tr_epochs_opt = tr->add_option("--epochs", tr_epochs, "training epochs");
  auto* tr_batch_opt = tr->add_option("--batch-size", tr_batch, "mini-batch size");
  auto* tr_lr_opt = tr->add_option("--lr", tr_lr, "adam learning rate");
  auto* tr_alpha_opt = tr->add_option("--alpha", tr_alpha, "covariance penalty weight");
  auto* tr_tables_opt = tr->add_option("--embed-tables", tr_tables, "embedding table count");
  auto* tr_seed_opt = tr->add_option("--seed", tr_seed, "model + training seed");
  tr->add_option("--ref-checkpoint", tr_ref,
                 "domain-bound reference checkpoint for diversity-index logging");
  tr->add_flag("--resume", tr_resume, "continue from <out>/checkpoint.bin if present");

  // diagnose ------------------------------------------------------------
  auto* dg = app.add_subcommand("diagnose", "evaluate a checkpoint: AUC, IA, DI, heatmaps");
  std::string dg_ckpt, dg_data, dg_gen, dg_ref, dg_out;
  dg->add_option("--checkpoint", dg_ckpt, "checkpoint to diagnose")
      ->required()
      ->check(CLI::ExistingFile);
  auto* dg_src = dg->add_option_group("data source");
  dg_src->add_option("--data", dg_data, "dataset directory");
  dg_src->add_option("--gen", dg_gen, "generator spec JSON")->check(CLI::ExistingFile);
  dg_src->require_option(1);
  dg->add_option("--ref-checkpoint", dg_ref,
                 "domain-bound reference for the diversity index");
  dg->add_option("--out", dg_out, "output directory")->required();

  // ablate ----------------------------------------------------------------
  auto* ab = app.add_subcommand("ablate", "train the ablation grid over several seeds");
  std::string ab_data, ab_gen, ab_grid, ab_config, ab_out, ab_job;
  std::uint64_t ab_seed = 0;
  std::size_t ab_nseeds = 3, ab_parallel = 1;
  int ab_only_cell = -1;
  auto* ab_src = ab->add_option_group("data source");
  ab_src->add_option("--data", ab_data, "dataset directory");
  ab_src->add_option("--gen", ab_gen, "generator spec JSON")->check(CLI::ExistingFile);
  ab->add_option("--grid", ab_grid, "grid JSON (default: the seven-row table)")
      ->check(CLI::ExistingFile);
  ab->add_option("--config", ab_config, "JSON with model/train sections")
      ->check(CLI::ExistingFile);
  ab->add_option("--out", ab_out, "output directory")->required();
  auto* ab_seed_opt = ab->add_option("--seed", ab_seed, "first seed (seeds are consecutive)");
  ab->add_option("--seeds", ab_nseeds, "number of seeds per cell")
      ->check(CLI::PositiveNumber);
  ab->add_option("--parallel", ab_parallel, "worker processes (1 = in-process)")
      ->check(CLI::PositiveNumber);
  ab->add_option("--job", ab_job, "resolved job file (worker plumbing)")
      ->group("");  // hidden
  ab->add_option("--only-cell", ab_only_cell, "run a single grid cell (worker plumbing)")
      ->group("");

  // sweep ---------------------------------------------------------------
  auto* sw = app.add_subcommand("sweep", "penalty-weight or table-count sensitivity");
  std::string sw_kind, sw_data, sw_gen, sw_config, sw_out;
  std::string sw_alphas = "0,1e-5,1e-4,1e-3,1e-2";
  std::string sw_tables = "2,3,4,5";
  std::uint64_t sw_seed = 0;
  std::size_t sw_nseeds = 3;
  sw->add_option("--kind", sw_kind, "alpha | embeddings")
      ->required()
      ->check(CLI::IsMember({"alpha", "embeddings"}));
  auto* sw_src = sw->add_option_group("data source");
  sw_src->add_option("--data", sw_data, "dataset directory");
  sw_src->add_option("--gen", sw_gen, "generator spec JSON")->check(CLI::ExistingFile);
  sw_src->require_option(1);
  sw->add_option("--alphas", sw_alphas, "comma-separated penalty weights");
  sw->add_option("--tables", sw_tables, "comma-separated table counts");
  sw->add_option("--config", sw_config, "JSON with model/train sections")
      ->check(CLI::ExistingFile);
  sw->add_option("--out", sw_out, "output directory")->required();
  auto* sw_seed_opt = sw->add_option("--seed", sw_seed, "first seed");
  sw->add_option("--seeds", sw_nseeds, "number of seeds per point")
      ->check(CLI::PositiveNumber);

  // rerun ---------------------------------------------------------------
  auto* rr = app.add_subcommand("rerun", "replay a manifest byte-for-byte");
  std::string rr_manifest, rr_out;
  rr->add_option("--manifest", rr_manifest, "manifest.json from a previous run")
      ->required()
      ->check(CLI::ExistingFile);
  rr->add_option("--out", rr_out, "output directory (default: the manifest's directory)");

  // ---- dispatch -------------------------------------------------------

  gen->callback([&] {
    GenSpec spec;
    json raw = json::object();
    if (!gen_spec_file.empty()) {
      raw = json::parse(read_file(gen_spec_file));
      spec = GenSpec::from_json(raw.dump());
    }
    if (gen_seed_opt->count() > 0) {
      spec.seed = gen_seed;
    } else if (!raw.contains("seed")) {
      if (const auto env = croc_seed_env()) spec.seed = *env;
    }
    core_gen_data(json::parse(spec.to_json()), gen_out);
  });

  tr->callback([&] {
    const json data_entry = tr_data.empty()
                                ? data_entry_from_spec(GenSpec::from_json(read_file(tr_gen)))
                                : data_entry_from_dir(tr_data);
    LoadedConfig cfg = load_config(tr_config);
    if (tr_seed_opt->count() > 0) {
      cfg.model.seed = tr_seed;
      cfg.train.seed = tr_seed;
    } else if (const auto env = croc_seed_env()) {
      if (!cfg.raw_model.contains("seed")) cfg.model.seed = *env;
      if (!cfg.raw_train.contains("seed")) cfg.train.seed = *env;
    }
    if (tr_variant_opt->count() > 0) cfg.model.variant = variant_from_name(tr_variant);
    if (tr_tables_opt->count() > 0) cfg.model.embed_tables = tr_tables;
    if (tr_epochs_opt->count() > 0) cfg.train.epochs = tr_epochs;
    if (tr_batch_opt->count() > 0) cfg.train.batch_size = tr_batch;
    if (tr_lr_opt->count() > 0) cfg.train.adam.lr = tr_lr;
    if (tr_alpha_opt->count() > 0) cfg.train.loss.alpha = tr_alpha;
    if (!tr_ref.empty()) cfg.train.ref_checkpoint = tr_ref;
    if (!cfg.train.ref_checkpoint.empty() &&
        !std::filesystem::exists(cfg.train.ref_checkpoint)) {
      std::cerr << "warning: reference checkpoint '" << cfg.train.ref_checkpoint
                << "' not found; diversity-index logging disabled\n";
      cfg.train.ref_checkpoint.clear();
    }
    core_train(data_entry, json::parse(cfg.model.to_json()),
               json::parse(cfg.train.to_json()), tr_resume, tr_out);
  });

  dg->callback([&] {
    const json data_entry = dg_data.empty()
                                ? data_entry_from_spec(GenSpec::from_json(read_file(dg_gen)))
                                : data_entry_from_dir(dg_data);
    std::string ref = dg_ref;
    if (!ref.empty() && !std::filesystem::exists(ref)) {
      std::cerr << "warning: reference checkpoint '" << ref
                << "' not found; diversity index skipped\n";
      ref.clear();
    }
    core_diagnose(data_entry, dg_ckpt, ref, dg_out);
  });

  ab->callback([&] {
    if (!ab_job.empty()) {
      // Worker (or explicit job replay): everything is pre-resolved.
      const json job = json::parse(read_file(ab_job));
      core_ablate(job.at("data"), job.at("grid"),
                  job.at("seeds").get<std::vector<std::uint64_t>>(), job.at("model"),
                  job.at("train"), 1, ab_only_cell, ab_out);
      return;
    }
    if (ab_data.empty() && ab_gen.empty())
      throw CLI::RequiredError("--data or --gen");
    const json data_entry = ab_data.empty()
                                ? data_entry_from_spec(GenSpec::from_json(read_file(ab_gen)))
                                : data_entry_from_dir(ab_data);
    const LoadedConfig cfg = load_config(ab_config);
    std::uint64_t base = 17;
    if (ab_seed_opt->count() > 0) {
      base = ab_seed;
    } else if (const auto env = croc_seed_env()) {
      base = *env;
    }
    const json grid_json = ab_grid.empty()
                               ? json::parse(grid_to_json(default_ablation_grid()))
                               : json::parse(read_file(ab_grid));
    core_ablate(data_entry, grid_json, seed_list(base, ab_nseeds),
                json::parse(cfg.model.to_json()), json::parse(cfg.train.to_json()),
                ab_parallel, -1, ab_out);
  });

  sw->callback([&] {
    const json data_entry = sw_data.empty()
                                ? data_entry_from_spec(GenSpec::from_json(read_file(sw_gen)))
                                : data_entry_from_dir(sw_data);
    const LoadedConfig cfg = load_config(sw_config);
    std::uint64_t base = 17;
    if (sw_seed_opt->count() > 0) {
      base = sw_seed;
    } else if (const auto env = croc_seed_env()) {
      base = *env;
    }
    const json xs = sw_kind == "alpha" ? json(parse_doubles(sw_alphas))
                                       : json(parse_sizes(sw_tables));
    core_sweep(sw_kind, xs, data_entry, seed_list(base, sw_nseeds),
               json::parse(cfg.model.to_json()), json::parse(cfg.train.to_json()), sw_out);
  });

  rr->callback([&] {
    const json m = json::parse(read_file(rr_manifest));
    const std::string out =
        rr_out.empty() ? std::filesystem::path(rr_manifest).parent_path().string() : rr_out;
    const std::string command = m.at("command").get<std::string>();
    if (command == "gen-data") {
      core_gen_data(m.at("spec"), out);
    } else if (command == "train") {
      core_train(m.at("data"), m.at("model"), m.at("train"), false, out);
    } else if (command == "diagnose") {
      const std::string ckpt = m.at("checkpoint").at("path").get<std::string>();
      if (digest_of(read_file(ckpt)) != m.at("checkpoint").at("digest").get<std::string>())
        throw Error("rerun: checkpoint changed since the manifest was written");
      std::string ref;
      if (!m.at("ref_checkpoint").is_null()) {
        ref = m.at("ref_checkpoint").at("path").get<std::string>();
        if (digest_of(read_file(ref)) !=
            m.at("ref_checkpoint").at("digest").get<std::string>())
          throw Error("rerun: reference checkpoint changed since the manifest was written");
      }
      core_diagnose(m.at("data"), ckpt, ref, out);
    } else if (command == "ablate") {
      core_ablate(m.at("data"), m.at("grid"),
                  m.at("seeds").get<std::vector<std::uint64_t>>(), m.at("model"),
                  m.at("train"), 1, -1, out);
    } else if (command == "sweep") {
      core_sweep(m.at("kind").get<std::string>(), m.at("xs"), m.at("data"),
                 m.at("seeds").get<std::vector<std::uint64_t>>(), m.at("model"),
                 m.at("train"), out);
    } else {
      throw Error("rerun: unknown command '" + command + "' in manifest");
    }
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
