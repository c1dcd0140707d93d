#include "croc/harness.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "croc/io.hpp"
#include "croc/metrics.hpp"
#include "croc/stats.hpp"

namespace croc {

using nlohmann::json;

std::vector<AblationCell> default_ablation_grid() {
  return {
      {"SE", "-", "B"},      // base MMoE
      {"ME", "-", "B"},      // multi-embedding alone
      {"ME", "PG", "B"},     // + prior scalar gate
      {"ME", "PEG", "B"},    // + element-wise gate
      {"ME", "-", "B+C"},    // multi-embedding + covariance penalty
      {"ME", "PG", "B+C"},
      {"ME", "PEG", "B+C"},  // full model
  };
}

std::vector<AblationCell> parse_grid(const std::string& json_text) {
  json j = json::parse(json_text);
  if (!j.is_array()) throw Error("grid: expected a JSON array");
  std::vector<AblationCell> grid;
  for (const auto& row : j) {
    AblationCell c;
    c.embedding = row.at("embedding").get<std::string>();
    c.gating = row.at("gating").get<std::string>();
    c.loss = row.at("loss").get<std::string>();
    grid.push_back(c);
  }
  if (grid.empty()) throw Error("grid: empty");
  return grid;
}

std::string grid_to_json(const std::vector<AblationCell>& grid) {
  json j = json::array();
  for (const AblationCell& c : grid)
    j.push_back({{"embedding", c.embedding}, {"gating", c.gating}, {"loss", c.loss}});
  return j.dump(2);
}

void apply_cell(const AblationCell& cell, ModelConfig& model_cfg, TrainConfig& train_cfg) {
  if (cell.loss == "B")
    train_cfg.loss.alpha = 0.0;
  else if (cell.loss != "B+C")
    throw Error("cell loss must be B or B+C: " + cell.loss);

  if (cell.embedding == "SE") {
    if (cell.gating != "-") throw Error("SE rows take no prior gate: " + cell.label());
    model_cfg.variant = Variant::MMoE;
    // Keep the expert count matched to the ME rows for a fair parameter budget.
    model_cfg.experts = model_cfg.embed_tables;
  } else if (cell.embedding == "ME") {
    if (cell.gating == "-") {
      model_cfg.variant = Variant::MeMMoE;
    } else if (cell.gating == "PG") {
      model_cfg.variant = Variant::Crocodile;
      model_cfg.gate = GateKind::PriorScalar;
    } else if (cell.gating == "PEG") {
      model_cfg.variant = Variant::Crocodile;
      model_cfg.gate = GateKind::PriorElementwise;
    } else {
      throw Error("unknown gating: " + cell.gating);
    }
  } else {
    throw Error("unknown embedding layout: " + cell.embedding);
  }
}

RunScore run_cell_seed(const Dataset& ds, const AblationCell& cell, std::uint64_t seed,
                       const ModelConfig& base_model, const TrainConfig& base_train) {
  ModelConfig mc = base_model;
  TrainConfig tc = base_train;
  apply_cell(cell, mc, tc);
  mc.seed = seed;
  tc.seed = seed;
  // Intermediate logs are not needed here; final-epoch eval is forced anyway.
  tc.eval_every = 0;
  tc.ia_every = 0;
  tc.checkpoint_every = 0;

  Model model(mc, ds.schema);
  TrainResult res = train(model, ds, tc);
  RunScore score;
  score.seed = seed;
  score.auc = res.last("overall", "auc");
  score.gauc = res.last("overall", "gauc");
  score.seconds = res.wall_seconds;
  return score;
}

void HarnessRow::finalize() {
  std::vector<double> aucs, gaucs;
  for (const RunScore& r : runs) {
    aucs.push_back(r.auc);
    gaucs.push_back(r.gauc);
  }
  auc_mean = mean(aucs);
  auc_std = stddev(aucs);
  gauc_mean = mean(gaucs);
  gauc_std = stddev(gaucs);
}

void aggregate_rows(std::vector<HarnessRow>& rows) {
  for (HarnessRow& row : rows) row.finalize();
  if (rows.empty()) return;
  std::vector<double> base_auc, base_gauc;
  for (const RunScore& r : rows.front().runs) {
    base_auc.push_back(r.auc);
    base_gauc.push_back(r.gauc);
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (i == 0) {
      rows[i].p_auc = std::nan("");
      rows[i].p_gauc = std::nan("");
      continue;
    }
    std::vector<double> a, g;
    for (const RunScore& r : rows[i].runs) {
      a.push_back(r.auc);
      g.push_back(r.gauc);
    }
    rows[i].p_auc = paired_t_test(a, base_auc).p_two_sided;
    rows[i].p_gauc = paired_t_test(g, base_gauc).p_two_sided;
  }
}

AblationResult ablation_harness(const Dataset& ds, const std::vector<AblationCell>& grid,
                                const std::vector<std::uint64_t>& seeds,
                                const ModelConfig& base_model,
                                const TrainConfig& base_train) {
  if (seeds.empty()) throw Error("ablation: no seeds");
  AblationResult out;
  for (const AblationCell& cell : grid) {
    HarnessRow row;
    row.label = cell.label();
    ModelConfig mc = base_model;
    TrainConfig tc = base_train;
    apply_cell(cell, mc, tc);
    row.variant = variant_name(mc.variant);
    for (std::uint64_t seed : seeds)
      row.runs.push_back(run_cell_seed(ds, cell, seed, base_model, base_train));
    out.rows.push_back(std::move(row));
  }
  aggregate_rows(out.rows);
  return out;
}

std::string AblationResult::to_csv() const {
  std::ostringstream os;
  os << "cell,variant,auc_mean,auc_std,gauc_mean,gauc_std,p_auc,p_gauc,seeds\n";
  for (const HarnessRow& r : rows) {
    os << r.label << ',' << r.variant << ',' << format_double(r.auc_mean) << ','
       << format_double(r.auc_std) << ',' << format_double(r.gauc_mean) << ','
       << format_double(r.gauc_std) << ','
       << (std::isnan(r.p_auc) ? "" : format_double(r.p_auc)) << ','
       << (std::isnan(r.p_gauc) ? "" : format_double(r.p_gauc)) << ',' << r.runs.size()
       << '\n';
  }
  return os.str();
}

namespace {

void finalize_point(SweepPoint& p) {
  std::vector<double> aucs, gaucs;
  for (const RunScore& r : p.runs) {
    aucs.push_back(r.auc);
    gaucs.push_back(r.gauc);
  }
  p.auc_mean = mean(aucs);
  p.auc_std = stddev(aucs);
  p.gauc_mean = mean(gaucs);
  p.gauc_std = stddev(gaucs);
}

SweepPoint sweep_point(const Dataset& ds, double x, const std::string& series,
                       const ModelConfig& mc, const TrainConfig& tc,
                       const std::vector<std::uint64_t>& seeds) {
  SweepPoint p;
  p.x = x;
  p.series = series;
  for (std::uint64_t seed : seeds) {
    ModelConfig m = mc;
    TrainConfig t = tc;
    m.seed = seed;
    t.seed = seed;
    t.eval_every = 0;
    t.ia_every = 0;
    t.checkpoint_every = 0;
    Model model(m, ds.schema);
    TrainResult res = train(model, ds, t);
    p.runs.push_back(
        {seed, res.last("overall", "auc"), res.last("overall", "gauc"), res.wall_seconds});
  }
  finalize_point(p);
  return p;
}

std::string sweep_svg(const SweepResult& sweep, bool gauc_axis) {
  // One series per model label.
  std::vector<std::string> names;
  for (const SweepPoint& p : sweep.points)
    if (std::find(names.begin(), names.end(), p.series) == names.end())
      names.push_back(p.series);
  std::vector<SvgSeries> series;
  for (const std::string& name : names) {
    SvgSeries s;
    s.name = name;
    for (const SweepPoint& p : sweep.points) {
      if (p.series != name) continue;
      s.x.push_back(p.x);
      s.y.push_back(gauc_axis ? p.gauc_mean : p.auc_mean);
    }
    series.push_back(std::move(s));
  }
  const bool log_x = sweep.kind == "alpha";
  const std::string metric = gauc_axis ? "gAUC" : "AUC";
  const std::string x_label = sweep.kind == "alpha" ? "alpha" : "embedding tables";
  return svg_line_plot(series, x_label, metric, metric + " vs " + x_label, log_x);
}

}  // namespace

std::string SweepResult::to_csv() const {
  std::ostringstream os;
  os << "x,series,auc_mean,auc_std,gauc_mean,gauc_std,seeds\n";
  for (const SweepPoint& p : points)
    os << format_double(p.x) << ',' << p.series << ',' << format_double(p.auc_mean) << ','
       << format_double(p.auc_std) << ',' << format_double(p.gauc_mean) << ','
       << format_double(p.gauc_std) << ',' << p.runs.size() << '\n';
  return os.str();
}

std::string SweepResult::auc_svg() const { return sweep_svg(*this, false); }
std::string SweepResult::gauc_svg() const { return sweep_svg(*this, true); }

SweepResult alpha_sweep(const Dataset& ds, const std::vector<double>& alphas,
                        const std::vector<std::uint64_t>& seeds,
                        const ModelConfig& base_model, const TrainConfig& base_train) {
  if (alphas.empty()) throw Error("alpha sweep: no values");
  SweepResult out;
  out.kind = "alpha";
  for (double alpha : alphas) {
    ModelConfig mc = base_model;
    TrainConfig tc = base_train;
    mc.variant = Variant::Crocodile;
    mc.gate = GateKind::PriorElementwise;
    tc.loss.alpha = alpha;
    out.points.push_back(sweep_point(ds, alpha, "full", mc, tc, seeds));
  }
  return out;
}

SweepResult embedding_sweep(const Dataset& ds, const std::vector<std::size_t>& tables,
                            const std::vector<std::uint64_t>& seeds,
                            const ModelConfig& base_model, const TrainConfig& base_train) {
  if (tables.empty()) throw Error("embedding sweep: no values");
  SweepResult out;
  out.kind = "embeddings";
  for (std::size_t m : tables) {
    {
      ModelConfig mc = base_model;
      TrainConfig tc = base_train;
      mc.variant = Variant::Crocodile;
      mc.gate = GateKind::PriorElementwise;
      mc.embed_tables = m;
      out.points.push_back(sweep_point(ds, static_cast<double>(m), "full", mc, tc, seeds));
    }
    {
      ModelConfig mc = base_model;
      TrainConfig tc = base_train;
      mc.variant = Variant::Crocodile;
      mc.gate = GateKind::PriorScalar;
      mc.embed_tables = m;
      tc.loss.alpha = 0.0;
      out.points.push_back(
          sweep_point(ds, static_cast<double>(m), "scalar-gate base", mc, tc, seeds));
    }
  }
  return out;
}

}  // namespace croc
