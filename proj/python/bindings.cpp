// Python surface over the C++ core: dataset generation, training, ranking
// metrics, the covariance penalty, and the two diagnostics. Thin wrappers —
// all behavior lives in the library.
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <filesystem>

#include "croc/harness.hpp"
#include "croc/io.hpp"
#include "croc/metrics.hpp"
#include "croc/trainer.hpp"

namespace py = pybind11;
using namespace croc;

namespace {

Tensor matrix_tensor(const std::vector<std::vector<double>>& rows, const char* what) {
  if (rows.empty() || rows[0].empty()) throw Error(std::string(what) + ": empty matrix");
  const std::size_t n = rows.size(), d = rows[0].size();
  std::vector<double> flat;
  flat.reserve(n * d);
  for (const auto& r : rows) {
    if (r.size() != d) throw Error(std::string(what) + ": ragged matrix");
    flat.insert(flat.end(), r.begin(), r.end());
  }
  return Tensor::from({n, d}, std::move(flat));
}

py::dict eval_dict(const Model& model, const Dataset& ds) {
  const EvalScores ev = collect_scores(model, ds);
  py::dict out;
  auto put = [&out](const std::string& dom, const std::optional<double>& a,
                    const std::optional<double>& g) {
    py::dict d;
    d["auc"] = a ? py::cast(*a) : py::none();
    d["gauc"] = g ? py::cast(*g) : py::none();
    out[py::str(dom)] = d;
  };
  for (std::size_t s = 0; s < model.num_domains(); ++s) {
    const EvalScores slice = ev.domain_slice(static_cast<int>(s));
    if (slice.scores.empty()) continue;
    put(std::to_string(s), auc(slice.scores, slice.labels),
        gauc(slice.scores, slice.labels, slice.users));
  }
  put("overall", auc(ev.scores, ev.labels), gauc(ev.scores, ev.labels, ev.users));
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "multi-domain recommendation toolkit core";

  py::register_exception<Error>(m, "CrocError");

  m.def(
      "generate_dataset",
      [](const std::string& spec_json, const std::string& out_dir) {
        const Dataset ds = generate_synthetic(GenSpec::from_json(spec_json));
        save_dataset(ds, out_dir);
        return ds.fingerprint();
      },
      py::arg("spec_json"), py::arg("out_dir"),
      "Generate a synthetic multi-domain dataset into a directory; returns its "
      "fingerprint.");

  m.def(
      "dataset_info",
      [](const std::string& dir) {
        const Dataset ds = load_dataset(dir);
        py::dict d;
        d["size"] = ds.size();
        d["num_domains"] = ds.num_domains();
        d["domain_counts"] = ds.domain_counts;
        d["fingerprint"] = ds.fingerprint();
        return d;
      },
      py::arg("dir"));

  m.def(
      "train",
      [](const std::string& data_dir, const std::string& model_json,
         const std::string& train_json, const std::string& out_dir) {
        const Dataset ds = load_dataset(data_dir);
        const ModelConfig mc = ModelConfig::from_json(model_json);
        const TrainConfig tc = TrainConfig::from_json(train_json);
        Model model(mc, ds.schema);
        const TrainResult res = train(model, ds, tc, out_dir);
        atomic_write_file((std::filesystem::path(out_dir) / "metrics.csv").string(),
                          res.metrics_csv());
        atomic_write_file((std::filesystem::path(out_dir) / "ia.csv").string(),
                          res.ia_csv());
        py::dict d;
        d["steps"] = res.steps;
        d["auc"] = res.last("overall", "auc");
        d["gauc"] = res.last("overall", "gauc");
        d["loss_total"] = res.last("overall", "loss_total");
        return d;
      },
      py::arg("data_dir"), py::arg("model_json"), py::arg("train_json"),
      py::arg("out_dir"),
      "Train one variant; writes metrics.csv, ia.csv and checkpoint.bin under "
      "out_dir and returns the final held-out summary.");

  m.def(
      "evaluate",
      [](const std::string& checkpoint, const std::string& data_dir) {
        const Dataset ds = load_dataset(data_dir);
        const Model model = model_from_checkpoint(load_checkpoint(checkpoint), ds.schema);
        return eval_dict(model, ds);
      },
      py::arg("checkpoint"), py::arg("data_dir"),
      "Per-domain and overall AUC/gAUC of a checkpoint on a dataset.");

  m.def(
      "auc",
      [](const std::vector<double>& scores, const std::vector<int>& labels) {
        return auc(scores, labels);
      },
      py::arg("scores"), py::arg("labels"),
      "Area under the ROC curve with midrank tie handling; None when one class "
      "is absent.");

  m.def(
      "gauc",
      [](const std::vector<double>& scores, const std::vector<int>& labels,
         const std::vector<std::int64_t>& users) { return gauc(scores, labels, users); },
      py::arg("scores"), py::arg("labels"), py::arg("users"),
      "Impression-weighted per-user AUC; single-class users are excluded.");

  m.def(
      "covloss",
      [](const std::vector<std::vector<std::vector<double>>>& experts,
         const std::string& pairs) {
        std::vector<Tensor> t;
        t.reserve(experts.size());
        for (const auto& e : experts) t.push_back(matrix_tensor(e, "covloss"));
        Tape tape(false);
        return covloss(tape, t, pair_set_from_name(pairs)).item();
      },
      py::arg("experts"), py::arg("pairs") = "strict-cross",
      "Cross-expert covariance penalty over per-expert (N x d) outputs.");

  m.def(
      "information_abundance",
      [](const std::vector<std::vector<double>>& matrix) {
        const Tensor t = matrix_tensor(matrix, "information_abundance");
        const std::vector<double> vals(t.values().begin(), t.values().end());
        return information_abundance(vals, t.shape()[0], t.shape()[1]);
      },
      py::arg("matrix"),
      "Sum of singular values over the largest; 1 = collapsed, min(rows, cols) "
      "= perfectly conditioned.");

  m.def(
      "diversity_index",
      [](const std::string& candidate, const std::string& reference,
         const std::string& data_dir) {
        const Dataset ds = load_dataset(data_dir);
        const Model cand = model_from_checkpoint(load_checkpoint(candidate), ds.schema);
        const Model ref = model_from_checkpoint(load_checkpoint(reference), ds.schema);
        const DiResult di = diversity_index(cand, ds, build_conflict_sets(ref, ds));
        py::dict d;
        d["average"] = di.average;
        d["pairs"] = di.pairs.size();
        d["skipped_empty"] = di.skipped_empty;
        return d;
      },
      py::arg("candidate"), py::arg("reference"), py::arg("data_dir"),
      "Diversity index of a candidate checkpoint on conflict sets built from a "
      "domain-bound reference checkpoint.");

  m.def(
      "checkpoint_info",
      [](const std::string& path) {
        const Checkpoint ck = load_checkpoint(path);
        py::dict d;
        d["step"] = ck.step;
        d["model_config"] = ck.model_config_json;
        d["train_config"] = ck.train_config_json;
        d["dataset_fingerprint"] = ck.dataset_fingerprint;
        d["tensors"] = ck.tensors.size();
        return d;
      },
      py::arg("path"));

  m.attr("__version__") = "0.1.0";
}
