#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "piaa/embedding_store.hpp"
#include "piaa/error.hpp"
#include "piaa/eval.hpp"
#include "piaa/paa.hpp"
#include "piaa/parallel.hpp"
#include "piaa/pvcl.hpp"
#include "piaa/reports.hpp"
#include "piaa/synth.hpp"

namespace py = pybind11;
using namespace piaa;

namespace {

InferMode mode_from(const std::string& s) {
  if (s == "full") return InferMode::full;
  if (s == "patch_only") return InferMode::patch_only;
  if (s == "cls_only") return InferMode::cls_only;
  throw Error("unknown mode '" + s + "' (expected full, patch_only or cls_only)");
}

py::dict eval_dict(const EvalResult& r) {
  py::dict d;
  d["per_class_ap"] = r.per_class_ap;
  d["map"] = r.map;
  d["num_pos"] = r.num_pos;
  d["undefined_classes"] = r.undefined_classes;
  d["config_digest"] = r.config_digest;
  return d;
}

PipelineConfig pipeline(std::size_t k, double alpha, double temperature, double logit_scale,
                        bool secondary_softmax) {
  PipelineConfig c;
  c.pvcl.bank_capacity = k;
  c.pvcl.logit_scale = logit_scale;
  c.infer.alpha = alpha;
  c.infer.temperature = temperature;
  c.infer.logit_scale = logit_scale;
  c.infer.secondary_softmax = secondary_softmax;
  return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Training-free multi-label inference over frozen patch embeddings";
  py::register_exception<Error>(m, "PiaaError", PyExc_RuntimeError);

  py::class_<EmbeddingSet>(m, "EmbeddingSet")
      .def(py::init<>())
      .def_readwrite("dim", &EmbeddingSet::dim)
      .def_readwrite("patch_counts", &EmbeddingSet::patch_counts)
      .def_readwrite("patches", &EmbeddingSet::patches)
      .def_readwrite("cls", &EmbeddingSet::cls)
      .def_readwrite("image_ids", &EmbeddingSet::image_ids)
      .def_readwrite("labels", &EmbeddingSet::labels)
      .def_property_readonly("num_images", &EmbeddingSet::num_images)
      .def_property_readonly("num_patches", &EmbeddingSet::num_patches)
      .def("validate", [](const EmbeddingSet& s, bool unit) { validate(s, unit); },
           py::arg("require_unit_norm") = true)
      .def("normalize", [](EmbeddingSet& s) { normalize(s); });

  py::class_<TextPrototypeSet>(m, "TextPrototypeSet")
      .def(py::init<>())
      .def_readwrite("dim", &TextPrototypeSet::dim)
      .def_readwrite("prototypes", &TextPrototypeSet::prototypes)
      .def_readwrite("class_names", &TextPrototypeSet::class_names)
      .def_property_readonly("num_classes", &TextPrototypeSet::num_classes);

  py::class_<GdaClassifier>(m, "GdaClassifier")
      .def_readonly("weights", &GdaClassifier::weights)
      .def_readonly("biases", &GdaClassifier::biases)
      .def_readonly("prototypes", &GdaClassifier::prototypes)
      .def_readonly("precision", &GdaClassifier::precision)
      .def_readonly("fallback_classes", &GdaClassifier::fallback_classes)
      .def_property_readonly("num_classes", &GdaClassifier::num_classes)
      .def_property_readonly("dim", &GdaClassifier::dim)
      .def("logits", [](const GdaClassifier& k, const PatchMatrix& x) { return k.logits(x); })
      .def("check_invariants", [](const GdaClassifier& k) { check_invariants(k); });

  m.def("read_embeddings", [](const std::filesystem::path& p, bool norm) {
    return read_embedding_file(p, ReadOptions{norm});
  }, py::arg("path"), py::arg("normalize") = true);
  m.def("write_embeddings", &write_embedding_file, py::arg("set"), py::arg("path"));
  m.def("read_prototypes", &read_text_prototypes, py::arg("path"));
  m.def("write_prototypes", &write_text_prototypes, py::arg("prototypes"), py::arg("path"));
  m.def("read_classifier", [](const std::filesystem::path& p) {
    StoredClassifier s = read_classifier(p);
    return py::make_tuple(s.classifier, s.metadata_json);
  }, py::arg("path"));
  m.def("write_classifier", &write_classifier, py::arg("classifier"), py::arg("metadata_json"),
        py::arg("path"));

  m.def("synth", [](const std::string& config_text) {
    const SynthData d = generate(make_spec(parse_synth_config(config_text)));
    return py::make_tuple(d.set, d.prototypes, d.ground_truth);
  }, py::arg("config_text") = "",
     "Generate (embeddings, prototypes, ground_truth) from key = value text.");

  m.def("fit", [](const EmbeddingSet& set, const TextPrototypeSet& t, std::size_t k,
                  double logit_scale, bool stage1_shrinkage) {
    PvclOptions o;
    o.bank_capacity = k;
    o.logit_scale = logit_scale;
    o.stage1_shrinkage = stage1_shrinkage;
    const PvclResult r = run_pvcl(PatchView(set), t, o);
    py::dict report;
    report["bootstrap_sizes"] = r.report.bootstrap_sizes;
    report["purified_sizes"] = r.report.purified_sizes;
    report["fallback_classes"] = r.report.fallback_classes;
    report["seconds"] = r.report.seconds;
    return py::make_tuple(r.classifier, report);
  }, py::arg("embeddings"), py::arg("prototypes"), py::arg("K") = kDefaultBankCapacity,
     py::arg("logit_scale") = kDefaultLogitScale, py::arg("stage1_shrinkage") = true,
     "Closed-form PVCL fit; returns (classifier, report).");

  m.def("infer", [](const GdaClassifier* k, const EmbeddingSet& set, const TextPrototypeSet& t,
                    double alpha, double temperature, double logit_scale, const std::string& mode,
                    bool secondary_softmax) {
    InferOptions o;
    o.alpha = alpha;
    o.temperature = temperature;
    o.logit_scale = logit_scale;
    o.mode = mode_from(mode);
    o.secondary_softmax = secondary_softmax;
    if (k == nullptr && o.mode != InferMode::cls_only) throw Error("a classifier is required unless mode is cls_only");
    const PatchScorer scorer = k ? PatchScorer::gda(*k) : PatchScorer::text(t, logit_scale);
    const BatchScores b = infer_batch(scorer, PatchView(set), t, o);
    py::dict out;
    out["s_patch"] = score_matrix(b, ScoreField::patch);
    out["s_cls"] = score_matrix(b, ScoreField::cls);
    out["s_fused"] = score_matrix(b, ScoreField::fused);
    return out;
  }, py::arg("classifier"), py::arg("embeddings"), py::arg("prototypes"), py::arg("alpha") = kDefaultAlpha,
     py::arg("temperature") = kDefaultAggregationTemperature, py::arg("logit_scale") = kDefaultLogitScale,
     py::arg("mode") = "full", py::arg("secondary_softmax") = true,
     "Image scores as num_images x C arrays: s_patch, s_cls, s_fused.");

  m.def("average_precision", [](const std::vector<double>& s, const std::vector<std::uint8_t>& l) {
    return average_precision(s, l);
  }, py::arg("scores"), py::arg("labels"));
  m.def("evaluate", [](const RowMatrixXd& scores, const LabelMatrix& labels,
                       const std::vector<std::string>& ids) {
    return eval_dict(evaluate(scores, labels, ids));
  }, py::arg("scores"), py::arg("labels"), py::arg("image_ids"));

  m.def("ablation", [](const EmbeddingSet& adapt, const EmbeddingSet& eval, const TextPrototypeSet& t,
                       std::size_t k, double alpha, double temperature, double logit_scale) {
    const Experiment e{&adapt, &eval, &t};
    py::list rows;
    for (const auto& r : ablation_grid(e, pipeline(k, alpha, temperature, logit_scale, true))) {
      py::dict d = eval_dict(r.result);
      d["pvcl"] = r.pvcl;
      d["paa"] = r.paa;
      rows.append(d);
    }
    return rows;
  }, py::arg("adapt"), py::arg("eval"), py::arg("prototypes"), py::arg("K") = kDefaultBankCapacity,
     py::arg("alpha") = kDefaultAlpha, py::arg("temperature") = kDefaultAggregationTemperature,
     py::arg("logit_scale") = kDefaultLogitScale);

  m.def("set_thread_count", &set_thread_count, py::arg("threads"));
  m.def("thread_count", &thread_count);
}
