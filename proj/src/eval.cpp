#include "piaa/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <string_view>

#include "json.hpp"
#include "piaa/error.hpp"

namespace piaa {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

template <typename Less>
std::optional<double> ap_with_order(std::span<const double> scores,
                                    std::span<const std::uint8_t> labels, Less tie_less) {
  if (scores.size() != labels.size()) throw Error("scores and labels differ in length");
  std::size_t positives = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (std::isnan(scores[i])) throw Error("NaN score in ranking");
    if (labels[i] > 1) throw Error("labels must be 0 or 1");
    positives += labels[i];
  }
  if (positives == 0) return std::nullopt;

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return tie_less(a, b);
  });

  // Each positive at rank r raises recall by 1/P at precision hits/r.
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (labels[order[r]]) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
  }
  return sum / static_cast<double>(positives);
}

bool unique_keys(const std::vector<std::string>& ids) {
  return std::set<std::string>(ids.begin(), ids.end()).size() == ids.size();
}

std::string fnv1a_hex(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

const char* mode_name(InferMode mode) {
  switch (mode) {
    case InferMode::full: return "full";
    case InferMode::patch_only: return "patch_only";
    case InferMode::cls_only: return "cls_only";
  }
  return "full";
}

const LabelMatrix& eval_labels(const Experiment& e) {
  if (!e.eval || !e.eval->labels) throw Error("evaluation set carries no labels");
  if (static_cast<std::size_t>(e.eval->labels->cols()) != e.prototypes->num_classes()) {
    throw Error("label columns do not match the number of classes");
  }
  return *e.eval->labels;
}

void check_experiment(const Experiment& e) {
  if (!e.adapt || !e.eval || !e.prototypes) throw Error("experiment is missing inputs");
  eval_labels(e);
}

}  // namespace

std::optional<double> average_precision(std::span<const double> scores,
                                        std::span<const std::uint8_t> labels) {
  return ap_with_order(scores, labels, [](std::size_t a, std::size_t b) { return a < b; });
}

std::optional<double> average_precision(std::span<const double> scores,
                                        std::span<const std::uint8_t> labels,
                                        std::span<const std::string> tie_keys) {
  if (tie_keys.size() != scores.size()) throw Error("tie keys and scores differ in length");
  return ap_with_order(scores, labels, [&](std::size_t a, std::size_t b) {
    if (tie_keys[a] != tie_keys[b]) return tie_keys[a] < tie_keys[b];
    return a < b;
  });
}

EvalResult evaluate(const RowMatrixXd& scores, const LabelMatrix& labels,
                    const std::vector<std::string>& image_ids, const std::string& digest) {
  if (scores.rows() != labels.rows() || scores.cols() != labels.cols()) {
    throw Error("shape mismatch between scores and labels");
  }
  if (static_cast<Eigen::Index>(image_ids.size()) != scores.rows()) {
    throw Error("shape mismatch between scores and image ids");
  }
  const bool by_id = unique_keys(image_ids);
  const auto n = static_cast<std::size_t>(scores.rows());

  EvalResult out;
  out.config_digest = digest;
  double sum = 0.0;
  std::size_t defined = 0;
  std::vector<double> column(n);
  std::vector<std::uint8_t> truth(n);
  for (Eigen::Index c = 0; c < scores.cols(); ++c) {
    std::size_t pos = 0;
    for (std::size_t i = 0; i < n; ++i) {
      column[i] = scores(static_cast<Eigen::Index>(i), c);
      truth[i] = labels(static_cast<Eigen::Index>(i), c);
      pos += truth[i] ? 1 : 0;
    }
    const auto ap = by_id ? average_precision(column, truth, image_ids)
                          : average_precision(column, truth);
    out.per_class_ap.push_back(ap);
    out.num_pos.push_back(pos);
    if (ap) {
      sum += *ap;
      ++defined;
    } else {
      out.undefined_classes.push_back(static_cast<std::size_t>(c));
    }
  }
  if (defined == 0) throw Error("no class has a positive example; mAP is undefined");
  out.map = sum / static_cast<double>(defined);
  return out;
}

RowMatrixXd score_matrix(const BatchScores& batch, ScoreField field) {
  if (batch.images.empty()) return {};
  const auto c = batch.images.front().s_fused.size();
  RowMatrixXd out(static_cast<Eigen::Index>(batch.images.size()), c);
  for (std::size_t i = 0; i < batch.images.size(); ++i) {
    const auto& s = batch.images[i];
    const Eigen::VectorXd& v =
        field == ScoreField::fused ? s.s_fused : field == ScoreField::patch ? s.s_patch : s.s_cls;
    out.row(static_cast<Eigen::Index>(i)) = v.transpose();
  }
  return out;
}

std::string config_json(const PipelineConfig& config) {
  nlohmann::json j;
  j["bank_capacity"] = config.pvcl.bank_capacity;
  j["logit_scale"] = config.pvcl.logit_scale;
  j["stage1_shrinkage"] = config.pvcl.stage1_shrinkage;
  j["covariance_denominator"] =
      config.pvcl.denominator == CovarianceDenominator::as_printed ? "as_printed" : "unbiased";
  j["alpha"] = config.infer.alpha;
  j["temperature"] = config.infer.temperature;
  j["infer_logit_scale"] = config.infer.logit_scale;
  j["mode"] = mode_name(config.infer.mode);
  j["secondary_softmax"] = config.infer.secondary_softmax;
  j["cls_through_gda"] = config.infer.cls_through_gda;
  return j.dump();
}

std::string config_digest(const PipelineConfig& config) { return fnv1a_hex(config_json(config)); }

GdaClassifier fit_classifier(const Experiment& experiment, const PvclOptions& options,
                             Timings* timings) {
  if (!experiment.adapt || !experiment.prototypes) throw Error("experiment is missing inputs");
  const auto t0 = Clock::now();
  const PatchView view(*experiment.adapt);
  GdaClassifier k = run_pvcl(view, *experiment.prototypes, options).classifier;
  if (timings) timings->acquisition_s += seconds_since(t0);
  return k;
}

EvalResult evaluate_scorer(const Experiment& experiment, const PatchScorer& scorer,
                           const InferOptions& options, const std::string& digest,
                           Timings* timings) {
  const LabelMatrix& labels = eval_labels(experiment);
  const auto t0 = Clock::now();
  const PatchView view(*experiment.eval);
  const BatchScores batch = infer_batch(scorer, view, *experiment.prototypes, options);
  if (timings) timings->inference_s += seconds_since(t0);
  return evaluate(score_matrix(batch, ScoreField::fused), labels, experiment.eval->image_ids,
                  digest);
}

std::vector<AblationRow> ablation_grid(const Experiment& experiment, const PipelineConfig& config,
                                       const GdaClassifier* fitted, Timings* timings) {
  check_experiment(experiment);
  GdaClassifier own;
  if (!fitted) {
    own = fit_classifier(experiment, config.pvcl, timings);
    fitted = &own;
  }
  const PatchScorer text = PatchScorer::text(*experiment.prototypes, config.pvcl.logit_scale);
  const PatchScorer gda = PatchScorer::gda(*fitted);

  InferOptions no_paa = config.infer;
  no_paa.mode = InferMode::patch_only;
  no_paa.secondary_softmax = false;
  InferOptions with_paa = config.infer;
  with_paa.mode = InferMode::full;
  with_paa.secondary_softmax = true;

  std::vector<AblationRow> rows;
  for (const bool use_pvcl : {false, true}) {
    for (const bool use_paa : {false, true}) {
      PipelineConfig cell = config;
      cell.infer = use_paa ? with_paa : no_paa;
      AblationRow row;
      row.pvcl = use_pvcl;
      row.paa = use_paa;
      const std::string digest =
          config_digest(cell) + (use_pvcl ? "" : "-text");
      row.result = evaluate_scorer(experiment, use_pvcl ? gda : text, cell.infer, digest, timings);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

std::vector<SweepPoint> sweep(const Experiment& experiment, const PipelineConfig& config,
                              SweepParam param, const std::vector<double>& values,
                              Timings* timings) {
  check_experiment(experiment);
  std::vector<SweepPoint> curve;
  GdaClassifier shared;
  if (param == SweepParam::alpha) {
    for (const double a : values) {
      if (!(a >= 0.0 && a <= 1.0)) throw Error("alpha values must lie in [0, 1]");
    }
    shared = fit_classifier(experiment, config.pvcl, timings);
  }
  for (const double value : values) {
    PipelineConfig cell = config;
    GdaClassifier local;
    const GdaClassifier* k = &shared;
    if (param == SweepParam::bank_capacity) {
      if (!(value >= 1.0) || value != std::floor(value)) {
        throw Error("K values must be positive integers");
      }
      cell.pvcl.bank_capacity = static_cast<std::size_t>(value);
      local = fit_classifier(experiment, cell.pvcl, timings);
      k = &local;
    } else {
      cell.infer.alpha = value;
    }
    SweepPoint point;
    point.value = value;
    point.result = evaluate_scorer(experiment, PatchScorer::gda(*k), cell.infer,
                                   config_digest(cell), timings);
    curve.push_back(std::move(point));
  }
  return curve;
}

std::vector<BreakdownRow> scale_breakdown(const Experiment& experiment,
                                          const PipelineConfig& config,
                                          const std::vector<std::string>& class_subset,
                                          const GdaClassifier* fitted, Timings* timings) {
  check_experiment(experiment);
  const auto& names = experiment.prototypes->class_names;
  std::vector<std::size_t> selected;
  if (class_subset.empty()) {
    selected.resize(names.size());
    std::iota(selected.begin(), selected.end(), std::size_t{0});
  } else {
    for (const auto& name : class_subset) {
      const auto it = std::find(names.begin(), names.end(), name);
      if (it == names.end()) throw Error("unknown class name '" + name + "'");
      selected.push_back(static_cast<std::size_t>(it - names.begin()));
    }
  }

  GdaClassifier own;
  if (!fitted) {
    own = fit_classifier(experiment, config.pvcl, timings);
    fitted = &own;
  }
  const PatchScorer gda = PatchScorer::gda(*fitted);
  auto run = [&](InferMode mode) {
    PipelineConfig cell = config;
    cell.infer.mode = mode;
    return evaluate_scorer(experiment, gda, cell.infer, config_digest(cell), timings);
  };
  const EvalResult cls_only = run(InferMode::cls_only);
  const EvalResult patch_only = run(InferMode::patch_only);
  const EvalResult fused = run(InferMode::full);

  std::vector<BreakdownRow> rows;
  for (const auto c : selected) {
    rows.push_back({names[c], cls_only.per_class_ap[c], patch_only.per_class_ap[c],
                    fused.per_class_ap[c]});
  }
  return rows;
}

}  // namespace piaa
