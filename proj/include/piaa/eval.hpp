#pragma once

// Ranking metrics and the experiment drivers built on them.
//
// AP is the all-points area under the precision/recall curve over the
// descending-score ranking: AP = sum_n (R_n - R_{n-1}) P_n. Ties are broken
// by a stable key (image id, else position) so results never depend on the
// order images happen to be stored in.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "piaa/embedding_store.hpp"
#include "piaa/paa.hpp"
#include "piaa/pvcl.hpp"

namespace piaa {

// nullopt when there are no positives: AP is undefined, never silently 0.
std::optional<double> average_precision(std::span<const double> scores,
                                        std::span<const std::uint8_t> labels);
std::optional<double> average_precision(std::span<const double> scores,
                                        std::span<const std::uint8_t> labels,
                                        std::span<const std::string> tie_keys);

struct EvalResult {
  std::vector<std::optional<double>> per_class_ap;
  double map = 0.0;  // over classes with at least one positive
  std::vector<std::size_t> num_pos;
  std::vector<std::size_t> undefined_classes;
  std::string config_digest;
};

// scores: num_images x C. Ranks each class column; ties by image id.
EvalResult evaluate(const RowMatrixXd& scores, const LabelMatrix& labels,
                    const std::vector<std::string>& image_ids, const std::string& digest = {});

enum class ScoreField : std::uint8_t { fused, patch, cls };

RowMatrixXd score_matrix(const BatchScores& batch, ScoreField field = ScoreField::fused);

struct PipelineConfig {
  PvclOptions pvcl;
  InferOptions infer;
};

// Stable 64-bit FNV-1a hash (16 hex digits) of the canonical config JSON.
std::string config_digest(const PipelineConfig& config);
std::string config_json(const PipelineConfig& config);

struct Experiment {
  const EmbeddingSet* adapt = nullptr;  // banks are harvested here
  const EmbeddingSet* eval = nullptr;   // labelled; may alias adapt (transductive)
  const TextPrototypeSet* prototypes = nullptr;
};

struct Timings {
  double acquisition_s = 0.0;
  double inference_s = 0.0;
};

// Fits PVCL on experiment.adapt; returns the final classifier.
GdaClassifier fit_classifier(const Experiment& experiment, const PvclOptions& options,
                             Timings* timings = nullptr);

// Runs inference on experiment.eval and ranks the requested score field.
EvalResult evaluate_scorer(const Experiment& experiment, const PatchScorer& scorer,
                           const InferOptions& options, const std::string& digest,
                           Timings* timings = nullptr);

struct AblationRow {
  bool pvcl = false;
  bool paa = false;
  EvalResult result;
};

// The four {PVCL, PAA} on/off configurations. Without PVCL, patches are scored
// against the text prototypes; without PAA, images are ranked by the raw
// max-pooled patch probability (no secondary softmax, no [CLS] fusion).
std::vector<AblationRow> ablation_grid(const Experiment& experiment, const PipelineConfig& config,
                                       const GdaClassifier* fitted = nullptr,
                                       Timings* timings = nullptr);

enum class SweepParam : std::uint8_t { bank_capacity, alpha };

struct SweepPoint {
  double value = 0.0;
  EvalResult result;
};

std::vector<SweepPoint> sweep(const Experiment& experiment, const PipelineConfig& config,
                              SweepParam param, const std::vector<double>& values,
                              Timings* timings = nullptr);

struct BreakdownRow {
  std::string class_name;
  std::optional<double> ap_cls_only;
  std::optional<double> ap_patch_only;
  std::optional<double> ap_fused;
};

// Per-class AP under cls-only, patch-only and fused scoring. An empty subset
// selects every class; unknown names throw.
std::vector<BreakdownRow> scale_breakdown(const Experiment& experiment,
                                          const PipelineConfig& config,
                                          const std::vector<std::string>& class_subset,
                                          const GdaClassifier* fitted = nullptr,
                                          Timings* timings = nullptr);

}  // namespace piaa
