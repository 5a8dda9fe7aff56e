#pragma once

// Image-level aggregation of patch evidence. Patch logits are turned into
// per-patch class distributions, max-pooled per class, recalibrated with a
// secondary softmax, and blended with the [CLS] zero-shot prediction:
//
//   S_f = alpha * S_patch + (1 - alpha) * S_cls

#include <cstddef>
#include <vector>

#include <Eigen/Core>

#include "piaa/embedding_store.hpp"
#include "piaa/pvcl.hpp"
#include "piaa/zeroshot.hpp"

namespace piaa {

inline constexpr double kDefaultAlpha = 0.9;
inline constexpr double kDefaultAggregationTemperature = 1.0;

enum class InferMode : std::uint8_t { full, patch_only, cls_only };

struct InferOptions {
  double alpha = kDefaultAlpha;
  double temperature = kDefaultAggregationTemperature;
  double logit_scale = kDefaultLogitScale;
  InferMode mode = InferMode::full;
  // Off: S_patch is the raw max-pooled vector (ablation).
  bool secondary_softmax = true;
  // On: S_cls comes from the GDA classifier instead of the text prototypes.
  bool cls_through_gda = false;
};

struct ImageScores {
  Eigen::VectorXd s_patch;
  Eigen::VectorXd s_cls;
  Eigen::VectorXd s_fused;
  double alpha = kDefaultAlpha;
};

// Source of per-patch class distributions: the fitted GDA classifier, or the
// text prototypes (the configuration without a learned visual classifier).
// Holds non-owning pointers; the referenced objects must outlive the scorer.
class PatchScorer {
 public:
  static PatchScorer gda(const GdaClassifier& classifier);
  static PatchScorer text(const TextPrototypeSet& prototypes, double logit_scale);

  std::size_t num_classes() const;
  ProbMatrix probs(const Eigen::Ref<const PatchMatrix>& patches) const;
  const GdaClassifier* classifier() const { return classifier_; }

 private:
  PatchScorer() = default;
  const GdaClassifier* classifier_ = nullptr;
  const TextPrototypeSet* prototypes_ = nullptr;
  double logit_scale_ = kDefaultLogitScale;
};

ProbMatrix patch_probs(const GdaClassifier& classifier,
                       const Eigen::Ref<const PatchMatrix>& patches);

Eigen::VectorXd aggregate_patch_scores(const ProbMatrix& probs, double temperature,
                                       bool secondary_softmax = true);

Eigen::VectorXd cls_scores(const Eigen::Ref<const Eigen::VectorXd>& cls_embedding,
                           const TextPrototypeSet& prototypes,
                           double logit_scale = kDefaultLogitScale);

ImageScores fuse(const Eigen::VectorXd& s_patch, const Eigen::VectorXd& s_cls, double alpha);

ImageScores infer_image(const PatchScorer& scorer, const PatchView& view, std::size_t image,
                        const TextPrototypeSet& prototypes, const InferOptions& options = {});

struct BatchScores {
  std::vector<ImageScores> images;
  // Number of patch rows pushed through the scorer; one pass per patch.
  std::size_t patches_scored = 0;
  // Per-image patch distributions, filled only when requested.
  std::vector<ProbMatrix> patch_probs;
};

BatchScores infer_batch(const PatchScorer& scorer, const PatchView& view,
                        const TextPrototypeSet& prototypes, const InferOptions& options = {},
                        bool keep_patch_probs = false);

}  // namespace piaa
