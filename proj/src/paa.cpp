#include "piaa/paa.hpp"

#include <cmath>
#include <string>

#include "piaa/error.hpp"
#include "piaa/parallel.hpp"

namespace piaa {
namespace {

void check_alpha(double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw Error("alpha must lie in [0, 1], got " + std::to_string(alpha));
  }
}

struct ImageResult {
  ImageScores scores;
  std::size_t scored = 0;
  ProbMatrix patch_probs;
};

ImageResult infer_one(const PatchScorer& scorer, const PatchView& view, std::size_t image,
                      const TextPrototypeSet& prototypes, const InferOptions& options,
                      bool keep_patch_probs) {
  if (image >= view.num_images()) throw Error("image index out of range");
  const auto c = static_cast<Eigen::Index>(prototypes.num_classes());
  if (scorer.num_classes() != prototypes.num_classes()) {
    throw Error("classifier and prototypes disagree on the number of classes");
  }

  ImageResult out;
  const Eigen::VectorXd cls = view.cls().row(static_cast<Eigen::Index>(image)).cast<double>().transpose();
  Eigen::VectorXd s_cls;
  if (options.cls_through_gda && scorer.classifier() != nullptr) {
    const auto& k = *scorer.classifier();
    s_cls = softmax(k.weights * cls + k.biases);
  } else {
    s_cls = cls_scores(cls, prototypes, options.logit_scale);
  }

  double alpha = options.alpha;
  Eigen::VectorXd s_patch;
  if (options.mode == InferMode::cls_only) {
    alpha = 0.0;
    s_patch = Eigen::VectorXd::Constant(c, 1.0 / static_cast<double>(c));
  } else {
    if (options.mode == InferMode::patch_only) alpha = 1.0;
    const auto patches = view.image_patches(image);
    if (patches.rows() == 0) {
      throw Error("image '" + view.image_ids()[image] + "' has no patches");
    }
    ProbMatrix p = scorer.probs(patches);
    out.scored = static_cast<std::size_t>(patches.rows());
    s_patch = aggregate_patch_scores(p, options.temperature, options.secondary_softmax);
    if (keep_patch_probs) out.patch_probs = std::move(p);
  }
  out.scores = fuse(s_patch, s_cls, alpha);
  return out;
}

}  // namespace

PatchScorer PatchScorer::gda(const GdaClassifier& classifier) {
  PatchScorer s;
  s.classifier_ = &classifier;
  return s;
}

PatchScorer PatchScorer::text(const TextPrototypeSet& prototypes, double logit_scale) {
  PatchScorer s;
  s.prototypes_ = &prototypes;
  s.logit_scale_ = logit_scale;
  return s;
}

std::size_t PatchScorer::num_classes() const {
  return classifier_ ? classifier_->num_classes() : prototypes_->num_classes();
}

ProbMatrix PatchScorer::probs(const Eigen::Ref<const PatchMatrix>& patches) const {
  if (classifier_) return patch_probs(*classifier_, patches);
  return text_align_probs(patches, *prototypes_, logit_scale_);
}

ProbMatrix patch_probs(const GdaClassifier& classifier,
                       const Eigen::Ref<const PatchMatrix>& patches) {
  RowMatrixXd logits = classifier.logits(patches);
  softmax_rows(logits);
  return logits;
}

Eigen::VectorXd aggregate_patch_scores(const ProbMatrix& probs, double temperature,
                                       bool secondary_softmax) {
  if (probs.rows() == 0) throw Error("cannot aggregate zero patches");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw Error("aggregation temperature must be positive");
  }
  const Eigen::VectorXd peak = probs.colwise().maxCoeff().transpose();
  if (!secondary_softmax) return peak;
  return softmax(peak / temperature);
}

Eigen::VectorXd cls_scores(const Eigen::Ref<const Eigen::VectorXd>& cls_embedding,
                           const TextPrototypeSet& prototypes, double logit_scale) {
  if (cls_embedding.size() != static_cast<Eigen::Index>(prototypes.dim)) {
    throw Error("dimension mismatch between cls embedding and prototypes");
  }
  if (!(logit_scale >= 0.0)) throw Error("logit_scale must be non-negative");
  const double norm = cls_embedding.norm();
  if (norm == 0.0) throw Error("zero-norm cls embedding");
  const Eigen::VectorXd logits = (logit_scale / norm) * (prototypes.prototypes * cls_embedding);
  return softmax(logits);
}

ImageScores fuse(const Eigen::VectorXd& s_patch, const Eigen::VectorXd& s_cls, double alpha) {
  check_alpha(alpha);
  if (s_patch.size() != s_cls.size()) throw Error("patch and cls score vectors differ in length");
  ImageScores out;
  out.alpha = alpha;
  out.s_patch = s_patch;
  out.s_cls = s_cls;
  out.s_fused = alpha * s_patch + (1.0 - alpha) * s_cls;
  return out;
}

ImageScores infer_image(const PatchScorer& scorer, const PatchView& view, std::size_t image,
                        const TextPrototypeSet& prototypes, const InferOptions& options) {
  return infer_one(scorer, view, image, prototypes, options, false).scores;
}

BatchScores infer_batch(const PatchScorer& scorer, const PatchView& view,
                        const TextPrototypeSet& prototypes, const InferOptions& options,
                        bool keep_patch_probs) {
  check_alpha(options.alpha);
  const std::size_t n = view.num_images();
  std::vector<ImageResult> results(n);
  parallel_for_blocks(n, 64, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      results[i] = infer_one(scorer, view, i, prototypes, options, keep_patch_probs);
    }
  });
  BatchScores out;
  out.images.reserve(n);
  if (keep_patch_probs) out.patch_probs.reserve(n);
  for (auto& r : results) {
    out.patches_scored += r.scored;
    out.images.push_back(std::move(r.scores));
    if (keep_patch_probs) out.patch_probs.push_back(std::move(r.patch_probs));
  }
  return out;
}

}  // namespace piaa
