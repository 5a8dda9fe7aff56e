#pragma once

// Closed-form patch-level visual classifier learned from unlabeled patches.
//
// The fit runs in three stages:
//   1. Entropy-guided bootstrapping. Patches are scored against the text
//      prototypes; each class keeps the K argmax-consistent patches with the
//      lowest predictive entropy.
//   2. Vision-driven purification. A preliminary Gaussian discriminant is
//      estimated from those banks and re-scores every member; a member stays
//      only if its own-class score is at least mean + stddev of its bank.
//   3. Shrinkage induction. Confidence-weighted class means and a pooled
//      covariance are estimated from the purified banks, the covariance is
//      inverted with trace-regularized shrinkage
//          P = d * [ (|B| - 1) * Sigma + Tr(Sigma) * I ]^-1
//      and the linear discriminant w_c = P mu_c, b_c = -1/2 mu_c' P mu_c is
//      returned.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "piaa/embedding_store.hpp"
#include "piaa/zeroshot.hpp"

namespace piaa {

inline constexpr std::size_t kDefaultBankCapacity = 512;
inline constexpr double kCovarianceFloor = 1e-12;

enum class BankStage : std::uint8_t { bootstrap, purified };

struct MemoryBank {
  // Global patch indices per class, most confident first.
  std::vector<std::vector<std::size_t>> members;
  BankStage stage = BankStage::bootstrap;
  std::size_t capacity = 0;

  std::size_t num_classes() const { return members.size(); }
  std::size_t total() const;
  // All member indices in ascending order.
  std::vector<std::size_t> flatten() const;
};

enum class Provenance : std::uint32_t { preliminary = 0, final = 1, oracle = 2 };

struct GdaClassifier {
  RowMatrixXd weights;        // C x d
  Eigen::VectorXd biases;     // C
  RowMatrixXd prototypes;     // C x d class means
  Eigen::MatrixXd precision;  // d x d, SPD
  Provenance provenance = Provenance::final;
  std::vector<std::size_t> fallback_classes;  // ascending

  std::size_t num_classes() const { return static_cast<std::size_t>(weights.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(weights.cols()); }
  bool is_fallback(std::size_t c) const;

  // Discriminant scores w_c' x + b_c for every row.
  RowMatrixXd logits(const Eigen::Ref<const PatchMatrix>& patches) const;
};

struct CovarianceEstimate {
  Eigen::MatrixXd sigma_hat;  // d x d
  std::size_t n = 0;
  double trace = 0.0;
};

enum class CovarianceDenominator : std::uint8_t {
  as_printed,  // Sigma = S / |B|, bracket uses (|B| - 1) Sigma
  unbiased,    // Sigma = S / (|B| - 1), so (|B| - 1) Sigma = S
};

struct ShrinkageOptions {
  bool shrink = true;
  CovarianceDenominator denominator = CovarianceDenominator::as_printed;
  double floor = kCovarianceFloor;
};

struct PvclOptions {
  std::size_t bank_capacity = kDefaultBankCapacity;
  double logit_scale = kDefaultLogitScale;
  bool stage1_shrinkage = true;
  CovarianceDenominator denominator = CovarianceDenominator::as_printed;
};

// Probabilities for a subset of patches, addressed by global patch index.
struct ScoredPatches {
  std::vector<std::size_t> indices;  // ascending, unique
  ProbMatrix probs;                  // row r scores indices[r]

  // Row of `patch` in probs; throws if the patch was not scored.
  Eigen::Index row_of(std::size_t patch) const;
};

struct FitReport {
  std::vector<std::size_t> bootstrap_sizes;
  std::vector<std::size_t> purified_sizes;
  std::vector<std::size_t> fallback_classes;
  double seconds = 0.0;
};

struct PvclResult {
  GdaClassifier classifier;
  GdaClassifier preliminary;
  MemoryBank bootstrap;
  MemoryBank purified;
  FitReport report;
};

MemoryBank bootstrap_banks(const ProbMatrix& probs, const EntropyVector& entropy,
                           std::size_t capacity);

// Weighted (or plain, when weights is empty) class means of bank members.
RowMatrixXd bank_means(const PatchView& view, const MemoryBank& bank,
                       const std::vector<std::vector<double>>& weights = {});

// Pooled scatter of bank members around `means`, divided per `denominator`.
CovarianceEstimate pooled_covariance(const PatchView& view, const MemoryBank& bank,
                                     const RowMatrixXd& means,
                                     CovarianceDenominator denominator);

// d * [ (n - 1) Sigma + max(Tr Sigma, floor) I ]^-1, or the raw inverse of
// Sigma when shrink is off. Throws when the matrix to invert is not SPD.
Eigen::MatrixXd shrinkage_precision(const CovarianceEstimate& cov,
                                    const ShrinkageOptions& options = {});

GdaClassifier fit_preliminary(const PatchView& view, const MemoryBank& bank,
                              const TextPrototypeSet& prototypes,
                              const ShrinkageOptions& options = {});

ProbMatrix vision_scores(const GdaClassifier& classifier, const PatchView& view,
                         const std::vector<std::size_t>& indices);

MemoryBank purify_banks(const MemoryBank& bank, const ScoredPatches& q);

GdaClassifier fit_final(const PatchView& view, const MemoryBank& bank, const ScoredPatches& q,
                        const TextPrototypeSet& prototypes,
                        const ShrinkageOptions& options = {});

PvclResult run_pvcl(const PatchView& view, const TextPrototypeSet& prototypes,
                    const PvclOptions& options = {});

// Throws when the classifier breaks its documented invariants: symmetric SPD
// precision and, for non-fallback classes, w = P mu and b = -1/2 mu' P mu.
void check_invariants(const GdaClassifier& classifier, double rel_tol = 1e-8);

// PIAC container: "PIAC", u32 version, u32 provenance, u32 d, u32 C, then
// f64 W (C x d), f64 b (C), f64 mu (C x d), f64 precision (d x d),
// fallback bitmap (ceil(C/8) bytes, LSB-first), u32 length + JSON metadata.
void write_classifier(const GdaClassifier& classifier, const std::string& metadata_json,
                      const std::filesystem::path& path);

struct StoredClassifier {
  GdaClassifier classifier;
  std::string metadata_json;
};

StoredClassifier read_classifier(const std::filesystem::path& path);

}  // namespace piaa
