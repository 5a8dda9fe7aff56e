#pragma once

// Synthetic patch manifolds with a known Bayes-optimal answer, plus
// independently coded reference implementations used as test oracles.
//
// Randomness: every draw comes from a SplitMix64 stream. The stream for
// (image i, slot k) starts at state
//     mix64(seed) ^ mix64(mix64(i) + k)
// where mix64 is the SplitMix64 output finalizer. Slot 0 drives the image's
// label set and patch layout, slot j+1 the j-th patch, and slot m+1 the
// [CLS] noise. Uniforms take the top 53 bits; normals use Box-Muller on
// (1 - u1, u2), consuming two uniforms per pair of normals.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "piaa/embedding_store.hpp"
#include "piaa/pvcl.hpp"

namespace piaa {

std::uint64_t mix64(std::uint64_t x);
std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t image, std::uint64_t slot);

class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t state) : state_(state) {}

  std::uint64_t next();
  double uniform();  // [0, 1)
  double normal();
  std::uint64_t below(std::uint64_t n);  // uniform in [0, n)

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

struct PrototypeGap {
  // Each prototype is turned by this angle from its class mean toward the
  // next class's mean (cyclically), then shifted by offset * a shared unit
  // direction and renormalized.
  double angle_deg = 0.0;
  double offset = 0.0;
};

struct SynthSpec {
  std::size_t num_classes = 0;
  std::size_t dim = 0;
  std::size_t num_images = 0;
  std::size_t patches_per_image = 0;
  RowMatrixXd true_means;      // C x d
  Eigen::MatrixXd shared_cov;  // d x d, SPD
  PrototypeGap gap;
  // Classes whose patches cover at most small_object_fraction of a
  // positive image (at least one patch).
  std::vector<std::size_t> small_object_classes;
  double small_object_fraction = 0.1;
  // Share of every image's patches drawn from a class-free background
  // Gaussian centred at the origin (equidistant from all class means).
  double background_fraction = 0.0;
  std::size_t max_labels_per_image = 2;
  double cls_noise = 0.0;
  bool normalize = true;
  std::vector<std::string> class_names;  // defaults to class0..classC-1
  std::uint64_t seed = 0;
};

// Scalar knobs from which a SynthSpec is built. Read from key = value text.
struct SynthConfig {
  std::size_t num_classes = 5;
  std::size_t dim = 16;
  std::size_t num_images = 200;
  std::size_t patches_per_image = 16;
  // Pairwise mean distance in units of sqrt(largest covariance eigenvalue).
  double separation = 6.0;
  double noise_std = 1.0;
  // Ratio between the largest and smallest covariance eigenvalue.
  double anisotropy = 1.0;
  bool rotate_covariance = false;
  double gap_angle_deg = 0.0;
  double gap_offset = 0.0;
  std::vector<std::size_t> small_object_classes;
  double small_object_fraction = 0.1;
  double background_fraction = 0.0;
  std::size_t max_labels_per_image = 2;
  double cls_noise = 0.0;
  bool normalize = true;
  std::vector<std::string> class_names;
  std::uint64_t seed = 0;
};

SynthConfig parse_synth_config(const std::string& text);
SynthConfig read_synth_config(const std::filesystem::path& path);
SynthSpec make_spec(const SynthConfig& config);

// Throws when the covariance is not SPD or the layout is impossible.
void validate(const SynthSpec& spec);

struct SynthData {
  EmbeddingSet set;  // labelled
  TextPrototypeSet prototypes;
  GdaClassifier ground_truth;  // w = Sigma^-1 mu, b = -1/2 mu' Sigma^-1 mu, true parameters
  std::vector<std::uint32_t> patch_labels;  // num_classes marks a background patch
};

SynthData generate(const SynthSpec& spec);

// count i.i.d. raw draws from class `cls`, using streams (stream_id, j).
PatchMatrix sample_class(const SynthSpec& spec, std::size_t cls, std::size_t count,
                         std::uint64_t stream_id);

// Gapped text prototypes for the spec's means.
TextPrototypeSet gapped_prototypes(const SynthSpec& spec);

// Reference GDA fit: literal loops over the closed forms, own Gauss-Jordan
// inverse, no shared code with the production estimator. `weights`, when
// given, are per-sample confidences for the weighted class means. Every
// class must have at least one sample.
GdaClassifier oracle_gda(const RowMatrixXd& features, const std::vector<std::size_t>& hard_labels,
                         std::size_t num_classes, const std::vector<double>& weights = {},
                         const ShrinkageOptions& options = {});

// O(N^2) AP: each positive's rank and precision come from pairwise counts.
std::optional<double> oracle_ap(std::span<const double> scores,
                                std::span<const std::uint8_t> labels);

}  // namespace piaa
