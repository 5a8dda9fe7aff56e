#pragma once

// In-memory embedding containers and the PIAA binary container format.
//
// Embedding file layout (all integers little-endian):
//
//   offset  size  field
//   0       4     magic "PIAA"
//   4       4     u32 version (1)
//   8       4     u32 flags: bit0 labels present, bit1 image-id table present,
//                 bit2 text-prototype file
//   12      4     u32 d
//   16      4     u32 C (label columns; 0 when unlabeled)
//   20      8     u64 num_images
//   28      8     u64 M (total patches)
//   36            u32 patch count per image          (num_images x 4)
//                 f32 patches, row-major             (M x d x 4)
//                 f32 cls embeddings, row-major      (num_images x d x 4)
//                 labels, bit-packed LSB-first over the row-major
//                 num_images x C matrix              (ceil(num_images*C/8))
//                 image ids, each u32 length + UTF-8 bytes (only if bit1)
//
// Image ids equal to the decimal image index are implied and not stored.
//
// Text-prototype files reuse the header with bit2 set, num_images = M = 0 and
// C > 0, followed by C x d f32 prototypes and C length-prefixed class names.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace piaa {

using PatchMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using LabelMatrix =
    Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr std::size_t kHeaderBytes = 36;
// Rows whose norm is within this band of 1 are left untouched at ingestion,
// which keeps normalized f32 data bit-exact across read/write cycles.
inline constexpr double kUnitNormBand = 1e-6;

struct PatchRange {
  std::size_t start = 0;
  std::size_t count = 0;
};

struct EmbeddingSet {
  std::uint32_t dim = 0;
  std::vector<std::uint32_t> patch_counts;  // per image
  PatchMatrix patches;                      // M x d
  PatchMatrix cls;                          // num_images x d
  std::vector<std::string> image_ids;
  std::optional<LabelMatrix> labels;        // num_images x C, evaluation only

  std::size_t num_images() const { return patch_counts.size(); }
  std::size_t num_patches() const { return static_cast<std::size_t>(patches.rows()); }

  // Offsets derived from patch_counts; valid once the set is validated.
  std::vector<PatchRange> patch_offsets() const;
};

struct TextPrototypeSet {
  std::uint32_t dim = 0;
  RowMatrixXd prototypes;  // C x d, unit rows
  std::vector<std::string> class_names;

  std::size_t num_classes() const { return static_cast<std::size_t>(prototypes.rows()); }
};

// Label-free view over an EmbeddingSet. Fitting and inference only ever see
// this type, so ground-truth labels cannot leak into them.
class PatchView {
 public:
  explicit PatchView(const EmbeddingSet& set);

  std::uint32_t dim() const { return set_->dim; }
  std::size_t num_images() const { return set_->num_images(); }
  std::size_t num_patches() const { return set_->num_patches(); }
  const PatchMatrix& patches() const { return set_->patches; }
  const PatchMatrix& cls() const { return set_->cls; }
  const std::vector<std::string>& image_ids() const { return set_->image_ids; }
  PatchRange image(std::size_t i) const { return offsets_.at(i); }
  Eigen::Block<const PatchMatrix, Eigen::Dynamic, Eigen::Dynamic, true> image_patches(std::size_t i) const;

 private:
  const EmbeddingSet* set_;
  std::vector<PatchRange> offsets_;
};

struct ReadOptions {
  // Re-normalize non-unit rows. Disabling keeps raw magnitudes (ablation).
  bool normalize = true;
};

// Throws piaa::Error when an invariant is violated. With require_unit_norm,
// every patch and cls row must have norm 1 +- 1e-4.
void validate(const EmbeddingSet& set, bool require_unit_norm = true);
void validate(const TextPrototypeSet& set);

// L2-normalizes rows outside the unit band; zero or non-finite rows throw.
void normalize_rows(PatchMatrix& rows, const char* what = "embedding");
void normalize_rows(RowMatrixXd& rows, const char* what = "embedding");
void normalize(EmbeddingSet& set);

void write_embedding_file(const EmbeddingSet& set, const std::filesystem::path& path);
EmbeddingSet read_embedding_file(const std::filesystem::path& path,
                                 const ReadOptions& options = {});

void write_text_prototypes(const TextPrototypeSet& set, const std::filesystem::path& path);
// Prototype rows are always normalized; cosine scoring depends on it.
TextPrototypeSet read_text_prototypes(const std::filesystem::path& path);

// Expected on-disk size of an embedding file, derived from the layout above.
std::size_t embedding_file_size(const EmbeddingSet& set);

struct FileSummary {
  std::string magic;
  std::uint32_t version = 0;
  std::uint32_t flags = 0;
  std::uint32_t dim = 0;
  std::uint32_t num_classes = 0;
  std::uint64_t num_images = 0;
  std::uint64_t num_patches = 0;
};

// Reads only the fixed header of a PIAA file.
FileSummary read_file_summary(const std::filesystem::path& path);

}  // namespace piaa
