#include "piaa/embedding_store.hpp"

#include <cmath>
#include <limits>
#include <set>

#include "binary_io.hpp"
#include "piaa/error.hpp"

namespace piaa {
namespace {

constexpr char kMagic[4] = {'P', 'I', 'A', 'A'};
constexpr std::uint32_t kFlagLabels = 1u << 0;
constexpr std::uint32_t kFlagImageIds = 1u << 1;
constexpr std::uint32_t kFlagPrototypes = 1u << 2;
constexpr double kNormTolerance = 1e-4;

bool default_ids(const std::vector<std::string>& ids) {
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] != std::to_string(i)) return false;
  }
  return true;
}

template <typename Matrix>
void normalize_rows_impl(Matrix& rows, const char* what) {
  using Scalar = typename Matrix::Scalar;
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    double sq = 0.0;
    for (Eigen::Index c = 0; c < rows.cols(); ++c) {
      const double v = static_cast<double>(rows(r, c));
      if (!std::isfinite(v)) {
        throw Error(std::string("non-finite value in ") + what + " row " + std::to_string(r));
      }
      sq += v * v;
    }
    const double norm = std::sqrt(sq);
    if (norm == 0.0) {
      throw Error(std::string("zero-norm vector in ") + what + " row " + std::to_string(r));
    }
    if (std::abs(norm - 1.0) <= kUnitNormBand) continue;
    for (Eigen::Index c = 0; c < rows.cols(); ++c) {
      rows(r, c) = static_cast<Scalar>(static_cast<double>(rows(r, c)) / norm);
    }
  }
}

template <typename Matrix>
void check_unit_rows(const Matrix& rows, const char* what) {
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    const double norm = rows.row(r).template cast<double>().norm();
    if (!(std::abs(norm - 1.0) <= kNormTolerance)) {
      throw Error(std::string(what) + " row " + std::to_string(r) + " is not unit-norm (" +
                  std::to_string(norm) + ")");
    }
  }
}

struct Header {
  std::uint32_t version = 0;
  std::uint32_t flags = 0;
  std::uint32_t dim = 0;
  std::uint32_t num_classes = 0;
  std::uint64_t num_images = 0;
  std::uint64_t num_patches = 0;
};

void write_header(io::Writer& w, const Header& h) {
  w.put_bytes(kMagic, 4);
  w.put(h.version);
  w.put(h.flags);
  w.put(h.dim);
  w.put(h.num_classes);
  w.put(h.num_images);
  w.put(h.num_patches);
}

Header read_header(io::Reader& r) {
  char magic[4];
  r.get_bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw Error("bad magic: not a PIAA file");
  Header h;
  h.version = r.get<std::uint32_t>();
  if (h.version != kFormatVersion) {
    throw Error("version mismatch: file has " + std::to_string(h.version) + ", expected " +
                std::to_string(kFormatVersion));
  }
  h.flags = r.get<std::uint32_t>();
  h.dim = r.get<std::uint32_t>();
  h.num_classes = r.get<std::uint32_t>();
  h.num_images = r.get<std::uint64_t>();
  h.num_patches = r.get<std::uint64_t>();
  return h;
}

std::size_t label_bytes(std::size_t n, std::size_t c) { return (n * c + 7) / 8; }

// Guards allocations against headers that promise more data than the file has.
void check_payload_fits(const std::filesystem::path& path, const Header& h) {
  const long double need =
      static_cast<long double>(kHeaderBytes) + 4.0L * h.num_images +
      4.0L * h.dim * (static_cast<long double>(h.num_patches) + h.num_images) +
      ((h.flags & kFlagLabels) ? std::floor((static_cast<long double>(h.num_images) * h.num_classes + 7) / 8)
                               : 0.0L);
  std::error_code ec;
  const auto have = std::filesystem::file_size(path, ec);
  if (ec) throw Error("cannot stat '" + path.string() + "'");
  if (need > static_cast<long double>(have)) {
    throw Error("truncated payload in '" + path.string() + "'");
  }
}

}  // namespace

std::vector<PatchRange> EmbeddingSet::patch_offsets() const {
  std::vector<PatchRange> out;
  out.reserve(patch_counts.size());
  std::size_t start = 0;
  for (const auto count : patch_counts) {
    out.push_back({start, count});
    start += count;
  }
  return out;
}

PatchView::PatchView(const EmbeddingSet& set) : set_(&set), offsets_(set.patch_offsets()) {}

Eigen::Block<const PatchMatrix, Eigen::Dynamic, Eigen::Dynamic, true> PatchView::image_patches(std::size_t i) const {
  const auto range = image(i);
  return set_->patches.middleRows(static_cast<Eigen::Index>(range.start),
                                  static_cast<Eigen::Index>(range.count));
}

void validate(const EmbeddingSet& set, bool require_unit_norm) {
  if (set.dim == 0 && (set.num_images() > 0 || set.num_patches() > 0)) {
    throw Error("embedding dimension must be positive");
  }
  if (set.patches.rows() > 0 && set.patches.cols() != set.dim) {
    throw Error("patch matrix width does not match dim");
  }
  if (set.cls.rows() != static_cast<Eigen::Index>(set.num_images()) ||
      (set.cls.rows() > 0 && set.cls.cols() != set.dim)) {
    throw Error("cls matrix must be num_images x dim");
  }
  std::size_t total = 0;
  for (const auto count : set.patch_counts) total += count;
  if (total != set.num_patches()) {
    throw Error("patch counts do not partition the patch matrix");
  }
  if (set.image_ids.size() != set.num_images()) throw Error("image_ids size mismatch");
  if (set.labels) {
    if (set.labels->rows() != static_cast<Eigen::Index>(set.num_images())) {
      throw Error("labels must have one row per image");
    }
    for (Eigen::Index i = 0; i < set.labels->size(); ++i) {
      if (set.labels->data()[i] > 1) throw Error("labels must be 0 or 1");
    }
  }
  for (Eigen::Index i = 0; i < set.patches.size(); ++i) {
    if (!std::isfinite(set.patches.data()[i])) throw Error("non-finite patch value");
  }
  for (Eigen::Index i = 0; i < set.cls.size(); ++i) {
    if (!std::isfinite(set.cls.data()[i])) throw Error("non-finite cls value");
  }
  if (require_unit_norm) {
    check_unit_rows(set.patches, "patch");
    check_unit_rows(set.cls, "cls");
  }
}

void validate(const TextPrototypeSet& set) {
  if (set.prototypes.rows() != static_cast<Eigen::Index>(set.class_names.size())) {
    throw Error("prototype rows and class names differ in count");
  }
  if (set.prototypes.rows() > 0 && set.prototypes.cols() != set.dim) {
    throw Error("prototype width does not match dim");
  }
  std::set<std::string> seen;
  for (const auto& name : set.class_names) {
    if (!seen.insert(name).second) throw Error("duplicate class name '" + name + "'");
  }
  check_unit_rows(set.prototypes, "prototype");
}

void normalize_rows(PatchMatrix& rows, const char* what) { normalize_rows_impl(rows, what); }
void normalize_rows(RowMatrixXd& rows, const char* what) { normalize_rows_impl(rows, what); }

void normalize(EmbeddingSet& set) {
  normalize_rows(set.patches, "patch");
  normalize_rows(set.cls, "cls");
}

std::size_t embedding_file_size(const EmbeddingSet& set) {
  const std::size_t n = set.num_images();
  std::size_t bytes = kHeaderBytes + 4 * n + 4 * static_cast<std::size_t>(set.dim) *
                                                 (set.num_patches() + n);
  if (set.labels) bytes += label_bytes(n, static_cast<std::size_t>(set.labels->cols()));
  if (!default_ids(set.image_ids)) {
    for (const auto& id : set.image_ids) bytes += 4 + id.size();
  }
  return bytes;
}

void write_embedding_file(const EmbeddingSet& set, const std::filesystem::path& path) {
  validate(set, /*require_unit_norm=*/false);
  const std::size_t label_cols = set.labels ? static_cast<std::size_t>(set.labels->cols()) : 0;
  if (label_cols > UINT32_MAX) throw Error("dimension overflow: too many label columns");

  Header h;
  h.version = kFormatVersion;
  const bool ids = !default_ids(set.image_ids);
  h.flags = (set.labels ? kFlagLabels : 0u) | (ids ? kFlagImageIds : 0u);
  h.dim = set.dim;
  h.num_classes = static_cast<std::uint32_t>(label_cols);
  h.num_images = set.num_images();
  h.num_patches = set.num_patches();

  io::Writer w(path.string());
  write_header(w, h);
  w.put_array(set.patch_counts.data(), set.patch_counts.size());
  w.put_array(set.patches.data(), static_cast<std::size_t>(set.patches.size()));
  w.put_array(set.cls.data(), static_cast<std::size_t>(set.cls.size()));
  if (set.labels) {
    std::vector<std::uint8_t> packed(label_bytes(set.num_images(), label_cols), 0);
    for (Eigen::Index i = 0; i < set.labels->size(); ++i) {
      if (set.labels->data()[i]) {
        packed[static_cast<std::size_t>(i) / 8] |=
            static_cast<std::uint8_t>(1u << (static_cast<std::size_t>(i) % 8));
      }
    }
    w.put_bytes(packed.data(), packed.size());
  }
  if (ids) {
    for (const auto& id : set.image_ids) w.put_string(id);
  }
  w.finish();
}

EmbeddingSet read_embedding_file(const std::filesystem::path& path, const ReadOptions& options) {
  io::Reader r(path.string());
  const Header h = read_header(r);
  if (h.flags & kFlagPrototypes) throw Error("'" + path.string() + "' is a text-prototype file");
  if (h.num_images > UINT32_MAX * 64ull || h.num_patches > (1ull << 40)) {
    throw Error("dimension overflow in header of '" + path.string() + "'");
  }
  check_payload_fits(path, h);

  EmbeddingSet set;
  set.dim = h.dim;
  const auto n = static_cast<std::size_t>(h.num_images);
  const auto m = static_cast<std::size_t>(h.num_patches);
  set.patch_counts.resize(n);
  r.get_array(set.patch_counts.data(), n);
  set.patches.resize(static_cast<Eigen::Index>(m), h.dim);
  r.get_array(set.patches.data(), m * h.dim);
  set.cls.resize(static_cast<Eigen::Index>(n), h.dim);
  r.get_array(set.cls.data(), n * h.dim);
  if (h.flags & kFlagLabels) {
    std::vector<std::uint8_t> packed(label_bytes(n, h.num_classes));
    r.get_bytes(packed.data(), packed.size());
    LabelMatrix labels(static_cast<Eigen::Index>(n), h.num_classes);
    for (Eigen::Index i = 0; i < labels.size(); ++i) {
      const auto k = static_cast<std::size_t>(i);
      labels.data()[i] = static_cast<std::uint8_t>((packed[k / 8] >> (k % 8)) & 1u);
    }
    set.labels = std::move(labels);
  }
  set.image_ids.resize(n);
  if (h.flags & kFlagImageIds) {
    for (auto& id : set.image_ids) id = r.get_string();
  } else {
    for (std::size_t i = 0; i < n; ++i) set.image_ids[i] = std::to_string(i);
  }

  if (options.normalize) {
    normalize(set);
  } else {
    // Zero rows are rejected even when magnitudes are kept.
    for (Eigen::Index i = 0; i < set.patches.rows(); ++i) {
      if (set.patches.row(i).squaredNorm() == 0.0f) throw Error("zero-norm vector in patch row " + std::to_string(i));
    }
    for (Eigen::Index i = 0; i < set.cls.rows(); ++i) {
      if (set.cls.row(i).squaredNorm() == 0.0f) throw Error("zero-norm vector in cls row " + std::to_string(i));
    }
  }
  validate(set, options.normalize);
  return set;
}

void write_text_prototypes(const TextPrototypeSet& set, const std::filesystem::path& path) {
  validate(set);
  Header h;
  h.version = kFormatVersion;
  h.flags = kFlagPrototypes;
  h.dim = set.dim;
  h.num_classes = static_cast<std::uint32_t>(set.num_classes());
  io::Writer w(path.string());
  write_header(w, h);
  const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows =
      set.prototypes.cast<float>();
  w.put_array(rows.data(), static_cast<std::size_t>(rows.size()));
  for (const auto& name : set.class_names) w.put_string(name);
  w.finish();
}

TextPrototypeSet read_text_prototypes(const std::filesystem::path& path) {
  io::Reader r(path.string());
  const Header h = read_header(r);
  if (!(h.flags & kFlagPrototypes)) {
    throw Error("'" + path.string() + "' is not a text-prototype file");
  }
  if (h.num_classes == 0) throw Error("prototype file declares zero classes");
  std::error_code ec;
  const auto have = std::filesystem::file_size(path, ec);
  if (ec || kHeaderBytes + 4ull * h.num_classes * h.dim > have) {
    throw Error("truncated payload in '" + path.string() + "'");
  }

  Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows(h.num_classes,
                                                                             h.dim);
  r.get_array(rows.data(), static_cast<std::size_t>(rows.size()));
  TextPrototypeSet set;
  set.dim = h.dim;
  set.prototypes = rows.cast<double>();
  set.class_names.resize(h.num_classes);
  for (auto& name : set.class_names) name = r.get_string();
  normalize_rows(set.prototypes, "prototype");
  validate(set);
  return set;
}

FileSummary read_file_summary(const std::filesystem::path& path) {
  io::Reader r(path.string());
  char magic[4];
  r.get_bytes(magic, 4);
  FileSummary s;
  s.magic.assign(magic, 4);
  s.version = r.get<std::uint32_t>();
  s.flags = r.get<std::uint32_t>();
  s.dim = r.get<std::uint32_t>();
  s.num_classes = r.get<std::uint32_t>();
  if (s.magic == "PIAA") {
    s.num_images = r.get<std::uint64_t>();
    s.num_patches = r.get<std::uint64_t>();
  }
  return s;
}

}  // namespace piaa
