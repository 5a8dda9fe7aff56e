#include <cstring>
#include <filesystem>

#include "binary_io.hpp"
#include "piaa/error.hpp"
#include "piaa/pvcl.hpp"

namespace piaa {
namespace {

constexpr char kMagic[4] = {'P', 'I', 'A', 'C'};
constexpr std::uint32_t kVersion = 1;

template <typename Matrix>
void put_matrix(io::Writer& w, const Matrix& m) {
  // Row-major on disk regardless of the in-memory layout.
  const RowMatrixXd rows = m;
  w.put_array(rows.data(), static_cast<std::size_t>(rows.size()));
}

RowMatrixXd get_matrix(io::Reader& r, Eigen::Index rows, Eigen::Index cols) {
  RowMatrixXd m(rows, cols);
  r.get_array(m.data(), static_cast<std::size_t>(m.size()));
  return m;
}

}  // namespace

void write_classifier(const GdaClassifier& classifier, const std::string& metadata_json,
                      const std::filesystem::path& path) {
  const auto c = classifier.num_classes();
  const auto d = classifier.dim();
  if (c > UINT32_MAX || d > UINT32_MAX) throw Error("dimension overflow");
  if (classifier.biases.size() != static_cast<Eigen::Index>(c) ||
      classifier.prototypes.rows() != static_cast<Eigen::Index>(c) ||
      classifier.precision.rows() != static_cast<Eigen::Index>(d)) {
    throw Error("classifier components have inconsistent shapes");
  }

  io::Writer w(path.string());
  w.put_bytes(kMagic, 4);
  w.put(kVersion);
  w.put(static_cast<std::uint32_t>(classifier.provenance));
  w.put(static_cast<std::uint32_t>(d));
  w.put(static_cast<std::uint32_t>(c));
  put_matrix(w, classifier.weights);
  w.put_array(classifier.biases.data(), c);
  put_matrix(w, classifier.prototypes);
  put_matrix(w, classifier.precision);
  std::vector<std::uint8_t> bitmap((c + 7) / 8, 0);
  for (const auto k : classifier.fallback_classes) {
    bitmap[k / 8] |= static_cast<std::uint8_t>(1u << (k % 8));
  }
  w.put_bytes(bitmap.data(), bitmap.size());
  w.put_string(metadata_json);
  w.finish();
}

StoredClassifier read_classifier(const std::filesystem::path& path) {
  io::Reader r(path.string());
  char magic[4];
  r.get_bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw Error("bad magic: not a PIAC classifier file");
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) throw Error("version mismatch in classifier file");
  const auto provenance = r.get<std::uint32_t>();
  if (provenance > static_cast<std::uint32_t>(Provenance::oracle)) {
    throw Error("unknown classifier provenance");
  }
  const auto d = r.get<std::uint32_t>();
  const auto c = r.get<std::uint32_t>();
  std::error_code ec;
  const auto have = std::filesystem::file_size(path, ec);
  const long double need = 20.0L + 8.0L * (2.0L * c * d + c + static_cast<long double>(d) * d);
  if (ec || need > static_cast<long double>(have)) {
    throw Error("truncated payload in '" + path.string() + "'");
  }

  StoredClassifier out;
  auto& k = out.classifier;
  k.provenance = static_cast<Provenance>(provenance);
  k.weights = get_matrix(r, c, d);
  k.biases.resize(c);
  r.get_array(k.biases.data(), c);
  k.prototypes = get_matrix(r, c, d);
  k.precision = get_matrix(r, d, d);
  std::vector<std::uint8_t> bitmap((c + 7) / 8);
  r.get_bytes(bitmap.data(), bitmap.size());
  for (std::uint32_t i = 0; i < c; ++i) {
    if ((bitmap[i / 8] >> (i % 8)) & 1u) k.fallback_classes.push_back(i);
  }
  out.metadata_json = r.get_string();
  return out;
}

}  // namespace piaa
