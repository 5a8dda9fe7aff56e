#include "piaa/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include "piaa/error.hpp"
#include "piaa/parallel.hpp"

namespace piaa {
namespace {

// Fixed stream ids for spec-level draws, far from any image index.
constexpr std::uint64_t kMeansStream = 0xFFFF'FFFF'0000'0001ull;
constexpr std::uint64_t kCovStream = 0xFFFF'FFFF'0000'0002ull;
constexpr std::uint64_t kGapStream = 0xFFFF'FFFF'0000'0003ull;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error("synth config: '" + key + "' expects a boolean, got '" + v + "'");
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    T out{};
    if constexpr (std::is_floating_point_v<T>) {
      out = static_cast<T>(std::stod(v, &used));
    } else {
      if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
      out = static_cast<T>(std::stoull(v, &used));
    }
    if (used != v.size()) throw std::invalid_argument("trailing");
    return out;
  } catch (const std::exception&) {
    throw Error("synth config: bad value for '" + key + "': '" + v + "'");
  }
}

Eigen::VectorXd gaussian_vector(SplitMix64& rng, Eigen::Index d) {
  Eigen::VectorXd v(d);
  for (Eigen::Index i = 0; i < d; ++i) v(i) = rng.normal();
  return v;
}

bool is_diagonal(const Eigen::MatrixXd& m) {
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      if (r != c && m(r, c) != 0.0) return false;
    }
  }
  return true;
}

// Draws x = mu + L z. Uses a diagonal fast path when the covariance allows it.
class Sampler {
 public:
  explicit Sampler(const SynthSpec& spec) : spec_(spec), diagonal_(is_diagonal(spec.shared_cov)) {
    if (diagonal_) {
      scale_ = spec.shared_cov.diagonal().cwiseSqrt();
    } else {
      Eigen::LLT<Eigen::MatrixXd> llt(spec.shared_cov);
      if (llt.info() != Eigen::Success) throw Error("shared covariance is not SPD");
      chol_ = llt.matrixL();
    }
  }

  void draw(std::size_t cls, SplitMix64& rng, Eigen::Ref<Eigen::VectorXd> out) const {
    const auto d = static_cast<Eigen::Index>(spec_.dim);
    Eigen::VectorXd z(d);
    for (Eigen::Index i = 0; i < d; ++i) z(i) = rng.normal();
    if (diagonal_) {
      out = scale_.cwiseProduct(z);
    } else {
      out = chol_.triangularView<Eigen::Lower>() * z;
    }
    // cls == num_classes draws background noise around the origin
    if (cls < spec_.num_classes) out += spec_.true_means.row(static_cast<Eigen::Index>(cls)).transpose();
  }

 private:
  const SynthSpec& spec_;
  bool diagonal_;
  Eigen::VectorXd scale_;
  Eigen::MatrixXd chol_;
};

std::vector<std::string> class_names_for(const SynthSpec& spec) {
  if (!spec.class_names.empty()) return spec.class_names;
  std::vector<std::string> names;
  for (std::size_t c = 0; c < spec.num_classes; ++c) names.push_back("class" + std::to_string(c));
  return names;
}

}  // namespace

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t image, std::uint64_t slot) {
  return mix64(seed) ^ mix64(mix64(image) + slot);
}

std::uint64_t SplitMix64::next() {
  state_ += 0x9e3779b97f4a7c15ull;
  return mix64(state_);
}

double SplitMix64::uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

double SplitMix64::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double t = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(t);
  has_spare_ = true;
  return r * std::cos(t);
}

std::uint64_t SplitMix64::below(std::uint64_t n) {
  if (n == 0) return 0;
  return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
}

SynthConfig parse_synth_config(const std::string& text) {
  SynthConfig cfg;
  std::stringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error("synth config line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "classes") cfg.num_classes = parse_number<std::size_t>(key, value);
    else if (key == "dim") cfg.dim = parse_number<std::size_t>(key, value);
    else if (key == "images") cfg.num_images = parse_number<std::size_t>(key, value);
    else if (key == "patches_per_image") cfg.patches_per_image = parse_number<std::size_t>(key, value);
    else if (key == "separation") cfg.separation = parse_number<double>(key, value);
    else if (key == "noise_std") cfg.noise_std = parse_number<double>(key, value);
    else if (key == "anisotropy") cfg.anisotropy = parse_number<double>(key, value);
    else if (key == "rotate_covariance") cfg.rotate_covariance = parse_bool(key, value);
    else if (key == "gap_angle_deg") cfg.gap_angle_deg = parse_number<double>(key, value);
    else if (key == "gap_offset") cfg.gap_offset = parse_number<double>(key, value);
    else if (key == "small_object_classes") {
      cfg.small_object_classes.clear();
      for (const auto& v : split_list(value)) {
        cfg.small_object_classes.push_back(parse_number<std::size_t>(key, v));
      }
    } else if (key == "small_object_fraction") cfg.small_object_fraction = parse_number<double>(key, value);
    else if (key == "background_fraction") cfg.background_fraction = parse_number<double>(key, value);
    else if (key == "max_labels_per_image") cfg.max_labels_per_image = parse_number<std::size_t>(key, value);
    else if (key == "cls_noise") cfg.cls_noise = parse_number<double>(key, value);
    else if (key == "normalize") cfg.normalize = parse_bool(key, value);
    else if (key == "class_names") cfg.class_names = split_list(value);
    else if (key == "seed") cfg.seed = parse_number<std::uint64_t>(key, value);
    else throw Error("synth config: unknown key '" + key + "'");
  }
  return cfg;
}

SynthConfig read_synth_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open synth config '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_synth_config(buf.str());
}

SynthSpec make_spec(const SynthConfig& cfg) {
  if (cfg.num_classes == 0 || cfg.dim == 0) throw Error("synth config: classes and dim must be positive");
  if (cfg.num_classes > cfg.dim) throw Error("synth config: classes must not exceed dim");
  if (!(cfg.noise_std > 0.0) || !(cfg.anisotropy >= 1.0)) {
    throw Error("synth config: noise_std must be positive and anisotropy >= 1");
  }
  const auto d = static_cast<Eigen::Index>(cfg.dim);
  const auto c = static_cast<Eigen::Index>(cfg.num_classes);

  SynthSpec spec;
  spec.num_classes = cfg.num_classes;
  spec.dim = cfg.dim;
  spec.num_images = cfg.num_images;
  spec.patches_per_image = cfg.patches_per_image;
  spec.seed = cfg.seed;
  spec.gap = {cfg.gap_angle_deg, cfg.gap_offset};
  spec.small_object_classes = cfg.small_object_classes;
  spec.small_object_fraction = cfg.small_object_fraction;
  spec.background_fraction = cfg.background_fraction;
  spec.max_labels_per_image = cfg.max_labels_per_image;
  spec.cls_noise = cfg.cls_noise;
  spec.normalize = cfg.normalize;
  spec.class_names = cfg.class_names;

  // Eigenvalues log-spaced from noise_std^2 / anisotropy up to noise_std^2.
  Eigen::VectorXd eig(d);
  const double top = cfg.noise_std * cfg.noise_std;
  for (Eigen::Index i = 0; i < d; ++i) {
    const double t = d > 1 ? static_cast<double>(i) / static_cast<double>(d - 1) : 1.0;
    eig(i) = top * std::pow(cfg.anisotropy, t - 1.0);
  }
  if (cfg.rotate_covariance) {
    SplitMix64 rng(stream_seed(cfg.seed, kCovStream, 0));
    Eigen::MatrixXd g(d, d);
    for (Eigen::Index j = 0; j < d; ++j) g.col(j) = gaussian_vector(rng, d);
    const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ();
    Eigen::MatrixXd cov = q * eig.asDiagonal() * q.transpose();
    spec.shared_cov = 0.5 * (cov + cov.transpose());
  } else {
    spec.shared_cov = eig.asDiagonal();
  }

  // Orthonormal class directions scaled so pairwise distances equal
  // separation * sqrt(lambda_max).
  SplitMix64 rng(stream_seed(cfg.seed, kMeansStream, 0));
  Eigen::MatrixXd g(d, c);
  for (Eigen::Index j = 0; j < c; ++j) g.col(j) = gaussian_vector(rng, d);
  const Eigen::MatrixXd basis =
      Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ() * Eigen::MatrixXd::Identity(d, c);
  const double radius = cfg.separation * cfg.noise_std / std::sqrt(2.0);
  spec.true_means = radius * basis.transpose();
  validate(spec);
  return spec;
}

void validate(const SynthSpec& spec) {
  const auto d = static_cast<Eigen::Index>(spec.dim);
  if (spec.num_classes == 0 || spec.dim == 0) throw Error("synth spec: empty dimensions");
  if (spec.true_means.rows() != static_cast<Eigen::Index>(spec.num_classes) ||
      spec.true_means.cols() != d) {
    throw Error("synth spec: true_means must be C x d");
  }
  if (spec.shared_cov.rows() != d || spec.shared_cov.cols() != d) {
    throw Error("synth spec: shared_cov must be d x d");
  }
  if ((spec.shared_cov - spec.shared_cov.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
    throw Error("non-SPD covariance: not symmetric");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(spec.shared_cov);
  if (llt.info() != Eigen::Success) throw Error("non-SPD covariance");
  if (!spec.class_names.empty() && spec.class_names.size() != spec.num_classes) {
    throw Error("synth spec: class_names must list every class");
  }
  for (const auto s : spec.small_object_classes) {
    if (s >= spec.num_classes) throw Error("synth spec: small-object class out of range");
  }
  if (spec.num_images > 0) {
    if (spec.small_object_classes.size() >= spec.num_classes) {
      throw Error("synth spec: at least one class must not be small-object");
    }
    if (spec.patches_per_image == 0) throw Error("synth spec: patches_per_image must be positive");
    if (spec.max_labels_per_image == 0) throw Error("synth spec: max_labels_per_image must be positive");
    if (!(spec.small_object_fraction > 0.0 && spec.small_object_fraction <= 1.0)) {
      throw Error("synth spec: small_object_fraction must lie in (0, 1]");
    }
    const std::size_t per_small = std::max<std::size_t>(
        1, static_cast<std::size_t>(spec.small_object_fraction *
                                    static_cast<double>(spec.patches_per_image)));
    if (!(spec.background_fraction >= 0.0 && spec.background_fraction < 1.0)) {
      throw Error("synth spec: background_fraction must lie in [0, 1)");
    }
    const auto background = static_cast<std::size_t>(spec.background_fraction *
                                                     static_cast<double>(spec.patches_per_image));
    const std::size_t labels = std::min(spec.max_labels_per_image, spec.num_classes);
    if (per_small * (labels - 1) + 1 + background > spec.patches_per_image) {
      throw Error("synth spec: too few patches per image for the label layout");
    }
  }
}

TextPrototypeSet gapped_prototypes(const SynthSpec& spec) {
  const auto c = static_cast<Eigen::Index>(spec.num_classes);
  const auto d = static_cast<Eigen::Index>(spec.dim);
  RowMatrixXd dirs = spec.true_means;
  for (Eigen::Index k = 0; k < c; ++k) {
    const double n = dirs.row(k).norm();
    if (n == 0.0) throw Error("synth spec: zero class mean");
    dirs.row(k) /= n;
  }
  SplitMix64 rng(stream_seed(spec.seed, kGapStream, 0));
  Eigen::VectorXd shared = gaussian_vector(rng, d);
  shared.normalize();

  const double theta = spec.gap.angle_deg * std::numbers::pi / 180.0;
  TextPrototypeSet out;
  out.dim = static_cast<std::uint32_t>(spec.dim);
  out.class_names = class_names_for(spec);
  out.prototypes.resize(c, d);
  for (Eigen::Index k = 0; k < c; ++k) {
    Eigen::RowVectorXd w = std::cos(theta) * dirs.row(k) + std::sin(theta) * dirs.row((k + 1) % c) +
                           spec.gap.offset * shared.transpose();
    const double n = w.norm();
    if (n == 0.0) throw Error("synth spec: gap collapses a prototype to zero");
    out.prototypes.row(k) = w / n;
  }
  return out;
}

PatchMatrix sample_class(const SynthSpec& spec, std::size_t cls, std::size_t count,
                         std::uint64_t stream_id) {
  validate(spec);
  if (cls >= spec.num_classes) throw Error("class index out of range");
  const Sampler sampler(spec);
  PatchMatrix out(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(spec.dim));
  Eigen::VectorXd x(static_cast<Eigen::Index>(spec.dim));
  for (std::size_t j = 0; j < count; ++j) {
    SplitMix64 rng(stream_seed(spec.seed, stream_id, j));
    sampler.draw(cls, rng, x);
    out.row(static_cast<Eigen::Index>(j)) = x.cast<float>().transpose();
  }
  return out;
}

SynthData generate(const SynthSpec& spec) {
  validate(spec);
  const std::size_t n = spec.num_images;
  const std::size_t m = spec.patches_per_image;
  const auto d = static_cast<Eigen::Index>(spec.dim);
  const auto c = spec.num_classes;
  const Sampler sampler(spec);

  std::vector<bool> small(c, false);
  for (const auto s : spec.small_object_classes) small[s] = true;
  std::vector<std::size_t> large_classes;
  for (std::size_t k = 0; k < c; ++k) {
    if (!small[k]) large_classes.push_back(k);
  }
  const std::size_t per_small = std::max<std::size_t>(
      1, static_cast<std::size_t>(spec.small_object_fraction * static_cast<double>(m)));
  const auto background =
      static_cast<std::size_t>(spec.background_fraction * static_cast<double>(m));

  SynthData out;
  auto& set = out.set;
  set.dim = static_cast<std::uint32_t>(spec.dim);
  set.patch_counts.assign(n, static_cast<std::uint32_t>(m));
  set.patches.resize(static_cast<Eigen::Index>(n * m), d);
  set.cls.resize(static_cast<Eigen::Index>(n), d);
  set.image_ids.resize(n);
  LabelMatrix labels = LabelMatrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(c));
  out.patch_labels.resize(n * m);

  parallel_for_blocks(n, 16, [&](std::size_t b, std::size_t e) {
    Eigen::VectorXd x(d);
    for (std::size_t i = b; i < e; ++i) {
      SplitMix64 layout(stream_seed(spec.seed, i, 0));
      const std::size_t num_labels =
          1 + static_cast<std::size_t>(layout.below(std::min(spec.max_labels_per_image, c)));

      // First label is always a large class so the image has a dominant object.
      std::vector<std::size_t> chosen{large_classes[layout.below(large_classes.size())]};
      while (chosen.size() < num_labels) {
        const auto k = static_cast<std::size_t>(layout.below(c));
        if (std::find(chosen.begin(), chosen.end(), k) == chosen.end()) chosen.push_back(k);
      }

      std::vector<std::size_t> big;
      std::vector<std::uint32_t> assignment;
      assignment.reserve(m);
      assignment.insert(assignment.end(), background, static_cast<std::uint32_t>(c));
      for (const auto k : chosen) {
        if (small[k]) {
          assignment.insert(assignment.end(), per_small, static_cast<std::uint32_t>(k));
        } else {
          big.push_back(k);
        }
      }
      const std::size_t rest = m - assignment.size();
      for (std::size_t j = 0; j < big.size(); ++j) {
        const std::size_t share = rest / big.size() + (j < rest % big.size() ? 1 : 0);
        assignment.insert(assignment.end(), share, static_cast<std::uint32_t>(big[j]));
      }
      for (std::size_t j = m; j > 1; --j) {
        std::swap(assignment[j - 1], assignment[layout.below(j)]);
      }

      Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
      for (std::size_t j = 0; j < m; ++j) {
        SplitMix64 rng(stream_seed(spec.seed, i, j + 1));
        sampler.draw(assignment[j], rng, x);
        mean += x;
        const auto row = static_cast<Eigen::Index>(i * m + j);
        set.patches.row(row) = x.cast<float>().transpose();
        out.patch_labels[i * m + j] = assignment[j];
        if (assignment[j] < c) {
          labels(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(assignment[j])) = 1;
        }
      }
      mean.normalize();
      if (spec.cls_noise > 0.0) {
        SplitMix64 rng(stream_seed(spec.seed, i, m + 1));
        for (Eigen::Index k = 0; k < d; ++k) mean(k) += spec.cls_noise * rng.normal();
        mean.normalize();
      }
      set.cls.row(static_cast<Eigen::Index>(i)) = mean.cast<float>().transpose();
      set.image_ids[i] = std::to_string(i);
    }
  });
  set.labels = std::move(labels);
  if (spec.normalize) normalize(set);

  out.prototypes = gapped_prototypes(spec);

  // Exact Bayes discriminant from the true parameters.
  Eigen::LLT<Eigen::MatrixXd> llt(spec.shared_cov);
  auto& gt = out.ground_truth;
  gt.provenance = Provenance::oracle;
  gt.prototypes = spec.true_means;
  gt.precision = llt.solve(Eigen::MatrixXd::Identity(d, d));
  gt.precision = 0.5 * (gt.precision + gt.precision.transpose()).eval();
  gt.weights = llt.solve(spec.true_means.transpose()).transpose();
  gt.biases.resize(static_cast<Eigen::Index>(c));
  for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(c); ++k) {
    gt.biases(k) = -0.5 * spec.true_means.row(k).dot(gt.weights.row(k));
  }
  return out;
}

}  // namespace piaa
