// Deliberately naive reference code. Nothing here calls into the production
// estimator or ranking code; plain vectors and loops only.

#include <algorithm>
#include <cmath>
#include <vector>

#include "piaa/error.hpp"
#include "piaa/synth.hpp"

namespace piaa {
namespace {

using Mat = std::vector<std::vector<double>>;

// Gauss-Jordan with partial pivoting.
Mat invert(Mat a) {
  const std::size_t n = a.size();
  Mat inv(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) inv[i][i] = 1.0;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
    }
    if (a[pivot][col] == 0.0) throw Error("oracle: singular matrix");
    std::swap(a[pivot], a[col]);
    std::swap(inv[pivot], inv[col]);
    const double p = a[col][col];
    for (std::size_t k = 0; k < n; ++k) {
      a[col][k] /= p;
      inv[col][k] /= p;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = a[r][col];
      if (f == 0.0) continue;
      for (std::size_t k = 0; k < n; ++k) {
        a[r][k] -= f * a[col][k];
        inv[r][k] -= f * inv[col][k];
      }
    }
  }
  return inv;
}

}  // namespace

GdaClassifier oracle_gda(const RowMatrixXd& features, const std::vector<std::size_t>& hard_labels,
                         std::size_t num_classes, const std::vector<double>& weights,
                         const ShrinkageOptions& options) {
  const std::size_t n = static_cast<std::size_t>(features.rows());
  const std::size_t d = static_cast<std::size_t>(features.cols());
  if (hard_labels.size() != n) throw Error("oracle: one label per sample required");
  if (!weights.empty() && weights.size() != n) throw Error("oracle: one weight per sample required");

  // Class means, weighted when asked (all-zero weights fall back to plain).
  Mat mu(num_classes, std::vector<double>(d, 0.0));
  for (std::size_t c = 0; c < num_classes; ++c) {
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (hard_labels[i] != c) continue;
      ++count;
      const double w = weights.empty() ? 1.0 : weights[i];
      for (std::size_t k = 0; k < d; ++k) mu[c][k] += w * features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
      total += w;
    }
    if (count == 0) throw Error("oracle: class without samples");
    if (!(total > 0.0)) {
      std::fill(mu[c].begin(), mu[c].end(), 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        if (hard_labels[i] != c) continue;
        for (std::size_t k = 0; k < d; ++k) mu[c][k] += features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
      }
      total = static_cast<double>(count);
    }
    for (std::size_t k = 0; k < d; ++k) mu[c][k] /= total;
  }

  // Pooled covariance.
  Mat sigma(d, std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = hard_labels[i];
    std::vector<double> r(d);
    for (std::size_t k = 0; k < d; ++k) r[k] = features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) - mu[c][k];
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = 0; b < d; ++b) sigma[a][b] += r[a] * r[b];
    }
  }
  double divisor = static_cast<double>(n);
  if (options.denominator == CovarianceDenominator::unbiased) divisor = n > 1 ? static_cast<double>(n - 1) : 1.0;
  double trace = 0.0;
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = 0; b < d; ++b) sigma[a][b] /= divisor;
    trace += sigma[a][a];
  }

  Mat precision;
  if (options.shrink) {
    Mat bracket = sigma;
    const double ridge = std::max(trace, options.floor);
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = 0; b < d; ++b) bracket[a][b] = static_cast<double>(n - 1) * sigma[a][b];
      bracket[a][a] += ridge;
    }
    precision = invert(bracket);
    for (auto& row : precision) {
      for (auto& v : row) v *= static_cast<double>(d);
    }
  } else {
    if (trace < options.floor) {
      for (std::size_t a = 0; a < d; ++a) {
        std::fill(sigma[a].begin(), sigma[a].end(), 0.0);
        sigma[a][a] = options.floor;
      }
    }
    precision = invert(sigma);
  }

  GdaClassifier out;
  out.provenance = Provenance::oracle;
  const auto C = static_cast<Eigen::Index>(num_classes);
  const auto D = static_cast<Eigen::Index>(d);
  out.weights.resize(C, D);
  out.prototypes.resize(C, D);
  out.biases.resize(C);
  out.precision.resize(D, D);
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = 0; b < d; ++b) {
      out.precision(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
          0.5 * (precision[a][b] + precision[b][a]);
    }
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    double quad = 0.0;
    for (std::size_t a = 0; a < d; ++a) {
      double w = 0.0;
      for (std::size_t b = 0; b < d; ++b) w += precision[a][b] * mu[c][b];
      out.weights(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(a)) = w;
      out.prototypes(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(a)) = mu[c][a];
      quad += mu[c][a] * w;
    }
    out.biases(static_cast<Eigen::Index>(c)) = -0.5 * quad;
  }
  return out;
}

std::optional<double> oracle_ap(std::span<const double> scores,
                                std::span<const std::uint8_t> labels) {
  const std::size_t n = scores.size();
  if (labels.size() != n) throw Error("oracle: scores and labels differ in length");
  std::size_t positives = 0;
  for (const auto l : labels) positives += l ? 1 : 0;
  if (positives == 0) return std::nullopt;

  auto before = [&](std::size_t j, std::size_t i) {
    return scores[j] > scores[i] || (scores[j] == scores[i] && j < i);
  };
  // precision_at[r] holds the precision of the positive ranked r-th (0-based).
  std::vector<double> precision_at(n, 0.0);
  std::vector<bool> is_hit(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    if (!labels[i]) continue;
    std::size_t rank = 1;
    std::size_t hits = 1;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i || !before(j, i)) continue;
      ++rank;
      if (labels[j]) ++hits;
    }
    precision_at[rank - 1] = static_cast<double>(hits) / static_cast<double>(rank);
    is_hit[rank - 1] = true;
  }
  double sum = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (is_hit[r]) sum += precision_at[r];
  }
  return sum / static_cast<double>(positives);
}

}  // namespace piaa
