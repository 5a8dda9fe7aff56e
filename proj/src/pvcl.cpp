#include "piaa/pvcl.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>

#include <Eigen/Cholesky>

#include "piaa/error.hpp"
#include "piaa/parallel.hpp"

namespace piaa {
namespace {

constexpr std::size_t kRowBlock = 2048;

// precision = scale * bracket^-1, kept factored for the weight solves.
struct PrecisionFactor {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double scale = 1.0;
};

PrecisionFactor factor_precision(const CovarianceEstimate& cov, const ShrinkageOptions& options) {
  const auto d = cov.sigma_hat.rows();
  Eigen::MatrixXd bracket;
  PrecisionFactor f;
  if (options.shrink) {
    const double n_minus_1 = cov.n > 0 ? static_cast<double>(cov.n - 1) : 0.0;
    const double ridge = std::max(cov.trace, options.floor);
    bracket = n_minus_1 * cov.sigma_hat;
    bracket.diagonal().array() += ridge;
    f.scale = static_cast<double>(d);
  } else {
    bracket = cov.trace < options.floor
                  ? Eigen::MatrixXd(options.floor * Eigen::MatrixXd::Identity(d, d))
                  : cov.sigma_hat;
    f.scale = 1.0;
  }
  if (!bracket.allFinite()) throw Error("non-finite covariance estimate");
  f.llt.compute(bracket);
  if (f.llt.info() != Eigen::Success) {
    throw Error("covariance is not positive definite; enable shrinkage");
  }
  return f;
}

Eigen::MatrixXd explicit_precision(const PrecisionFactor& f, Eigen::Index d) {
  Eigen::MatrixXd p = f.scale * f.llt.solve(Eigen::MatrixXd::Identity(d, d));
  const Eigen::MatrixXd sym = 0.5 * (p + p.transpose());
  return sym;
}

double mean_member_norm(const PatchView& view, const MemoryBank& bank) {
  double acc = 0.0;
  std::size_t n = 0;
  for (const auto& members : bank.members) {
    for (const auto i : members) {
      acc += view.patches().row(static_cast<Eigen::Index>(i)).cast<double>().norm();
      ++n;
    }
  }
  return n > 0 ? acc / static_cast<double>(n) : 1.0;
}

void check_bank_indices(const PatchView& view, const MemoryBank& bank) {
  for (const auto& members : bank.members) {
    for (const auto i : members) {
      if (i >= view.num_patches()) throw Error("bank member index out of range");
    }
  }
}

GdaClassifier estimate(const PatchView& view, const MemoryBank& bank,
                       const std::vector<std::vector<double>>& weights,
                       const TextPrototypeSet& prototypes, const ShrinkageOptions& options,
                       Provenance provenance) {
  const std::size_t num_classes = bank.num_classes();
  if (prototypes.num_classes() != num_classes) {
    throw Error("bank and prototypes disagree on the number of classes");
  }
  if (prototypes.dim != view.dim()) throw Error("dimension mismatch between prototypes and patches");
  check_bank_indices(view, bank);

  RowMatrixXd means = bank_means(view, bank, weights);
  const CovarianceEstimate cov = pooled_covariance(view, bank, means, options.denominator);
  const PrecisionFactor factor = factor_precision(cov, options);

  GdaClassifier out;
  out.provenance = provenance;
  const double fallback_norm = mean_member_norm(view, bank);
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (bank.members[c].empty()) {
      means.row(static_cast<Eigen::Index>(c)) =
          prototypes.prototypes.row(static_cast<Eigen::Index>(c)) * fallback_norm;
      out.fallback_classes.push_back(c);
    }
  }

  const auto d = static_cast<Eigen::Index>(view.dim());
  const Eigen::MatrixXd solved = factor.llt.solve(means.transpose());  // d x C
  out.weights = factor.scale * solved.transpose();
  out.biases.resize(static_cast<Eigen::Index>(num_classes));
  for (Eigen::Index c = 0; c < out.weights.rows(); ++c) {
    out.biases(c) = -0.5 * means.row(c).dot(out.weights.row(c));
  }
  out.prototypes = std::move(means);
  out.precision = explicit_precision(factor, d);
  if (!out.weights.allFinite() || !out.biases.allFinite()) {
    throw Error("non-finite classifier parameters");
  }
  return out;
}

}  // namespace

std::size_t MemoryBank::total() const {
  std::size_t n = 0;
  for (const auto& m : members) n += m.size();
  return n;
}

std::vector<std::size_t> MemoryBank::flatten() const {
  std::vector<std::size_t> all;
  all.reserve(total());
  for (const auto& m : members) all.insert(all.end(), m.begin(), m.end());
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  return all;
}

bool GdaClassifier::is_fallback(std::size_t c) const {
  return std::binary_search(fallback_classes.begin(), fallback_classes.end(), c);
}

RowMatrixXd GdaClassifier::logits(const Eigen::Ref<const PatchMatrix>& patches) const {
  if (patches.rows() > 0 && patches.cols() != weights.cols()) {
    throw Error("dimension mismatch between classifier and patches");
  }
  RowMatrixXd out = patches.cast<double>() * weights.transpose();
  out.rowwise() += biases.transpose();
  return out;
}

Eigen::Index ScoredPatches::row_of(std::size_t patch) const {
  const auto it = std::lower_bound(indices.begin(), indices.end(), patch);
  if (it == indices.end() || *it != patch) {
    throw Error("patch " + std::to_string(patch) + " has no vision score");
  }
  return static_cast<Eigen::Index>(it - indices.begin());
}

MemoryBank bootstrap_banks(const ProbMatrix& probs, const EntropyVector& entropy,
                           std::size_t capacity) {
  if (probs.rows() != entropy.size()) {
    throw Error("probabilities and entropies cover different patch counts");
  }
  using Candidate = std::pair<double, std::size_t>;  // (entropy, index)
  std::vector<std::vector<Candidate>> by_class(static_cast<std::size_t>(probs.cols()));
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const auto c = static_cast<std::size_t>(row_argmax(probs, i));
    by_class[c].emplace_back(entropy(i), static_cast<std::size_t>(i));
  }

  MemoryBank bank;
  bank.stage = BankStage::bootstrap;
  bank.capacity = capacity;
  bank.members.resize(by_class.size());
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& cand = by_class[c];
    const std::size_t keep = std::min(capacity, cand.size());
    // Pair ordering breaks entropy ties by ascending patch index.
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep), cand.end());
    bank.members[c].reserve(keep);
    for (std::size_t j = 0; j < keep; ++j) bank.members[c].push_back(cand[j].second);
  }
  return bank;
}

RowMatrixXd bank_means(const PatchView& view, const MemoryBank& bank,
                       const std::vector<std::vector<double>>& weights) {
  const auto d = static_cast<Eigen::Index>(view.dim());
  RowMatrixXd means = RowMatrixXd::Zero(static_cast<Eigen::Index>(bank.num_classes()), d);
  const bool weighted = !weights.empty();
  if (weighted && weights.size() != bank.num_classes()) {
    throw Error("confidence weights do not match the bank");
  }
  for (std::size_t c = 0; c < bank.num_classes(); ++c) {
    const auto& members = bank.members[c];
    if (members.empty()) continue;
    if (weighted && weights[c].size() != members.size()) {
      throw Error("confidence weights do not match the bank");
    }
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(d);
    double total = 0.0;
    if (weighted) {
      for (std::size_t j = 0; j < members.size(); ++j) {
        const double w = weights[c][j];
        if (!std::isfinite(w) || w < 0.0) throw Error("non-finite or negative confidence weight");
        acc += w * view.patches().row(static_cast<Eigen::Index>(members[j])).cast<double>().transpose();
        total += w;
      }
    }
    if (!weighted || !(total > 0.0)) {
      // All-zero confidences (softmax underflow) degrade to the plain mean.
      acc.setZero();
      for (const auto i : members) {
        acc += view.patches().row(static_cast<Eigen::Index>(i)).cast<double>().transpose();
      }
      total = static_cast<double>(members.size());
    }
    means.row(static_cast<Eigen::Index>(c)) = (acc / total).transpose();
  }
  if (!means.allFinite()) throw Error("non-finite input in bank features");
  return means;
}

CovarianceEstimate pooled_covariance(const PatchView& view, const MemoryBank& bank,
                                     const RowMatrixXd& means,
                                     CovarianceDenominator denominator) {
  const auto d = static_cast<Eigen::Index>(view.dim());
  std::vector<std::pair<std::size_t, std::size_t>> rows;  // (patch, class)
  rows.reserve(bank.total());
  for (std::size_t c = 0; c < bank.num_classes(); ++c) {
    for (const auto i : bank.members[c]) rows.emplace_back(i, c);
  }
  const auto n = static_cast<Eigen::Index>(rows.size());

  RowMatrixXd centered(n, d);
  parallel_for_blocks(rows.size(), kRowBlock, [&](std::size_t b, std::size_t e) {
    for (std::size_t r = b; r < e; ++r) {
      const auto [patch, c] = rows[r];
      centered.row(static_cast<Eigen::Index>(r)) =
          view.patches().row(static_cast<Eigen::Index>(patch)).cast<double>() -
          means.row(static_cast<Eigen::Index>(c));
    }
  });

  Eigen::MatrixXd scatter = Eigen::MatrixXd::Zero(d, d);
  if (n > 0) scatter.selfadjointView<Eigen::Lower>().rankUpdate(centered.transpose());
  Eigen::MatrixXd full = scatter.selfadjointView<Eigen::Lower>();

  double divisor = static_cast<double>(n);
  if (denominator == CovarianceDenominator::unbiased) divisor = static_cast<double>(std::max<Eigen::Index>(n - 1, 1));
  if (n == 0) divisor = 1.0;

  CovarianceEstimate cov;
  cov.sigma_hat = full / divisor;
  cov.n = static_cast<std::size_t>(n);
  cov.trace = cov.sigma_hat.trace();
  return cov;
}

Eigen::MatrixXd shrinkage_precision(const CovarianceEstimate& cov,
                                    const ShrinkageOptions& options) {
  const PrecisionFactor f = factor_precision(cov, options);
  return explicit_precision(f, cov.sigma_hat.rows());
}

GdaClassifier fit_preliminary(const PatchView& view, const MemoryBank& bank,
                              const TextPrototypeSet& prototypes,
                              const ShrinkageOptions& options) {
  if (bank.stage != BankStage::bootstrap) throw Error("fit_preliminary expects a bootstrap bank");
  if (bank.total() == 0) throw Error("no confident patches: every bootstrap bank is empty");
  return estimate(view, bank, {}, prototypes, options, Provenance::preliminary);
}

ProbMatrix vision_scores(const GdaClassifier& classifier, const PatchView& view,
                         const std::vector<std::size_t>& indices) {
  const auto c = static_cast<Eigen::Index>(classifier.num_classes());
  if (classifier.dim() != view.dim()) throw Error("dimension mismatch between classifier and patches");
  for (const auto i : indices) {
    if (i >= view.num_patches()) throw Error("patch index out of range");
  }
  ProbMatrix q(static_cast<Eigen::Index>(indices.size()), c);
  const Eigen::MatrixXd weights_t = classifier.weights.transpose();
  parallel_for_blocks(indices.size(), kRowBlock, [&](std::size_t b, std::size_t e) {
    const auto rows = static_cast<Eigen::Index>(e - b);
    RowMatrixXd x(rows, static_cast<Eigen::Index>(view.dim()));
    for (Eigen::Index r = 0; r < rows; ++r) {
      x.row(r) = view.patches()
                     .row(static_cast<Eigen::Index>(indices[b + static_cast<std::size_t>(r)]))
                     .cast<double>();
    }
    RowMatrixXd logits = x * weights_t;
    logits.rowwise() += classifier.biases.transpose();
    softmax_rows(logits);
    q.middleRows(static_cast<Eigen::Index>(b), rows) = logits;
  });
  return q;
}

MemoryBank purify_banks(const MemoryBank& bank, const ScoredPatches& q) {
  if (bank.stage != BankStage::bootstrap) throw Error("purify_banks expects a bootstrap bank");
  MemoryBank out;
  out.stage = BankStage::purified;
  out.capacity = bank.capacity;
  out.members.resize(bank.num_classes());
  for (std::size_t c = 0; c < bank.num_classes(); ++c) {
    const auto& members = bank.members[c];
    if (members.empty()) continue;
    std::vector<double> v(members.size());
    for (std::size_t j = 0; j < members.size(); ++j) {
      v[j] = q.probs(q.row_of(members[j]), static_cast<Eigen::Index>(c));
    }
    // max_element returns the first maximum, so ties keep the earliest member.
    const auto lo = std::min_element(v.begin(), v.end());
    const auto hi = std::max_element(v.begin(), v.end());
    if (*lo == *hi) {
      out.members[c] = members;
      continue;
    }
    const double n = static_cast<double>(v.size());
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double var = 0.0;
    for (const double x : v) var += (x - mean) * (x - mean);
    const double threshold = mean + std::sqrt(var / n);
    for (std::size_t j = 0; j < members.size(); ++j) {
      if (v[j] >= threshold) out.members[c].push_back(members[j]);
    }
    if (out.members[c].empty()) {
      out.members[c].push_back(members[static_cast<std::size_t>(hi - v.begin())]);
    }
  }
  return out;
}

GdaClassifier fit_final(const PatchView& view, const MemoryBank& bank, const ScoredPatches& q,
                        const TextPrototypeSet& prototypes, const ShrinkageOptions& options) {
  if (bank.stage != BankStage::purified) throw Error("fit_final expects a purified bank");
  if (bank.total() < 2) throw Error("insufficient purified samples (need at least 2)");
  std::vector<std::vector<double>> weights(bank.num_classes());
  for (std::size_t c = 0; c < bank.num_classes(); ++c) {
    for (const auto i : bank.members[c]) {
      const double w = q.probs(q.row_of(i), static_cast<Eigen::Index>(c));
      if (!std::isfinite(w)) throw Error("non-finite confidence score");
      weights[c].push_back(w);
    }
  }
  return estimate(view, bank, weights, prototypes, options, Provenance::final);
}

PvclResult run_pvcl(const PatchView& view, const TextPrototypeSet& prototypes,
                    const PvclOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  if (options.bank_capacity == 0) throw Error("bank capacity K must be positive");

  const ProbMatrix probs = text_align_probs(view.patches(), prototypes, options.logit_scale);
  const EntropyVector entropy = predictive_entropy(probs);

  PvclResult result;
  result.bootstrap = bootstrap_banks(probs, entropy, options.bank_capacity);

  ShrinkageOptions stage1;
  stage1.shrink = options.stage1_shrinkage;
  stage1.denominator = options.denominator;
  result.preliminary = fit_preliminary(view, result.bootstrap, prototypes, stage1);

  ScoredPatches q;
  q.indices = result.bootstrap.flatten();
  q.probs = vision_scores(result.preliminary, view, q.indices);
  result.purified = purify_banks(result.bootstrap, q);

  ShrinkageOptions stage3;
  stage3.denominator = options.denominator;
  result.classifier = fit_final(view, result.purified, q, prototypes, stage3);

  for (const auto& m : result.bootstrap.members) result.report.bootstrap_sizes.push_back(m.size());
  for (const auto& m : result.purified.members) result.report.purified_sizes.push_back(m.size());
  result.report.fallback_classes = result.classifier.fallback_classes;
  result.report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

void check_invariants(const GdaClassifier& classifier, double rel_tol) {
  const auto& p = classifier.precision;
  if (p.rows() != p.cols() || p.rows() != static_cast<Eigen::Index>(classifier.dim())) {
    throw Error("precision shape mismatch");
  }
  if ((p - p.transpose()).cwiseAbs().maxCoeff() > 1e-9) throw Error("precision is not symmetric");
  Eigen::LLT<Eigen::MatrixXd> llt(p);
  if (llt.info() != Eigen::Success) throw Error("precision is not positive definite");
  for (Eigen::Index c = 0; c < classifier.weights.rows(); ++c) {
    const Eigen::VectorXd mu = classifier.prototypes.row(c).transpose();
    const Eigen::VectorXd expected_w = p * mu;
    const double w_scale = std::max(expected_w.cwiseAbs().maxCoeff(), 1e-300);
    if ((classifier.weights.row(c).transpose() - expected_w).cwiseAbs().maxCoeff() >
        rel_tol * w_scale) {
      throw Error("class " + std::to_string(c) + " weights differ from precision * mean");
    }
    const double expected_b = -0.5 * mu.dot(expected_w);
    const double b_scale = std::max(mu.norm() * expected_w.norm(), 1e-300);
    if (std::abs(classifier.biases(c) - expected_b) > rel_tol * b_scale) {
      throw Error("class " + std::to_string(c) + " bias differs from -1/2 mu' P mu");
    }
  }
}

}  // namespace piaa
