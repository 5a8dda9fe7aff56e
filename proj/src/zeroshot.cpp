#include "piaa/zeroshot.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "piaa/error.hpp"
#include "piaa/parallel.hpp"

namespace piaa {
namespace {

constexpr std::size_t kRowBlock = 4096;

}  // namespace

void softmax_rows(RowMatrixXd& logits) {
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    const double peak = row.maxCoeff();
    row = (row.array() - peak).exp().matrix();
    row /= row.sum();
  }
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  const double peak = logits.maxCoeff();
  Eigen::VectorXd out = (logits.array() - peak).exp().matrix();
  return out / out.sum();
}

ProbMatrix text_align_probs(const Eigen::Ref<const PatchMatrix>& patches,
                            const TextPrototypeSet& prototypes, double logit_scale) {
  if (patches.rows() > 0 && patches.cols() != static_cast<Eigen::Index>(prototypes.dim)) {
    throw Error("dimension mismatch: patches have d=" + std::to_string(patches.cols()) +
                ", prototypes have d=" + std::to_string(prototypes.dim));
  }
  if (!(logit_scale >= 0.0) || !std::isfinite(logit_scale)) {
    throw Error("logit_scale must be a non-negative finite number");
  }
  const Eigen::Index n = patches.rows();
  const auto c = static_cast<Eigen::Index>(prototypes.num_classes());
  ProbMatrix probs(n, c);
  const Eigen::MatrixXd protos_t = prototypes.prototypes.transpose();

  parallel_for_blocks(static_cast<std::size_t>(n), kRowBlock, [&](std::size_t b, std::size_t e) {
    const auto rows = static_cast<Eigen::Index>(e - b);
    RowMatrixXd x = patches.middleRows(static_cast<Eigen::Index>(b), rows).cast<double>();
    const Eigen::VectorXd norms = x.rowwise().norm();
    RowMatrixXd logits = x * protos_t;
    for (Eigen::Index r = 0; r < rows; ++r) {
      if (norms(r) == 0.0) throw Error("zero-norm patch in text_align_probs");
      logits.row(r) *= logit_scale / norms(r);
    }
    softmax_rows(logits);
    probs.middleRows(static_cast<Eigen::Index>(b), rows) = logits;
  });
  return probs;
}

EntropyVector predictive_entropy(const ProbMatrix& probs) {
  const double ceiling = probs.cols() > 0 ? std::log(static_cast<double>(probs.cols())) : 0.0;
  EntropyVector h(probs.rows());
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    double acc = 0.0;
    for (Eigen::Index c = 0; c < probs.cols(); ++c) {
      const double p = probs(r, c);
      if (p > 0.0) acc -= p * std::log(p);
    }
    h(r) = std::clamp(acc, 0.0, ceiling);
  }
  return h;
}

Eigen::Index row_argmax(const Eigen::Ref<const RowMatrixXd>& m, Eigen::Index row) {
  Eigen::Index best = 0;
  for (Eigen::Index c = 1; c < m.cols(); ++c) {
    if (m(row, c) > m(row, best)) best = c;
  }
  return best;
}

void check_prob_matrix(const ProbMatrix& probs, double tolerance) {
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    if ((probs.row(r).array() < 0.0).any()) {
      throw Error("probability row " + std::to_string(r) + " has negative entries");
    }
    if (std::abs(probs.row(r).sum() - 1.0) > tolerance) {
      throw Error("probability row " + std::to_string(r) + " does not sum to 1");
    }
  }
}

}  // namespace piaa
