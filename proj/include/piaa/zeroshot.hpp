#pragma once

// Text-alignment scoring and predictive entropy.

#include <Eigen/Core>

#include "piaa/embedding_store.hpp"

namespace piaa {

// N x C row-stochastic matrix.
using ProbMatrix = RowMatrixXd;
// Per-row Shannon entropy in nats.
using EntropyVector = Eigen::VectorXd;

inline constexpr double kDefaultLogitScale = 100.0;

// In-place max-shifted softmax of every row.
void softmax_rows(RowMatrixXd& logits);
Eigen::VectorXd softmax(const Eigen::VectorXd& logits);

// Row i = softmax(logit_scale * cos(x_i, w_c)). Cosine is taken against the
// actual row norm, so the result does not depend on patch magnitude.
ProbMatrix text_align_probs(const Eigen::Ref<const PatchMatrix>& patches,
                            const TextPrototypeSet& prototypes,
                            double logit_scale = kDefaultLogitScale);

// H_i = -sum_c p_ic log p_ic with 0 log 0 = 0, clamped to [0, ln C].
EntropyVector predictive_entropy(const ProbMatrix& probs);

// Argmax per row; ties resolve to the lowest class index.
Eigen::Index row_argmax(const Eigen::Ref<const RowMatrixXd>& m, Eigen::Index row);

// Throws unless every row is a distribution within `tolerance`.
void check_prob_matrix(const ProbMatrix& probs, double tolerance = 1e-6);

}  // namespace piaa
