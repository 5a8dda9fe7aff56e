#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "piaa/error.hpp"
#include "piaa/zeroshot.hpp"
#include "test_support.hpp"

using namespace piaa;

namespace {

TextPrototypeSet two_orthogonal() { return piaa::test::make_prototypes(RowMatrixXd::Identity(2, 2)); }

PatchMatrix random_patches(std::mt19937_64& rng, int n, int d) {
  std::normal_distribution<float> g(0.0f, 1.0f);
  PatchMatrix p(n, d);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = g(rng);
  return p;
}

}  // namespace

TEST_CASE("patch aligned with the first of two orthogonal prototypes") {
  PatchMatrix x(1, 2);
  x << 1.0f, 0.0f;
  const ProbMatrix p = text_align_probs(x, two_orthogonal(), 100.0);
  CHECK(p(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(p(0, 1) == doctest::Approx(3.7200759760208356e-44).epsilon(1e-12));
  CHECK(row_argmax(p, 0) == 0);
}

TEST_CASE("zero logit scale gives uniform rows") {
  std::mt19937_64 rng(1);
  const PatchMatrix x = random_patches(rng, 5, 3);
  const auto t = piaa::test::make_prototypes(RowMatrixXd::Identity(3, 3));
  const ProbMatrix p = text_align_probs(x, t, 0.0);
  for (Eigen::Index i = 0; i < p.size(); ++i) CHECK(p.data()[i] == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("permuting prototypes permutes columns identically") {
  std::mt19937_64 rng(2);
  const PatchMatrix x = random_patches(rng, 20, 4);
  RowMatrixXd w(3, 4);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<double>(rng() % 100) - 50.0;
  const auto t = piaa::test::make_prototypes(w);
  RowMatrixXd w_perm(3, 4);
  w_perm.row(0) = w.row(2);
  w_perm.row(1) = w.row(0);
  w_perm.row(2) = w.row(1);
  const ProbMatrix a = text_align_probs(x, t, 30.0);
  const ProbMatrix b = text_align_probs(x, piaa::test::make_prototypes(w_perm), 30.0);
  CHECK((b.col(0) - a.col(2)).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((b.col(1) - a.col(0)).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((b.col(2) - a.col(1)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("probability rows sum to one and rescaling patches changes nothing") {
  std::mt19937_64 rng(3);
  const PatchMatrix x = random_patches(rng, 50, 6);
  RowMatrixXd w(4, 6);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<double>(rng() % 100) - 50.0;
  const auto t = piaa::test::make_prototypes(w);
  const ProbMatrix p = text_align_probs(x, t, 100.0);
  CHECK_NOTHROW(check_prob_matrix(p));
  const PatchMatrix scaled = x * 8.0f;  // power of two: exact in f32
  const ProbMatrix q = text_align_probs(scaled, t, 100.0);
  CHECK((p - q).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("dimension mismatch throws") {
  PatchMatrix x(1, 3);
  x << 1, 0, 0;
  CHECK_THROWS_AS(text_align_probs(x, two_orthogonal(), 100.0), Error);
}

TEST_CASE("entropy reference values") {
  ProbMatrix p(3, 4);
  p << 1, 0, 0, 0,
       0.25, 0.25, 0.25, 0.25,
       0.5, 0.5, 0, 0;
  const EntropyVector h = predictive_entropy(p);
  CHECK(h(0) == 0.0);
  CHECK(h(1) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(h(1) == doctest::Approx(1.386294).epsilon(1e-6));
  CHECK(h(2) == doctest::Approx(0.693147).epsilon(1e-6));
}

TEST_CASE("entropy stays in [0, ln C] and ignores column order") {
  std::mt19937_64 rng(4);
  const PatchMatrix x = random_patches(rng, 200, 5);
  RowMatrixXd w(6, 5);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<double>(rng() % 100) - 50.0;
  const ProbMatrix p = text_align_probs(x, piaa::test::make_prototypes(w), 20.0);
  const EntropyVector h = predictive_entropy(p);
  ProbMatrix reversed = p.rowwise().reverse();
  const EntropyVector h2 = predictive_entropy(reversed);
  for (Eigen::Index i = 0; i < h.size(); ++i) {
    CHECK(h(i) >= 0.0);
    CHECK(h(i) <= std::log(6.0));
    CHECK(std::abs(h(i) - h2(i)) < 1e-12);
  }
}

TEST_CASE("a larger logit scale never increases entropy") {
  std::mt19937_64 rng(5);
  const PatchMatrix x = random_patches(rng, 300, 4);
  RowMatrixXd w(3, 4);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<double>(rng() % 100) - 50.0;
  const auto t = piaa::test::make_prototypes(w);
  EntropyVector prev = predictive_entropy(text_align_probs(x, t, 0.0));
  for (const double s : {0.5, 1.0, 5.0, 20.0, 100.0, 400.0}) {
    const EntropyVector h = predictive_entropy(text_align_probs(x, t, s));
    for (Eigen::Index i = 0; i < h.size(); ++i) CHECK(h(i) <= prev(i) + 1e-12);
    prev = h;
  }
}

TEST_CASE("argmax ties resolve to the lowest class") {
  RowMatrixXd m(2, 3);
  m << 0.4, 0.4, 0.2,
       0.1, 0.3, 0.3;
  CHECK(row_argmax(m, 0) == 0);
  CHECK(row_argmax(m, 1) == 1);
}

TEST_CASE("softmax is shift invariant and overflow safe") {
  RowMatrixXd a(1, 3), b(1, 3);
  a << 1, 2, 3;
  b << 1001, 1002, 1003;
  softmax_rows(a);
  softmax_rows(b);
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(a.sum() == doctest::Approx(1.0));
}
