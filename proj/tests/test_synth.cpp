#include <cstring>
#include <random>
#include <set>

#include "doctest.h"
#include "piaa/error.hpp"
#include "piaa/parallel.hpp"
#include "piaa/pvcl.hpp"
#include "piaa/synth.hpp"
#include "piaa/zeroshot.hpp"
#include "test_support.hpp"

using namespace piaa;

namespace {

SynthConfig base_config() {
  SynthConfig cfg;
  cfg.num_classes = 4;
  cfg.dim = 12;
  cfg.num_images = 40;
  cfg.patches_per_image = 10;
  cfg.small_object_classes = {3};
  cfg.max_labels_per_image = 3;
  cfg.seed = 9;
  return cfg;
}

bool same_floats(const PatchMatrix& a, const PatchMatrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<std::size_t>(a.size())) == 0;
}

double argmax_accuracy(const RowMatrixXd& logits, std::size_t cls) {
  std::size_t hit = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) hit += static_cast<std::size_t>(row_argmax(logits, i)) == cls ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(logits.rows());
}

}  // namespace

TEST_CASE("SplitMix64 reference output") {
  SplitMix64 r(0);
  CHECK(r.next() == 0xe220a8397b1dcdafull);
  SplitMix64 u(1);
  for (int i = 0; i < 1000; ++i) {
    const double x = u.uniform();
    CHECK(x >= 0.0);
    CHECK(x < 1.0);
  }
  CHECK(stream_seed(1, 2, 3) != stream_seed(1, 2, 4));
  CHECK(stream_seed(1, 2, 3) != stream_seed(2, 2, 3));
}

TEST_CASE("normal draws have unit moments") {
  SplitMix64 r(42);
  double s = 0.0, s2 = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    s += z;
    s2 += z * z;
  }
  CHECK(std::abs(s / n) < 0.01);
  CHECK(std::abs(s2 / n - 1.0) < 0.01);
}

TEST_CASE("the same spec and seed give bit-identical data") {
  const SynthSpec spec = make_spec(base_config());
  const SynthData a = generate(spec);
  const SynthData b = generate(spec);
  CHECK(same_floats(a.set.patches, b.set.patches));
  CHECK(same_floats(a.set.cls, b.set.cls));
  CHECK(*a.set.labels == *b.set.labels);
  CHECK(a.patch_labels == b.patch_labels);
  CHECK(a.prototypes.prototypes == b.prototypes.prototypes);

  SynthConfig other = base_config();
  other.seed = 10;
  CHECK_FALSE(same_floats(generate(make_spec(other)).set.patches, a.set.patches));
}

TEST_CASE("generation is identical at every thread count") {
  const SynthSpec spec = make_spec(base_config());
  const int before = thread_count();
  set_thread_count(1);
  const SynthData a = generate(spec);
  set_thread_count(3);
  const SynthData b = generate(spec);
  set_thread_count(before);
  CHECK(same_floats(a.set.patches, b.set.patches));
  CHECK(same_floats(a.set.cls, b.set.cls));
  CHECK(*a.set.labels == *b.set.labels);
}

TEST_CASE("config text parsing") {
  const SynthConfig cfg = parse_synth_config(
      "# comment\n"
      "classes = 3\n"
      "dim=8  # trailing\n"
      "small_object_classes = 1, 2\n"
      "rotate_covariance = true\n"
      "class_names = a, b, c\n"
      "gap_angle_deg = 12.5\n");
  CHECK(cfg.num_classes == 3);
  CHECK(cfg.dim == 8);
  CHECK(cfg.small_object_classes == std::vector<std::size_t>{1, 2});
  CHECK(cfg.rotate_covariance);
  CHECK(cfg.class_names == std::vector<std::string>{"a", "b", "c"});
  CHECK(cfg.gap_angle_deg == 12.5);

  CHECK_THROWS_WITH_AS(parse_synth_config("colour = red\n"), doctest::Contains("unknown key"), Error);
  CHECK_THROWS_AS(parse_synth_config("classes\n"), Error);
  CHECK_THROWS_AS(parse_synth_config("classes = -2\n"), Error);
  CHECK_THROWS_AS(parse_synth_config("dim = 4x\n"), Error);
  CHECK_THROWS_AS(parse_synth_config("normalize = maybe\n"), Error);
}

TEST_CASE("invalid specs are rejected") {
  SynthSpec spec = make_spec(base_config());
  SynthSpec bad = spec;
  bad.shared_cov(0, 0) = -1.0;
  CHECK_THROWS_WITH_AS(validate(bad), doctest::Contains("non-SPD covariance"), Error);
  CHECK_THROWS_AS(generate(bad), Error);

  bad = spec;
  bad.shared_cov(0, 1) += 0.5;
  CHECK_THROWS_WITH_AS(validate(bad), doctest::Contains("non-SPD covariance"), Error);

  bad = spec;
  bad.small_object_classes = {0, 1, 2, 3};
  CHECK_THROWS_AS(validate(bad), Error);

  bad = spec;
  bad.patches_per_image = 1;
  bad.max_labels_per_image = 3;
  CHECK_THROWS_AS(validate(bad), Error);

  SynthConfig cfg = base_config();
  cfg.num_classes = 20;
  CHECK_THROWS_AS(make_spec(cfg), Error);
  cfg = base_config();
  cfg.anisotropy = 0.5;
  CHECK_THROWS_AS(make_spec(cfg), Error);
}

TEST_CASE("labels are exactly the classes present among an image's patches") {
  const SynthData data = generate(make_spec(base_config()));
  const auto& s = data.set;
  REQUIRE(s.labels.has_value());
  CHECK_NOTHROW(validate(s));
  for (std::size_t i = 0; i < s.num_images(); ++i) {
    std::set<std::uint32_t> present;
    for (std::size_t j = 0; j < 10; ++j) present.insert(data.patch_labels[i * 10 + j]);
    CHECK(present.size() <= 3);
    for (std::size_t c = 0; c < 4; ++c) {
      CHECK(((*s.labels)(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) == 1) ==
            (present.count(static_cast<std::uint32_t>(c)) == 1));
    }
    // the small-object class covers one patch (10% of 10) when present
    if (present.count(3)) {
      std::size_t n3 = 0;
      for (std::size_t j = 0; j < 10; ++j) n3 += data.patch_labels[i * 10 + j] == 3 ? 1 : 0;
      CHECK(n3 == 1);
    }
  }
}

TEST_CASE("cls is the normalized mean of the raw patches") {
  SynthConfig cfg = base_config();
  cfg.normalize = false;
  const SynthData data = generate(make_spec(cfg));
  const PatchView v(data.set);
  for (std::size_t i = 0; i < data.set.num_images(); ++i) {
    Eigen::VectorXd mean = v.image_patches(i).cast<double>().colwise().sum().transpose();
    mean.normalize();
    const Eigen::VectorXd cls = data.set.cls.row(static_cast<Eigen::Index>(i)).cast<double>().transpose();
    CHECK((cls - mean).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("zero gap makes prototypes the normalized class means") {
  const SynthSpec spec = make_spec(base_config());
  const TextPrototypeSet t = gapped_prototypes(spec);
  for (Eigen::Index c = 0; c < 4; ++c) {
    const Eigen::RowVectorXd m = spec.true_means.row(c).normalized();
    CHECK((t.prototypes.row(c) - m).cwiseAbs().maxCoeff() < 1e-15);
  }
  SynthSpec gapped = spec;
  gapped.gap.angle_deg = 30.0;
  const TextPrototypeSet g = gapped_prototypes(gapped);
  for (Eigen::Index c = 0; c < 4; ++c) {
    const double cosine = g.prototypes.row(c).dot(spec.true_means.row(c).normalized());
    CHECK(cosine == doctest::Approx(std::cos(30.0 * 3.14159265358979323846 / 180.0)).epsilon(1e-12));
  }
}

TEST_CASE("the true-parameter classifier is Bayes-accurate, and ungapped text matches it") {
  SynthConfig cfg;
  cfg.num_classes = 5;
  cfg.dim = 16;
  cfg.num_images = 0;
  cfg.separation = 8.0;
  cfg.seed = 3;
  const SynthSpec spec = make_spec(cfg);
  const GdaClassifier bayes = generate(spec).ground_truth;
  CHECK(bayes.provenance == Provenance::oracle);
  CHECK_NOTHROW(check_invariants(bayes));
  const TextPrototypeSet text = gapped_prototypes(spec);

  for (std::size_t c = 0; c < 5; ++c) {
    const PatchMatrix x = sample_class(spec, c, 500, 500 + c);
    CHECK(argmax_accuracy(bayes.logits(x), c) >= 0.99);
    // Isotropic covariance and equal-norm means: cosine to the means is the
    // Bayes rule, so zero-shot on ungapped prototypes agrees with the oracle.
    CHECK(argmax_accuracy(text_align_probs(x, text, 100.0), c) ==
          doctest::Approx(argmax_accuracy(bayes.logits(x), c)).epsilon(0.02));
  }
}

TEST_CASE("oracle GDA reproduces the hand-worked case") {
  RowMatrixXd x(4, 2);
  x << 1, 1,
       1, -1,
       -1, 1,
       -1, -1;
  const GdaClassifier k = oracle_gda(x, {0, 0, 1, 1}, 2);
  CHECK(std::abs(k.precision(0, 0) - 2.0) <= 1e-12);
  CHECK(std::abs(k.precision(1, 1) - 0.5) <= 1e-12);
  CHECK(std::abs(k.precision(0, 1)) <= 1e-12);
  CHECK(std::abs(k.weights(0, 0) - 2.0) <= 1e-12);
  CHECK(std::abs(k.weights(1, 0) + 2.0) <= 1e-12);
  CHECK(std::abs(k.weights(0, 1)) <= 1e-12);
  CHECK(std::abs(k.biases(0) + 1.0) <= 1e-12);
  CHECK(std::abs(k.biases(1) + 1.0) <= 1e-12);

  const GdaClassifier w = oracle_gda(x, {0, 0, 1, 1}, 2, {0.5, 0.5, 0.5, 0.5});
  CHECK((w.weights - k.weights).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK_THROWS_AS(oracle_gda(x, {0, 0, 0, 0}, 2), Error);
}

TEST_CASE("oracle GDA on a single class") {
  RowMatrixXd x(3, 2);
  x << 1, 0,
       2, 0,
       3, 1;
  const GdaClassifier k = oracle_gda(x, {0, 0, 0}, 1);
  CHECK(k.num_classes() == 1);
  CHECK(k.prototypes(0, 0) == doctest::Approx(2.0));
  CHECK(k.prototypes(0, 1) == doctest::Approx(1.0 / 3.0));
  CHECK_NOTHROW(check_invariants(k));
}

TEST_CASE("oracle AP hand cases") {
  CHECK(*oracle_ap(std::vector<double>{0.9, 0.8, 0.7}, std::vector<std::uint8_t>{1, 0, 1}) ==
        doctest::Approx(5.0 / 6.0).epsilon(1e-15));
  CHECK(*oracle_ap(std::vector<double>{0.1, 0.2}, std::vector<std::uint8_t>{1, 0}) == 0.5);
  CHECK(*oracle_ap(std::vector<double>{0.5, 0.5}, std::vector<std::uint8_t>{0, 1}) == 0.5);
  CHECK_FALSE(oracle_ap(std::vector<double>{0.1}, std::vector<std::uint8_t>{0}).has_value());
}

TEST_CASE("changing labels after generation never changes the features") {
  const SynthData a = generate(make_spec(base_config()));
  SynthData b = a;
  b.set.labels->setZero();
  CHECK(same_floats(a.set.patches, b.set.patches));
  // the fitted classifier does not read labels
  const GdaClassifier ka = run_pvcl(PatchView(a.set), a.prototypes, PvclOptions{}).classifier;
  const GdaClassifier kb = run_pvcl(PatchView(b.set), b.prototypes, PvclOptions{}).classifier;
  CHECK(ka.weights == kb.weights);
  CHECK(ka.biases == kb.biases);
}

TEST_CASE("background patches carry no label") {
  SynthConfig cfg = base_config();
  cfg.background_fraction = 0.3;
  const SynthData data = generate(make_spec(cfg));
  std::size_t background = 0;
  for (std::size_t i = 0; i < data.set.num_images(); ++i) {
    std::size_t here = 0;
    std::set<std::uint32_t> present;
    for (std::size_t j = 0; j < 10; ++j) {
      const auto k = data.patch_labels[i * 10 + j];
      if (k == 4) {
        ++here;
      } else {
        present.insert(k);
      }
    }
    CHECK(here == 3);
    background += here;
    for (std::size_t c = 0; c < 4; ++c) {
      CHECK(((*data.set.labels)(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) == 1) ==
            (present.count(static_cast<std::uint32_t>(c)) == 1));
    }
  }
  CHECK(background == 120);
  cfg.background_fraction = 1.0;
  CHECK_THROWS_AS(make_spec(cfg), Error);
  CHECK(parse_synth_config("background_fraction = 0.25\n").background_fraction == 0.25);
}
