#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "piaa/error.hpp"
#include "piaa/eval.hpp"
#include "piaa/reports.hpp"
#include "piaa/synth.hpp"
#include "test_support.hpp"

using namespace piaa;

namespace {

double worst_case_ap(std::size_t n, std::size_t p) {
  double s = 0.0;
  for (std::size_t k = 1; k <= p; ++k) s += static_cast<double>(k) / static_cast<double>(n - p + k);
  return s / static_cast<double>(p);
}

SynthData small_scale_data(std::uint64_t seed) {
  SynthConfig cfg;
  cfg.num_classes = 5;
  cfg.dim = 16;
  cfg.num_images = 150;
  cfg.patches_per_image = 20;
  cfg.small_object_classes = {3, 4};
  cfg.small_object_fraction = 0.05;
  cfg.max_labels_per_image = 3;
  cfg.gap_angle_deg = 30.0;
  cfg.seed = seed;
  return generate(make_spec(cfg));
}

}  // namespace

TEST_CASE("positives ranked first and third of three") {
  const std::vector<double> s{0.9, 0.8, 0.7};
  const std::vector<std::uint8_t> l{1, 0, 1};
  const auto ap = average_precision(s, l);
  REQUIRE(ap.has_value());
  CHECK(std::abs(*ap - 0.833333) <= 1e-6);
  CHECK(std::abs(*ap - 5.0 / 6.0) <= 1e-15);
}

TEST_CASE("trivial rankings") {
  const std::vector<double> s{0.9, 0.8, 0.1, 0.0};
  CHECK(*average_precision(s, std::vector<std::uint8_t>{1, 1, 0, 0}) == 1.0);
  CHECK(*average_precision(std::vector<double>{0.3}, std::vector<std::uint8_t>{1}) == 1.0);
  CHECK_FALSE(average_precision(s, std::vector<std::uint8_t>{0, 0, 0, 0}).has_value());
  CHECK_THROWS_AS(average_precision(s, std::vector<std::uint8_t>{1, 0}), Error);
  CHECK_THROWS_AS(average_precision(std::vector<double>{NAN}, std::vector<std::uint8_t>{1}), Error);
}

TEST_CASE("ties break by ascending position, or by id when given") {
  const std::vector<double> s{0.5, 0.5};
  CHECK(*average_precision(s, std::vector<std::uint8_t>{0, 1}) == 0.5);
  CHECK(*average_precision(s, std::vector<std::uint8_t>{1, 0}) == 1.0);
  const std::vector<std::string> ids{"b", "a"};
  CHECK(*average_precision(s, std::vector<std::uint8_t>{0, 1}, ids) == 1.0);
}

TEST_CASE("average precision equals the pairwise oracle on random instances") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t n = 1 + rng() % 60;
    std::vector<double> s(n);
    std::vector<std::uint8_t> l(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng() % 7) / 7.0;  // many ties
      l[i] = static_cast<std::uint8_t>(rng() % 3 == 0);
    }
    const auto a = average_precision(s, l);
    const auto o = oracle_ap(s, l);
    REQUIRE(a.has_value() == o.has_value());
    if (a) CHECK(*a == *o);
  }
}

TEST_CASE("evaluate matches the oracle column by column") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  RowMatrixXd scores(50, 5);
  LabelMatrix labels(50, 5);
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    scores.data()[i] = u(rng);
    labels.data()[i] = static_cast<std::uint8_t>(u(rng) < 0.3);
  }
  std::vector<std::string> ids(50);
  for (std::size_t i = 0; i < 50; ++i) ids[i] = std::to_string(i);
  const EvalResult r = evaluate(scores, labels, ids, "abc");
  CHECK(r.config_digest == "abc");
  double sum = 0.0;
  for (Eigen::Index c = 0; c < 5; ++c) {
    std::vector<double> col(50);
    std::vector<std::uint8_t> lab(50);
    for (Eigen::Index i = 0; i < 50; ++i) {
      col[static_cast<std::size_t>(i)] = scores(i, c);
      lab[static_cast<std::size_t>(i)] = labels(i, c);
    }
    CHECK(*r.per_class_ap[static_cast<std::size_t>(c)] == *oracle_ap(col, lab));
    sum += *r.per_class_ap[static_cast<std::size_t>(c)];
  }
  CHECK(r.map == doctest::Approx(sum / 5.0).epsilon(1e-15));
}

TEST_CASE("scores equal to labels give mAP 1; reversed rankings give the worst case") {
  LabelMatrix labels(8, 3);
  labels << 1, 0, 1,
            0, 1, 1,
            1, 0, 0,
            0, 0, 1,
            0, 1, 0,
            1, 0, 0,
            0, 0, 1,
            0, 0, 0;
  const RowMatrixXd perfect = labels.cast<double>();
  std::vector<std::string> ids;
  for (int i = 0; i < 8; ++i) ids.push_back("img" + std::to_string(i));
  CHECK(evaluate(perfect, labels, ids).map == 1.0);

  const RowMatrixXd reversed = (1.0 - perfect.array()).matrix();
  const EvalResult r = evaluate(reversed, labels, ids);
  for (Eigen::Index c = 0; c < 3; ++c) {
    const auto p = static_cast<std::size_t>(labels.col(c).cast<int>().sum());
    CHECK(*r.per_class_ap[static_cast<std::size_t>(c)] == doctest::Approx(worst_case_ap(8, p)).epsilon(1e-14));
  }
}

TEST_CASE("AP ignores strictly increasing transforms and image order") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  RowMatrixXd scores(40, 3);
  LabelMatrix labels(40, 3);
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    scores.data()[i] = std::round(u(rng) * 4.0) / 4.0;  // ties on purpose
    labels.data()[i] = static_cast<std::uint8_t>(u(rng) > 0.5);
  }
  std::vector<std::string> ids(40);
  for (std::size_t i = 0; i < 40; ++i) ids[i] = "id" + std::to_string(1000 - i);
  const EvalResult base = evaluate(scores, labels, ids);

  const RowMatrixXd transformed = scores.array().exp().matrix() * 3.0;
  CHECK(evaluate(transformed, labels, ids).map == base.map);

  std::vector<Eigen::Index> perm(40);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  RowMatrixXd ps(40, 3);
  LabelMatrix pl(40, 3);
  std::vector<std::string> pid(40);
  for (Eigen::Index i = 0; i < 40; ++i) {
    ps.row(i) = scores.row(perm[static_cast<std::size_t>(i)]);
    pl.row(i) = labels.row(perm[static_cast<std::size_t>(i)]);
    pid[static_cast<std::size_t>(i)] = ids[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
  }
  const EvalResult shuffled = evaluate(ps, pl, pid);
  CHECK(shuffled.map == base.map);
  CHECK(shuffled.per_class_ap == base.per_class_ap);
}

TEST_CASE("classes without positives are excluded and listed") {
  LabelMatrix labels(3, 2);
  labels << 1, 0,
            0, 0,
            1, 0;
  const RowMatrixXd s = RowMatrixXd::Random(3, 2);
  const EvalResult r = evaluate(s, labels, {"0", "1", "2"});
  CHECK(r.undefined_classes == std::vector<std::size_t>{1});
  CHECK_FALSE(r.per_class_ap[1].has_value());
  CHECK(r.map == *r.per_class_ap[0]);
  CHECK(r.num_pos == std::vector<std::size_t>{2, 0});
  CHECK_THROWS_AS(evaluate(s, LabelMatrix::Zero(3, 2), {"0", "1", "2"}), Error);
  CHECK_THROWS_AS(evaluate(s, LabelMatrix::Zero(2, 2), {"0", "1"}), Error);
}

TEST_CASE("config digest is stable and sensitive") {
  PipelineConfig a;
  PipelineConfig b;
  CHECK(config_digest(a) == config_digest(b));
  CHECK(config_digest(a).size() == 16);
  b.infer.alpha = 0.8;
  CHECK(config_digest(a) != config_digest(b));
  b = a;
  b.pvcl.bank_capacity = 256;
  CHECK(config_digest(a) != config_digest(b));
  b = a;
  b.infer.secondary_softmax = false;
  CHECK(config_digest(a) != config_digest(b));
}

TEST_CASE("ablation grid, sweeps and breakdown on synthetic data") {
  const SynthData data = small_scale_data(5);
  const Experiment e{&data.set, &data.set, &data.prototypes};
  PipelineConfig cfg;
  cfg.pvcl.bank_capacity = 128;

  const auto rows = ablation_grid(e, cfg);
  REQUIRE(rows.size() == 4);
  CHECK((!rows[0].pvcl && !rows[0].paa));
  CHECK((!rows[1].pvcl && rows[1].paa));
  CHECK((rows[2].pvcl && !rows[2].paa));
  CHECK((rows[3].pvcl && rows[3].paa));
  CHECK(rows[2].result.map > rows[0].result.map);
  CHECK(rows[3].result.map > rows[1].result.map);

  std::vector<double> alphas;
  for (int i = 0; i <= 10; ++i) alphas.push_back(i / 10.0);
  const auto curve = sweep(e, cfg, SweepParam::alpha, alphas);
  REQUIRE(curve.size() == 11);
  PipelineConfig cls_cfg = cfg;
  cls_cfg.infer.mode = InferMode::cls_only;
  const GdaClassifier k = fit_classifier(e, cfg.pvcl);
  const EvalResult cls = evaluate_scorer(e, PatchScorer::gda(k), cls_cfg.infer, "");
  CHECK(curve[0].result.map == cls.map);
  CHECK(curve[0].result.per_class_ap == cls.per_class_ap);
  CHECK(sweep(e, cfg, SweepParam::alpha, alphas)[7].result.map == curve[7].result.map);
  CHECK_THROWS_AS(sweep(e, cfg, SweepParam::alpha, {1.5}), Error);
  CHECK_THROWS_AS(sweep(e, cfg, SweepParam::bank_capacity, {0.0}), Error);

  const auto ks = sweep(e, cfg, SweepParam::bank_capacity, {32, 64});
  CHECK(ks.size() == 2);

  const auto breakdown = scale_breakdown(e, cfg, {"class3", "class4", "class0"}, &k);
  REQUIRE(breakdown.size() == 3);
  CHECK(breakdown[0].class_name == "class3");
  for (int i = 0; i < 2; ++i) CHECK(*breakdown[static_cast<std::size_t>(i)].ap_patch_only > *breakdown[static_cast<std::size_t>(i)].ap_cls_only);
  CHECK_THROWS_WITH_AS(scale_breakdown(e, cfg, {"zebra"}, &k), doctest::Contains("unknown class name"), Error);
}

TEST_CASE("report formats have fixed columns") {
  EvalResult r;
  r.per_class_ap = {0.5, std::nullopt};
  r.num_pos = {2, 0};
  r.undefined_classes = {1};
  r.map = 0.5;
  r.config_digest = "d";
  const std::string csv = eval_csv(r, {"a", "b"});
  CHECK(csv == "class,num_pos,ap\na,2,0.5\nb,0,\nmAP,,0.5\n");
  CHECK(format_double(0.1) == "0.10000000000000001");
}
