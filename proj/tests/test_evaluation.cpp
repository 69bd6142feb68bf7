#include <gtest/gtest.h>

#include <random>

#include "ap_oracle.hpp"
#include "semaug/errors.hpp"
#include "semaug/evaluation.hpp"

using namespace semaug;

TEST(AveragePrecision, HandCase) {
  // TP .9, FP .8, TP .7 against two ground truths: (1/2)(1) + (1/2)(2/3).
  const Real ap = average_precision({{0.9, true}, {0.8, false}, {0.7, true}}, 2);
  EXPECT_NEAR(ap, 0.8333333333333334, 1e-9);
}

TEST(AveragePrecision, EdgeCases) {
  EXPECT_EQ(average_precision({}, 0), 0.0);
  EXPECT_EQ(average_precision({{0.5, false}}, 0), 0.0);
  EXPECT_EQ(average_precision({}, 3), 0.0);
  EXPECT_DOUBLE_EQ(average_precision({{0.2, true}, {0.9, true}}, 2), 1.0);
  // Order of input does not matter when scores are distinct.
  EXPECT_DOUBLE_EQ(average_precision({{0.7, true}, {0.8, false}, {0.9, true}}, 2),
                   average_precision({{0.9, true}, {0.8, false}, {0.7, true}}, 2));
}

TEST(AveragePrecision, MonotoneInExtraTruePositive) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<Real> u(0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<ScoredFlag> flags;
    std::size_t tps = 0;
    for (int i = 0; i < 8; ++i) {
      flags.push_back({u(rng), u(rng) < 0.5});
      tps += flags.back().true_positive;
    }
    const std::size_t n_gt = tps + 2;
    const Real base = average_precision(flags, n_gt);
    EXPECT_GE(base, 0);
    EXPECT_LE(base, 1);
    flags.push_back({2.0, true});  // best-ranked extra hit
    EXPECT_GE(average_precision(flags, n_gt), base);
  }
}

TEST(Matching, StrictThresholdAndSingleUse) {
  const Box gt{0, 0, 10, 10};
  // IoU exactly 0.5: [0,0,10,10] vs [0,0,10,20] -> 100 / 200.
  EXPECT_FALSE(match_detections({Box{0, 0, 10, 20}}, {gt}, 0.5)[0]);
  EXPECT_TRUE(match_detections({Box{0, 0, 10, 20}}, {gt}, 0.49)[0]);
  const auto tp = match_detections({gt, gt}, {gt}, 0.5);
  EXPECT_TRUE(tp[0]);
  EXPECT_FALSE(tp[1]);
  EXPECT_TRUE(match_detections({}, {gt}, 0.5).empty());
  EXPECT_FALSE(match_detections({gt}, {}, 0.5)[0]);
}

TEST(EvaluateDetections, MatchesBruteForceOnRandomInstances) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto inst = oracle::random_instance(seed, 3);
    const DomainResult r = evaluate_detections(inst.detections, inst.dataset, 0.5);
    const auto expected = oracle::brute_force_ap(inst.detections, inst.dataset, 0.5);
    ASSERT_EQ(r.ap.size(), expected.ap.size());
    for (std::size_t k = 0; k < r.ap.size(); ++k) EXPECT_NEAR(r.ap[k], expected.ap[k], 1e-9) << "seed " << seed;
    EXPECT_NEAR(r.map, expected.map, 1e-9) << "seed " << seed;
  }
}

TEST(EvaluateDetections, AbsentClassesAreExcludedFromMean) {
  Dataset ds;
  ds.class_names = {"a", "b", "c"};
  SceneSample s;
  s.domain = "clear";
  s.annotations = {{Box{0, 0, 10, 10}, 1}, {Box{20, 20, 30, 30}, 2}};
  ds.samples.push_back(s);
  // Perfect on class 1, nothing for class 2, a stray class 3 detection.
  std::vector<std::vector<Detection>> dets{{{Box{0, 0, 10, 10}, 1, 0.9}, {Box{40, 40, 50, 50}, 3, 0.8}}};
  const DomainResult r = evaluate_detections(dets, ds, 0.5);
  EXPECT_EQ(r.gt_per_class, (std::vector<std::size_t>{1, 1, 0}));
  EXPECT_DOUBLE_EQ(r.ap[0], 1.0);
  EXPECT_DOUBLE_EQ(r.ap[1], 0.0);
  EXPECT_DOUBLE_EQ(r.map, 0.5);
  EXPECT_EQ(r.domain, "clear");
}

TEST(EvaluateDetections, RejectsMismatchedInput) {
  Dataset ds;
  ds.class_names = {"a"};
  EXPECT_THROW(evaluate_detections({}, ds, 0.5), InvalidInput);
  ds.samples.emplace_back();
  EXPECT_THROW(evaluate_detections({{}, {}}, ds, 0.5), InvalidInput);
}

TEST(EvalReport, MarkdownShape) {
  EvalReport rep;
  rep.class_names = {"circle", "square"};
  DomainResult d;
  d.domain = "fog";
  d.ap = {0.5, 0.25};
  d.map = 0.375;
  rep.domains.push_back(d);
  EXPECT_EQ(rep.markdown(), "| Domain | circle | square | mAP |\n|---|---|---|---|\n| fog | 50.0 | 25.0 | 37.5 |\n");
}
