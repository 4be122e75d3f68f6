#include <gtest/gtest.h>

#include <algorithm>

#include "adaptkit/errors.hpp"
#include "adaptkit/rng.hpp"
#include "adaptkit/tasks.hpp"
#include "oracles.hpp"

using namespace adaptkit;

namespace {

Tensor column(std::initializer_list<float> v) { return Tensor({v.size(), 1}, std::vector<float>(v)); }

TaskNet tiny_seg(std::uint64_t seed) {
  Rng rng(seed);
  TaskNet net = init_segmentation_net({4, kNumClasses}, 8, 8, rng);
  net.freeze();
  return net;
}

}  // namespace

TEST(Miou, HandcraftedTwoClass) {
  const std::vector<std::uint8_t> pred{0, 0, 1, 1}, gt{0, 1, 1, 1};
  // class 0: 1/2, class 1: 2/3
  EXPECT_DOUBLE_EQ(miou(pred, gt, 2), (0.5 + 2.0 / 3.0) / 2.0);
}

TEST(Miou, ClassesAbsentFromTruthAreSkipped) {
  const std::vector<std::uint8_t> pred{0, 2}, gt{0, 0};
  EXPECT_DOUBLE_EQ(miou(pred, gt, 3), 0.5);
}

TEST(Miou, PerfectPredictionIsOne) {
  const std::vector<std::uint8_t> m{0, 1, 2, 3, 4, 4, 1};
  EXPECT_EQ(miou(m, m, kNumClasses), 1.0);
}

TEST(Miou, MatchesCountingOracleExactly) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 50 + rng.below(200);
    std::vector<std::uint8_t> pred(n), gt(n);
    std::vector<int> pi(n), gi(n);
    for (std::size_t i = 0; i < n; ++i) {
      pred[i] = static_cast<std::uint8_t>(rng.below(kNumClasses));
      gt[i] = static_cast<std::uint8_t>(rng.below(kNumClasses));
      pi[i] = pred[i];
      gi[i] = gt[i];
    }
    EXPECT_EQ(miou(pred, gt, kNumClasses), oracle::miou_by_counting(pi, gi, kNumClasses));
  }
}

TEST(Miou, OutOfRangeAndSizeMismatchRejected) {
  const std::vector<std::uint8_t> a{0, 7}, b{0, 1}, c{0};
  EXPECT_THROW(miou(a, b, kNumClasses), ContractViolation);
  EXPECT_THROW(miou(b, c, kNumClasses), DimensionError);
}

TEST(TrapezoidAuc, ThreePointCurve) {
  const std::vector<PrPoint> curve{{0, 1.0, 0.0}, {1, 1.0, 0.5}, {2, 0.5, 1.0}};
  EXPECT_DOUBLE_EQ(trapezoid_auc(curve), 0.5 + 0.5 * 0.75);
}

TEST(Retrieval, HandcraftedCurve) {
  // DB places 0, 1, 2 at 0, 10, 20. Nearest matches: q0 → db0 at 1 (right),
  // q1 → db2 at 3 (wrong), q2 → db2 at 2 (right).
  const std::vector<int> dbp{0, 1, 2}, qp{0, 1, 2};
  const RetrievalResult r = evaluate_retrieval(column({1, 17, 22}), qp, column({0, 10, 20}), dbp);
  ASSERT_EQ(r.curve.size(), 4u);
  EXPECT_EQ(r.curve[0].precision, 1.0);
  EXPECT_EQ(r.curve[0].recall, 0.0);
  EXPECT_DOUBLE_EQ(r.curve[1].recall, 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.curve[2].recall, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.curve[3].precision, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.auc, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.top1, 2.0 / 3.0);
}

TEST(Retrieval, TiedDistancesEnterTogether) {
  // Both queries sit at distance 2 from their nearest entry; one is right.
  const std::vector<int> dbp{0, 1}, qp{0, 0};
  const RetrievalResult r = evaluate_retrieval(column({2, 8}), qp, column({0, 10}), dbp);
  ASSERT_EQ(r.curve.size(), 2u);
  EXPECT_DOUBLE_EQ(r.curve[1].precision, 0.5);
  EXPECT_DOUBLE_EQ(r.curve[1].recall, 0.5);
  EXPECT_DOUBLE_EQ(r.auc, 0.375);
}

TEST(Retrieval, QueriesWithoutDatabasePlaceDoNotCountTowardRecall) {
  const std::vector<int> dbp{0}, qp{0, 9};
  const RetrievalResult r = evaluate_retrieval(column({0, 5}), qp, column({0}), dbp);
  EXPECT_DOUBLE_EQ(r.curve.back().recall, 1.0);
  EXPECT_DOUBLE_EQ(r.curve.back().precision, 0.5);
}

TEST(Retrieval, SelfMatchHasUnitAuc) {
  Rng rng(3);
  const Tensor d = oracle::random_tensor({32, 8}, rng);
  std::vector<int> places(32);
  for (int i = 0; i < 32; ++i) places[static_cast<std::size_t>(i)] = i;
  const RetrievalResult r = evaluate_retrieval(d, places, d, places);
  EXPECT_DOUBLE_EQ(r.auc, 1.0);
  EXPECT_DOUBLE_EQ(r.top1, 1.0);
}

TEST(Retrieval, RandomDescriptorsScoreLow) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    std::vector<int> places(32);
    for (int i = 0; i < 32; ++i) places[static_cast<std::size_t>(i)] = i;
    const RetrievalResult r =
        evaluate_retrieval(oracle::random_tensor({32, 16}, rng), places, oracle::random_tensor({32, 16}, rng), places);
    EXPECT_LT(r.auc, 0.2) << "seed " << seed;
  }
}

TEST(Retrieval, AucMatchesCountingOracleExactly) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t q = 10 + rng.below(30), m = 5 + rng.below(10);
    std::vector<int> qp(q), dbp(m);
    for (auto& p : qp) p = static_cast<int>(rng.below(8));
    for (auto& p : dbp) p = static_cast<int>(rng.below(8));
    // Coarse values force ties.
    Tensor qd({q, 2}), dd({m, 2});
    for (auto& v : qd.data()) v = static_cast<float>(rng.below(5));
    for (auto& v : dd.data()) v = static_cast<float>(rng.below(5));
    const RetrievalResult r = evaluate_retrieval(qd, qp, dd, dbp);
    std::size_t positives = 0;
    for (int p : qp) positives += std::find(dbp.begin(), dbp.end(), p) != dbp.end();
    if (positives == 0) continue;
    EXPECT_EQ(r.auc, oracle::auc_by_counting(r, positives)) << "trial " << trial;
  }
}

TEST(TaskNet, FrozenHashCatchesAnyChange) {
  TaskNet net = tiny_seg(1);
  EXPECT_NO_THROW(net.verify_frozen());
  net.params.begin()->value[0] += 1e-6f;
  EXPECT_THROW(net.verify_frozen(), FrozenTaskViolation);
  TaskNet fresh;
  EXPECT_THROW(fresh.verify_frozen(), FrozenTaskViolation);
}

TEST(TaskNet, ContainerRoundTrip) {
  const TaskNet net = tiny_seg(2);
  Container c;
  add_task_net(c, net, "seg/");
  const TaskNet back = load_task_net(Container::decode(c.encode()), "seg/");
  EXPECT_TRUE(back.params.bit_equal(net.params));
  EXPECT_EQ(back.frozen_hash, net.frozen_hash);
  EXPECT_EQ(back.arch, net.arch);
}

TEST(TaskNet, TamperedHashRejectedOnLoad) {
  const TaskNet net = tiny_seg(3);
  Container c;
  add_task_net(c, net, "seg/");
  c.attributes()["seg/task"]["frozen_hash"] = "12345";
  EXPECT_THROW(load_task_net(c, "seg/"), CorruptCheckpointError);
}

TEST(TaskNet, SegmentationOutputShape) {
  const TaskNet net = tiny_seg(4);
  Rng rng(9);
  const auto labels = segment(net, oracle::random_tensor({3, 3, 8, 8}, rng, 0.0, 1.0));
  ASSERT_EQ(labels.size(), 3u * 64u);
  for (auto l : labels) EXPECT_LT(l, kNumClasses);
}

TEST(TaskNet, RetrievalDescriptorsAreUnitNorm) {
  Rng rng(6);
  TaskNet net = init_retrieval_net({}, 48, 48, rng);
  net.freeze();
  const Tensor d = describe(net, oracle::random_tensor({4, 3, 48, 48}, rng, 0.0, 1.0));
  ASSERT_EQ(d.dim(0), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < d.dim(1); ++k) s += d[i * d.dim(1) + k] * d[i * d.dim(1) + k];
    EXPECT_NEAR(s, 1.0, 1e-5);
  }
}

TEST(PseudoGroundTruth, RejectsNonReferenceSamples) {
  WorldConfig w{16, 16, 4, 7, 1};
  const auto route = default_route(w);
  const Splits s = build_split(w, route, find_condition("night"), {8, 4, 4}, {});
  Rng rng(1);
  FrozenTasks tasks{init_segmentation_net({4, kNumClasses}, 16, 16, rng), init_retrieval_net({}, 16, 16, rng)};
  tasks.segmentation.freeze();
  tasks.retrieval.freeze();
  EXPECT_THROW(compute_pseudo_gt(s.val, tasks), ContractViolation);
  const Splits ref = build_split(w, route, find_condition("reference"), {8, 4, 4}, {});
  const PseudoGroundTruth gt = compute_pseudo_gt(ref.val, tasks);
  EXPECT_EQ(gt.size(), 4u);
  EXPECT_EQ(gt.labels, segment(tasks.segmentation, ref.val.images));
  EXPECT_EQ(gt.jitter_seeds, ref.val.jitter_seeds);
}

TEST(Training, SegmentationTargetIsEnforced) {
  WorldConfig w{16, 16, 4, 7, 1};
  const auto route = default_route(w);
  const Splits ref = build_split(w, route, find_condition("reference"), {16, 8, 8}, {});
  TaskTrainConfig cfg{1, 8, 2e-3f, 1, 1.01};
  EXPECT_THROW(train_segmentation(ref.train, ref.val, {4, kNumClasses}, cfg), ConfigError);
  cfg.target = 0.0;
  const TaskNet net = train_segmentation(ref.train, ref.val, {4, kNumClasses}, cfg);
  EXPECT_TRUE(net.frozen);
  EXPECT_NO_THROW(net.verify_frozen());
}
