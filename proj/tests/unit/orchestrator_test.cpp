#include <gtest/gtest.h>

#include <future>
#include <nlohmann/json.hpp>
#include <sstream>

#include "adaptkit/errors.hpp"
#include "adaptkit/orchestrator.hpp"
#include "adaptkit/rng.hpp"
#include "oracles.hpp"

using namespace adaptkit;

namespace {

Tensor frame(float v) { return Tensor({3, 4, 4}, v); }

// A 16×16 world with two known conditions (reference and dusk) and untrained
// but frozen task nets; big enough to run a complete online episode quickly.
struct World {
  WorldConfig world{16, 16, 4, 7, 1};
  Splits ref, dusk, night;
  FrozenTasks tasks;
  PseudoGroundTruth gt_train, gt_val;
  ConditionClassifier classifier;
  NoveltyCalibration cal;

  World() {
    const auto route = default_route(world);
    const SplitCounts counts{16, 8, 16};
    ref = build_split(world, route, find_condition("reference"), counts, {});
    dusk = build_split(world, route, find_condition("dusk"), counts, {});
    night = build_split(world, route, find_condition("night"), counts, {});
    Rng rng(3);
    tasks.segmentation = init_segmentation_net({4, kNumClasses}, 16, 16, rng);
    tasks.retrieval = init_retrieval_net({}, 16, 16, rng);
    tasks.segmentation.freeze();
    tasks.retrieval.freeze();
    gt_train = compute_pseudo_gt(ref.train, tasks);
    gt_val = compute_pseudo_gt(ref.val, tasks);
    ClassifierArch arch;
    arch.conv1 = 4;
    arch.conv2 = 8;
    arch.conv3 = 8;
    arch.conv4 = 8;
    arch.fc1 = 32;
    const std::vector<Tensor> train{ref.train.images, dusk.train.images}, val{ref.val.images, dusk.val.images};
    classifier = train_classifier(train, val, {"reference", "dusk"}, {10, 8, 0.001, 2}, arch).classifier;
    cal = calibrate_novelty(classifier, val, 4);
  }

  void fill(ParameterMemory& m) const {
    Rng rng(9);
    AdapterRecord r0;
    r0.id = 0;
    r0.name = "reference";
    r0.descriptor = cal.centroids[0];
    r0.adapter = init_adapter({2, 4, 4, 1, 2}, rng);
    m.store(r0);
    AdapterRecord r1;
    r1.id = 1;
    r1.name = "dusk";
    r1.descriptor = cal.centroids[1];
    r1.adapter = init_adapter({2, 4, 4, 1, 2}, rng);
    r1.adapter.condition_id = 2;
    r1.generators = init_gan({2, 4, 1}, {2, 4}, 2, 5);
    m.store(r1);
  }

  OnlineContext context() const { return {classifier, tasks, ref.train, gt_train, ref.val, gt_val}; }

  static OnlineConfig quick() {
    OnlineConfig c;
    c.gan.steps = 4;
    c.gan.pool_size = 2;
    c.adapter = {1, 4, 0.001, 0.9, 0.999, 1, 2, 1};
    c.id_floor = 1;
    return c;
  }
};

const World& w() {
  static const World world;
  return world;
}

}  // namespace

TEST(FrameBuffer, FifoSemantics) {
  FrameBuffer b(3);
  b.push(frame(1));
  EXPECT_EQ(b.size(), 1u);
  for (float v : {2.0f, 3.0f, 4.0f}) b.push(frame(v));
  EXPECT_EQ(b.size(), 3u);
  EXPECT_TRUE(b.full());
  EXPECT_EQ(b.frames()[0][0], 2.0f);  // the first frame is gone
  EXPECT_EQ(b.frames()[2][0], 4.0f);
  const Tensor s = b.stacked();
  EXPECT_EQ(s.shape(), (Shape{3, 3, 4, 4}));
  EXPECT_EQ(s[0], 2.0f);
}

TEST(FrameBuffer, RejectsBadFrames) {
  FrameBuffer b(2);
  EXPECT_THROW(b.push(Tensor({1, 4, 4})), DimensionError);
  b.push(Tensor({1, 3, 4, 4}));
  EXPECT_THROW(b.push(Tensor({3, 5, 5})), DimensionError);
  EXPECT_THROW(FrameBuffer(0), ConfigError);
}

TEST(NoveltyPolicy, StrictInequalityAtTheThreshold) {
  ParameterMemory m;
  AdapterRecord r;
  r.descriptor = {0, 0};
  Rng rng(1);
  r.adapter = init_adapter({2, 4, 4, 1, 2}, rng);
  m.store(r);
  const std::vector<float> d{3, 4};  // distance exactly 5
  EXPECT_FALSE(novelty_from_descriptor(d, m, {5.0, 1}).novel);
  EXPECT_TRUE(novelty_from_descriptor(d, m, {4.999, 1}).novel);
  EXPECT_EQ(novelty_from_descriptor(d, m, {5.0, 1}).distance, 5.0);
  EXPECT_THROW((NoveltyPolicy{0.0, 1}.validate()), ConfigError);
  EXPECT_THROW((NoveltyPolicy{1.0, 1, 0}.validate()), ConfigError);
}

TEST(EventLog, TotallyOrderedJsonLines) {
  EventLog log;
  EXPECT_EQ(log.append(OnlinePhase::monitoring, "a"), 0u);
  EXPECT_EQ(log.append(OnlinePhase::adapting, "b", {{"new_id", 3}}), 1u);
  const auto path = std::filesystem::temp_directory_path() / "adaptkit_events_test.jsonl";
  log.write_jsonl(path);
  std::istringstream in(read_text(path));
  std::string line;
  std::uint64_t expected = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("timestamp").get<std::uint64_t>(), expected++);
  }
  EXPECT_EQ(expected, 2u);
  std::filesystem::remove(path);
}

TEST(Selection, OneRecordPerFrameAndDeterministic) {
  ParameterMemory m;
  w().fill(m);
  for (std::size_t i = 0; i < 4; ++i) {
    const Tensor f = w().dusk.test.images.slice_batch(i);
    const RecordPtr a = select_adapter(w().classifier, m, f);
    const RecordPtr b = select_adapter(w().classifier, m, f);
    EXPECT_EQ(a->id, b->id);
    EXPECT_EQ(a->id, predict(w().classifier, f)[0]);
  }
}

TEST(Novelty, NeedsMinimumFill) {
  ParameterMemory m;
  w().fill(m);
  FrameBuffer b(4);
  b.push(w().ref.test.images.slice_batch(0));
  EXPECT_THROW(detect_novelty(w().classifier, m, b, {w().cal.tau, 4}), ContractViolation);
}

TEST(OnlineEpisode, AddsOneRecordAndLeavesSeedsAlone) {
  ParameterMemory m;
  w().fill(m);
  const auto adapter_hash = m.query_by_index(1)->adapter.params.hash();
  const auto gan_hash = m.query_by_index(1)->generators->hash();
  const Tensor buffer = w().night.test.range(0, 4).images;
  const OnlineOutcome out = run_online_adaptation(buffer, m, w().context(), World::quick(), 7);
  EXPECT_EQ(m.size(), 3u);
  EXPECT_EQ(out.record->id, 2);
  EXPECT_EQ(out.record->provenance.origin, RecordOrigin::online);
  EXPECT_EQ(out.record->provenance.timestamp, 7u);
  EXPECT_EQ(out.gan_parent, 1);
  EXPECT_EQ(m.query_by_index(1)->adapter.params.hash(), adapter_hash);
  EXPECT_EQ(m.query_by_index(1)->generators->hash(), gan_hash);
  EXPECT_NO_THROW(w().tasks.verify());
  // The stored descriptor is this buffer's average, so the same buffer is now known.
  const NoveltyResult again = novelty_from_descriptor(average_descriptor(w().classifier, buffer), m, {w().cal.tau, 1});
  EXPECT_FALSE(again.novel);
  EXPECT_EQ(again.nearest_id, 2);
  EXPECT_EQ(again.distance, 0.0);
}

TEST(OnlineEpisode, FailureStoresNothingAndRollsBack) {
  ParameterMemory m;
  Rng rng(1);
  for (int id : {0, 1}) {  // no generators anywhere: the GAN stage cannot start
    AdapterRecord r;
    r.id = id;
    r.descriptor = w().cal.centroids[static_cast<std::size_t>(id)];
    r.adapter = init_adapter({2, 4, 4, 1, 2}, rng);
    m.store(r);
  }
  Orchestrator orch(w().classifier, m, {w().cal.tau, 4}, 4);
  for (std::size_t i = 0; i < 4; ++i) orch.process(w().night.test.images.slice_batch(i));
  EXPECT_THROW(orch.adapt_online(w().context(), World::quick()), NotFoundError);
  EXPECT_EQ(m.size(), 2u);
  EXPECT_EQ(orch.phase(), OnlinePhase::monitoring);
  EXPECT_EQ(orch.log().events().back().event, "rollback");
}

TEST(Orchestrator, ConfirmedNoveltyRequestsAnEpisode) {
  ParameterMemory m;
  w().fill(m);
  Orchestrator orch(w().classifier, m, {1e-9, 4, 2}, 4);  // tiny τ: everything is novel
  std::vector<bool> requests;
  for (std::size_t i = 0; i < 6; ++i) requests.push_back(orch.process(w().night.test.images.slice_batch(i)).request_episode);
  EXPECT_EQ(requests, (std::vector<bool>{false, false, false, false, true, true}));
}

TEST(Orchestrator, ServesFramesDuringAnEpisode) {
  ParameterMemory m;
  w().fill(m);
  Orchestrator orch(w().classifier, m, {w().cal.tau, 4}, 4);
  for (std::size_t i = 0; i < 4; ++i) orch.process(w().night.test.images.slice_batch(i));
  auto episode = std::async(std::launch::async, [&] { return orch.adapt_online(w().context(), World::quick()); });
  std::size_t served = 0;
  bool rejected_second = false;
  while (episode.wait_for(std::chrono::milliseconds(0)) != std::future_status::ready) {
    const FrameResult f = orch.process(w().ref.test.images.slice_batch(served % 16));
    EXPECT_GE(f.record_id, 0);
    EXPECT_EQ(f.adapted.shape(), (Shape{1, 3, 16, 16}));
    ++served;
    if (!rejected_second && orch.phase() == OnlinePhase::adapting) {
      EXPECT_THROW(orch.adapt_online(w().context(), World::quick()), ContractViolation);
      rejected_second = true;
    }
  }
  const OnlineOutcome out = episode.get();
  EXPECT_EQ(m.size(), 3u);
  EXPECT_EQ(orch.phase(), OnlinePhase::monitoring);
  const auto events = orch.log().events();
  for (std::size_t i = 0; i < events.size(); ++i) EXPECT_EQ(events[i].timestamp, i);
  EXPECT_TRUE(std::any_of(events.begin(), events.end(),
                          [](const OnlineEvent& e) { return e.event == "record_published"; }));
  EXPECT_EQ(out.record->id, 2);
}
