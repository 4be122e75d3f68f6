#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <thread>

#include "adaptkit/errors.hpp"
#include "adaptkit/memory.hpp"
#include "adaptkit/rng.hpp"

using namespace adaptkit;
namespace fs = std::filesystem;

namespace {

AdapterRecord make_record(int id, std::vector<float> descriptor, bool with_gan = false) {
  Rng rng(static_cast<std::uint64_t>(id) + 100);
  AdapterRecord r;
  r.id = id;
  r.name = "cond_" + std::to_string(id);
  r.descriptor = std::move(descriptor);
  r.adapter = init_adapter({2, 4, 4, 1, 2}, rng);
  r.adapter.condition_id = id;
  if (with_gan) r.generators = init_gan({2, 4, 1}, {2, 4}, id, static_cast<std::uint64_t>(id));
  return r;
}

std::vector<float> vec128(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(128);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return v;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) { fs::remove_all(path); }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST(Memory, StoreThenQueryByIndexIsBitIdentical) {
  ParameterMemory m;
  const AdapterRecord r = make_record(3, vec128(1), true);
  EXPECT_EQ(m.store(r), 3);
  const RecordPtr back = m.query_by_index(3);
  EXPECT_TRUE(back->adapter.params.bit_equal(r.adapter.params));
  EXPECT_EQ(back->generators->hash(), r.generators->hash());
  EXPECT_EQ(back->descriptor, r.descriptor);
}

TEST(Memory, DuplicateIdRejected) {
  ParameterMemory m;
  m.store(make_record(1, vec128(1)));
  EXPECT_THROW(m.store(make_record(1, vec128(2))), ContractViolation);
  EXPECT_EQ(m.size(), 1u);
}

TEST(Memory, EnumeratesEveryRecordInIdOrder) {
  ParameterMemory m;
  for (int id : {4, 0, 2, 7}) m.store(make_record(id, vec128(static_cast<std::uint64_t>(id))));
  EXPECT_EQ(m.size(), 4u);
  EXPECT_EQ(m.ids(), (std::vector<int>{0, 2, 4, 7}));
  EXPECT_EQ(m.next_id(3), 8);
  EXPECT_EQ(m.next_id(20), 21);
}

TEST(Memory, UnknownIdAndEmptyMemoryAreNotFound) {
  ParameterMemory m;
  EXPECT_THROW(m.query_by_descriptor(vec128(1)), NotFoundError);
  m.store(make_record(0, vec128(1)));
  EXPECT_THROW(m.query_by_index(5), NotFoundError);
}

TEST(Memory, InvalidDescriptorsRejected) {
  ParameterMemory m;
  EXPECT_THROW(m.store(make_record(0, {})), ContractViolation);
  std::vector<float> bad = vec128(1);
  bad[5] = std::numeric_limits<float>::infinity();
  EXPECT_THROW(m.store(make_record(0, bad)), ContractViolation);
  m.store(make_record(0, vec128(1)));
  EXPECT_THROW(m.store(make_record(1, std::vector<float>(64, 0.0f))), ContractViolation);
}

TEST(Memory, ExactDescriptorHasZeroDistance) {
  ParameterMemory m;
  for (int id = 0; id < 5; ++id) m.store(make_record(id, vec128(static_cast<std::uint64_t>(id))));
  const MemoryMatch hit = m.query_by_descriptor(vec128(3));
  EXPECT_EQ(hit.record->id, 3);
  EXPECT_EQ(hit.distance, 0.0);
}

TEST(Memory, HandcraftedNearestNeighbour) {
  ParameterMemory m;
  m.store(make_record(0, {0, 0}));
  m.store(make_record(1, {10, 0}));
  m.store(make_record(2, {0, 10}));
  EXPECT_EQ(m.query_by_descriptor(std::vector<float>{6, 1}).record->id, 1);
  EXPECT_EQ(m.query_by_descriptor(std::vector<float>{1, 6}).record->id, 2);
  const MemoryMatch origin = m.query_by_descriptor(std::vector<float>{3, 4});
  EXPECT_EQ(origin.record->id, 0);
  EXPECT_DOUBLE_EQ(origin.distance, 5.0);
}

TEST(Memory, TiesGoToTheLowestId) {
  ParameterMemory m;
  m.store(make_record(5, {1, 0}));
  m.store(make_record(2, {-1, 0}));
  m.store(make_record(9, {0, 1}));
  EXPECT_EQ(m.query_by_descriptor(std::vector<float>{0, 0}).record->id, 2);
}

TEST(Memory, MatchesLinearScanOracle) {
  ParameterMemory m;
  std::vector<std::vector<float>> stored;
  for (int id = 0; id < 12; ++id) {
    stored.push_back(vec128(static_cast<std::uint64_t>(id) * 7));
    m.store(make_record(id, stored.back()));
  }
  for (std::uint64_t q = 0; q < 50; ++q) {
    const auto d = vec128(1000 + q);
    int best = -1;
    double best_d = 0;
    for (int id = 0; id < 12; ++id) {
      double s = 0;
      for (std::size_t k = 0; k < 128; ++k) {
        const double diff = static_cast<double>(d[k]) - stored[static_cast<std::size_t>(id)][k];
        s += diff * diff;
      }
      if (best < 0 || std::sqrt(s) < best_d) best = id, best_d = std::sqrt(s);
    }
    const MemoryMatch hit = m.query_by_descriptor(d);
    EXPECT_EQ(hit.record->id, best);
    EXPECT_DOUBLE_EQ(hit.distance, best_d);
  }
}

TEST(Memory, FilterRestrictsCandidates) {
  ParameterMemory m;
  m.store(make_record(0, {0, 0}));
  m.store(make_record(1, {10, 10}, true));
  auto has_gan = [](const AdapterRecord& r) { return r.generators.has_value(); };
  EXPECT_EQ(m.query_by_descriptor(std::vector<float>{0, 0}, has_gan).record->id, 1);
  ParameterMemory none;
  none.store(make_record(0, {0, 0}));
  EXPECT_THROW(none.query_by_descriptor(std::vector<float>{0, 0}, has_gan), NotFoundError);
}

TEST(Memory, PersistsAndReopensBitExactly) {
  TempDir dir("adaptkit_memory_test");
  {
    ParameterMemory m(dir.path);
    m.store(make_record(0, vec128(1)));
    AdapterRecord online = make_record(9, vec128(2), true);
    online.provenance = {RecordOrigin::online, 0, 42};
    m.store(online);
  }
  const ParameterMemory back = ParameterMemory::open(dir.path);
  EXPECT_EQ(back.ids(), (std::vector<int>{0, 9}));
  const RecordPtr r = back.query_by_index(9);
  EXPECT_TRUE(r->adapter.params.bit_equal(make_record(9, vec128(2), true).adapter.params));
  EXPECT_EQ(r->provenance.origin, RecordOrigin::online);
  EXPECT_EQ(r->provenance.parent_id, 0);
  EXPECT_EQ(r->provenance.timestamp, 42u);
  EXPECT_EQ(r->descriptor, vec128(2));
  EXPECT_FALSE(back.query_by_index(0)->generators.has_value());
  const std::string manifest = read_text(dir.path / "manifest.json");
  EXPECT_NE(manifest.find(record_file_name(9)), std::string::npos);
}

TEST(Memory, CorruptRecordFileRejectedOnOpen) {
  TempDir dir("adaptkit_memory_corrupt_test");
  {
    ParameterMemory m(dir.path);
    m.store(make_record(0, vec128(1)));
  }
  const fs::path f = dir.path / record_file_name(0);
  std::fstream io(f, std::ios::in | std::ios::out | std::ios::binary);
  io.seekp(static_cast<std::streamoff>(fs::file_size(f) - 3));
  io.put('\x5a');
  io.close();
  EXPECT_THROW(ParameterMemory::open(dir.path), CorruptCheckpointError);
}

TEST(Memory, ReadersRunWhileAWriterPublishes) {
  ParameterMemory m;
  m.store(make_record(0, vec128(0)));
  std::atomic<bool> done{false};
  std::atomic<int> reads{0};
  std::thread reader([&] {
    do {
      const MemoryMatch hit = m.query_by_descriptor(vec128(0));
      EXPECT_EQ(hit.record->id, 0);
      EXPECT_GE(m.size(), 1u);
      ++reads;
    } while (!done);
  });
  for (int id = 1; id < 20; ++id) m.store(make_record(id, vec128(static_cast<std::uint64_t>(id))));
  done = true;
  reader.join();
  EXPECT_EQ(m.size(), 20u);
  EXPECT_GT(reads.load(), 0);
}
