#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "adaptkit/container.hpp"
#include "adaptkit/errors.hpp"
#include "adaptkit/rng.hpp"

using namespace adaptkit;

namespace {

ParamSet random_params(std::uint64_t seed) {
  Rng rng(seed);
  ParamSet p;
  p.add("conv.w", he_normal({4, 3, 3, 3}, 27, rng));
  p.add("conv.b", Tensor({4}, 0.25f));
  p.add("fc.w", he_normal({7, 5}, 7, rng));
  return p;
}

std::filesystem::path temp_file(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "adaptkit_container_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& b) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

}  // namespace

TEST(Container, RoundTripIsBitExact) {
  const ParamSet params = random_params(3);
  Container c;
  c.add_params(params, "model/");
  c.attributes()["arch"] = {{"width", 16}};
  const auto path = temp_file("roundtrip.adpt");
  save_container(path, c);
  const Container back = load_container(path);
  EXPECT_TRUE(back.params("model/").bit_equal(params));
  EXPECT_EQ(back.attributes()["arch"]["width"], 16);
  EXPECT_EQ(back.encode(), c.encode());
}

TEST(Container, SpecialFloatBitsSurvive) {
  Container c;
  c.add("t", Tensor({4}, std::vector<float>{-0.0f, 1e-45f, 3.4e38f, -1.5f}));
  const Container back = Container::decode(c.encode());
  EXPECT_TRUE(back.get("t").bit_equal(c.get("t")));
}

TEST(Container, HeaderIsLittleEndian) {
  Container c;
  c.add("x", Tensor({1}, 1.0f));
  const auto bytes = c.encode();
  ASSERT_GE(bytes.size(), 16u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "ADPT");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5] | bytes[6] | bytes[7], 0);
  // 1.0f = 0x3F800000, stored LE in the final four bytes.
  const std::vector<std::uint8_t> tail(bytes.end() - 4, bytes.end());
  EXPECT_EQ(tail, (std::vector<std::uint8_t>{0x00, 0x00, 0x80, 0x3F}));
}

TEST(Container, FlippedBlobByteIsRejected) {
  Container c;
  c.add_params(random_params(5), "");
  auto bytes = c.encode();
  bytes[bytes.size() - 7] ^= 0x10;
  EXPECT_THROW(Container::decode(bytes), CorruptCheckpointError);

  const auto path = temp_file("flipped.adpt");
  save_container(path, c);
  auto on_disk = read_bytes(path);
  on_disk.back() ^= 0x01;
  write_bytes(path, on_disk);
  EXPECT_THROW(load_container(path), CorruptCheckpointError);
}

TEST(Container, WrongMagicOrVersionIsRejected) {
  Container c;
  c.add("x", Tensor({2}, 1.0f));
  auto bad_magic = c.encode();
  bad_magic[0] = 'X';
  EXPECT_THROW(Container::decode(bad_magic), CorruptCheckpointError);
  auto bad_version = c.encode();
  bad_version[4] = 9;
  EXPECT_THROW(Container::decode(bad_version), CorruptCheckpointError);
  auto truncated = c.encode();
  truncated.resize(truncated.size() - 2);
  EXPECT_THROW(Container::decode(truncated), CorruptCheckpointError);
  EXPECT_THROW(Container::decode(std::vector<std::uint8_t>{'A', 'D'}), CorruptCheckpointError);
}

TEST(Container, MissingTensorAndDuplicates) {
  Container c;
  c.add("a", Tensor({1}, 0.0f));
  EXPECT_THROW(c.add("a", Tensor({1}, 1.0f)), ContractViolation);
  EXPECT_THROW(c.get("b"), NotFoundError);
  EXPECT_THROW(load_container(temp_file("does_not_exist.adpt")), NotFoundError);
}

TEST(Container, AtomicWriteLeavesNoTempFile) {
  const auto path = temp_file("atomic.adpt");
  Container c;
  c.add("a", Tensor({3}, 2.0f));
  save_container(path, c);
  auto tmp = path;
  tmp += ".tmp";
  EXPECT_TRUE(std::filesystem::exists(path));
  EXPECT_FALSE(std::filesystem::exists(tmp));
}

TEST(Container, FnvKnownVectors) {
  EXPECT_EQ(fnv1a64({}), 0xCBF29CE484222325ULL);
  const std::uint8_t a[] = {'a'};
  EXPECT_EQ(fnv1a64(a), 0xAF63DC4C8601EC8CULL);
}
