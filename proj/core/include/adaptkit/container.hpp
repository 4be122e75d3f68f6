#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "adaptkit/autograd.hpp"
#include "adaptkit/tensor.hpp"

namespace adaptkit {

/// On-disk tensor checkpoint.
///
/// Layout (all integers little-endian):
///
///   bytes 0..3   magic "ADPT"
///   bytes 4..7   format version, u32
///   bytes 8..15  metadata length L, u64
///   next L bytes UTF-8 JSON metadata
///   remainder    concatenated float32 LE arrays
///
/// The metadata holds {"tensors": [{name, shape, offset, count, fnv1a64}],
/// "attributes": {...}}. `offset` is in bytes from the start of the blob and
/// `fnv1a64` is the 16-hex-digit FNV-1a hash of that tensor's bytes.
class Container {
 public:
  static constexpr std::uint32_t kVersion = 1;

  void add(std::string name, Tensor tensor);
  const Tensor& get(std::string_view name) const;
  bool has(std::string_view name) const;
  const std::vector<std::pair<std::string, Tensor>>& tensors() const noexcept { return tensors_; }

  nlohmann::json& attributes() noexcept { return attributes_; }
  const nlohmann::json& attributes() const noexcept { return attributes_; }

  void add_params(const ParamSet& params, std::string_view prefix);
  /// Parameters stored under `prefix`, in insertion order, prefix stripped.
  ParamSet params(std::string_view prefix) const;

  std::vector<std::uint8_t> encode() const;
  static Container decode(std::span<const std::uint8_t> bytes);

 private:
  std::vector<std::pair<std::string, Tensor>> tensors_;
  nlohmann::json attributes_ = nlohmann::json::object();
};

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) noexcept;

/// Writes to a sibling temp file and renames it into place.
void save_container(const std::filesystem::path& path, const Container& c);
Container load_container(const std::filesystem::path& path);

/// Atomic text write (temp file + rename).
void write_text_atomic(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace adaptkit
