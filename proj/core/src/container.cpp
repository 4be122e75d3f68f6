#include "adaptkit/container.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "adaptkit/errors.hpp"

namespace adaptkit {

namespace {

constexpr char kMagic[4] = {'A', 'D', 'P', 'T'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(std::span<const std::uint8_t> b, std::size_t off, int width) {
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(b[off + i]) << (8 * i);
  return v;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

void append_floats(std::vector<std::uint8_t>& out, std::span<const float> values) {
  for (float f : values) {
    const auto bits = std::bit_cast<std::uint32_t>(f);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
}

}  // namespace

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001B3ULL;
  }
  return h;
}

void Container::add(std::string name, Tensor tensor) {
  if (has(name)) throw ContractViolation("duplicate tensor name '" + name + "' in container");
  tensors_.emplace_back(std::move(name), std::move(tensor));
}

const Tensor& Container::get(std::string_view name) const {
  for (const auto& [n, t] : tensors_) {
    if (n == name) return t;
  }
  throw NotFoundError("container has no tensor named '" + std::string(name) + "'");
}

bool Container::has(std::string_view name) const {
  for (const auto& entry : tensors_) {
    if (entry.first == name) return true;
  }
  return false;
}

void Container::add_params(const ParamSet& params, std::string_view prefix) {
  for (const auto& p : params) add(std::string(prefix) + p.name, p.value);
}

ParamSet Container::params(std::string_view prefix) const {
  ParamSet out;
  for (const auto& [name, t] : tensors_) {
    if (name.starts_with(prefix)) out.add(name.substr(prefix.size()), t);
  }
  return out;
}

std::vector<std::uint8_t> Container::encode() const {
  std::vector<std::uint8_t> blob;
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& [name, t] : tensors_) {
    const std::size_t offset = blob.size();
    append_floats(blob, t.data());
    const std::uint64_t h = fnv1a64(std::span(blob).subspan(offset));
    entries.push_back({{"name", name},
                       {"shape", t.shape()},
                       {"offset", offset},
                       {"count", t.numel()},
                       {"fnv1a64", hex64(h)}});
  }
  nlohmann::json meta = {{"tensors", entries}, {"attributes", attributes_}};
  const std::string text = meta.dump();

  std::vector<std::uint8_t> out;
  out.reserve(16 + text.size() + blob.size());
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u32(out, kVersion);
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), blob.begin(), blob.end());
  return out;
}

Container Container::decode(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw CorruptCheckpointError("not an ADPT container (bad magic)");
  }
  const auto version = static_cast<std::uint32_t>(get_le(bytes, 4, 4));
  if (version != kVersion) {
    throw CorruptCheckpointError("unsupported container version " + std::to_string(version));
  }
  const std::uint64_t meta_len = get_le(bytes, 8, 8);
  if (meta_len > bytes.size() - 16) throw CorruptCheckpointError("metadata length exceeds file size");
  const auto blob = bytes.subspan(16 + meta_len);

  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(meta_len));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCheckpointError(std::string("unreadable container metadata: ") + e.what());
  }

  Container c;
  try {
    c.attributes_ = meta.at("attributes");
    for (const auto& entry : meta.at("tensors")) {
      const auto name = entry.at("name").get<std::string>();
      const auto shape = entry.at("shape").get<Shape>();
      const auto offset = entry.at("offset").get<std::size_t>();
      const auto count = entry.at("count").get<std::size_t>();
      if (shape_numel(shape) != count) throw CorruptCheckpointError("tensor '" + name + "' shape/count mismatch");
      if (offset > blob.size() || count * 4 > blob.size() - offset) {
        throw CorruptCheckpointError("tensor '" + name + "' extends past end of file");
      }
      const auto region = blob.subspan(offset, count * 4);
      if (hex64(fnv1a64(region)) != entry.at("fnv1a64").get<std::string>()) {
        throw CorruptCheckpointError("hash mismatch for tensor '" + name + "'");
      }
      std::vector<float> values(count);
      for (std::size_t i = 0; i < count; ++i) {
        values[i] = std::bit_cast<float>(static_cast<std::uint32_t>(get_le(region, i * 4, 4)));
      }
      c.add(name, Tensor(shape, std::move(values)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCheckpointError(std::string("malformed container metadata: ") + e.what());
  } catch (const DimensionError& e) {
    throw CorruptCheckpointError(std::string("malformed tensor shape: ") + e.what());
  }
  return c;
}

namespace {

void write_bytes_atomic(const std::filesystem::path& path, const char* data, std::size_t n) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out.write(data, static_cast<std::streamsize>(n));
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

void save_container(const std::filesystem::path& path, const Container& c) {
  const auto bytes = c.encode();
  write_bytes_atomic(path, reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

Container load_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open container " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return Container::decode(bytes);
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  write_bytes_atomic(path, text.data(), text.size());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace adaptkit
