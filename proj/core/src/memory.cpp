#include "adaptkit/memory.hpp"

#include <cmath>
#include <limits>
#include <mutex>
#include <nlohmann/json.hpp>

#include "adaptkit/classifier.hpp"
#include "adaptkit/errors.hpp"

namespace adaptkit {

namespace {

constexpr int kManifestVersion = 1;

RecordOrigin origin_from_string(const std::string& s) {
  if (s == "offline") return RecordOrigin::offline;
  if (s == "online") return RecordOrigin::online;
  throw CorruptCheckpointError("unknown record origin '" + s + "'");
}

}  // namespace

std::string to_string(RecordOrigin origin) { return origin == RecordOrigin::online ? "online" : "offline"; }

std::string record_file_name(int id) { return "record_" + std::to_string(id) + ".adpt"; }

Container record_container(const AdapterRecord& r) {
  Container c;
  c.add("descriptor", Tensor({r.descriptor.size()}, r.descriptor));
  add_adapter(c, r.adapter, "adapter.");
  if (r.generators) add_gan(c, *r.generators, "gan.");
  c.attributes()["record"] = {{"id", r.id},
                              {"name", r.name},
                              {"origin", to_string(r.provenance.origin)},
                              {"parent_id", r.provenance.parent_id},
                              {"timestamp", r.provenance.timestamp},
                              {"has_generators", r.generators.has_value()}};
  return c;
}

AdapterRecord record_from_container(const Container& c) {
  AdapterRecord r;
  try {
    const auto& j = c.attributes().at("record");
    r.id = j.at("id").get<int>();
    r.name = j.at("name").get<std::string>();
    r.provenance.origin = origin_from_string(j.at("origin").get<std::string>());
    r.provenance.parent_id = j.at("parent_id").get<int>();
    r.provenance.timestamp = j.at("timestamp").get<std::uint64_t>();
    if (j.at("has_generators").get<bool>()) r.generators = load_gan(c, "gan.");
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCheckpointError(std::string("bad record attributes: ") + e.what());
  }
  const Tensor& d = c.get("descriptor");
  r.descriptor.assign(d.data().begin(), d.data().end());
  r.adapter = load_adapter(c, "adapter.");
  return r;
}

ParameterMemory::ParameterMemory() : mutex_(std::make_unique<std::shared_mutex>()) {}

ParameterMemory::ParameterMemory(std::filesystem::path directory) : ParameterMemory() {
  std::filesystem::create_directories(directory);
  dir_ = std::move(directory);
}

ParameterMemory ParameterMemory::open(const std::filesystem::path& directory) {
  const auto manifest_path = directory / "manifest.json";
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_text(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCheckpointError("bad memory manifest " + manifest_path.string() + ": " + e.what());
  }
  if (manifest.value("version", 0) != kManifestVersion) {
    throw CorruptCheckpointError("unsupported memory manifest version in " + manifest_path.string());
  }
  ParameterMemory m;
  m.dir_ = directory;
  for (const auto& entry : manifest.at("records")) {
    AdapterRecord r = record_from_container(load_container(directory / entry.at("file").get<std::string>()));
    if (r.id != entry.at("id").get<int>()) throw CorruptCheckpointError("manifest id disagrees with record file");
    const int id = r.id;
    m.records_.emplace(id, std::make_shared<const AdapterRecord>(std::move(r)));
  }
  return m;
}

int ParameterMemory::store(AdapterRecord record) {
  if (record.descriptor.empty()) throw ContractViolation("record descriptor is empty");
  for (float v : record.descriptor) {
    if (!std::isfinite(v)) throw ContractViolation("record descriptor is not finite");
  }
  std::unique_lock lock(*mutex_);
  if (records_.contains(record.id)) throw ContractViolation("duplicate record id " + std::to_string(record.id));
  if (!records_.empty() && records_.begin()->second->descriptor.size() != record.descriptor.size()) {
    throw ContractViolation("record descriptor length differs from stored records");
  }
  const int id = record.id;
  auto ptr = std::make_shared<const AdapterRecord>(std::move(record));
  if (dir_) {
    persist_locked(*ptr);
    records_.emplace(id, ptr);
    try {
      write_manifest_locked(*dir_);
    } catch (...) {
      records_.erase(id);
      throw;
    }
  } else {
    records_.emplace(id, std::move(ptr));
  }
  return id;
}

RecordPtr ParameterMemory::query_by_index(int id) const {
  std::shared_lock lock(*mutex_);
  auto it = records_.find(id);
  if (it == records_.end()) throw NotFoundError("no record with id " + std::to_string(id));
  return it->second;
}

MemoryMatch ParameterMemory::query_by_descriptor(std::span<const float> d,
                                                 const std::function<bool(const AdapterRecord&)>& filter) const {
  std::shared_lock lock(*mutex_);
  MemoryMatch best{nullptr, std::numeric_limits<double>::infinity()};
  // Ascending id order plus strict < keeps the lowest id on ties.
  for (const auto& [id, rec] : records_) {
    if (filter && !filter(*rec)) continue;
    const double dist = euclidean(d, rec->descriptor);
    if (!best.record || dist < best.distance) best = {rec, dist};
  }
  if (!best.record) throw NotFoundError("parameter memory has no matching record");
  return best;
}

std::vector<RecordPtr> ParameterMemory::records() const {
  std::shared_lock lock(*mutex_);
  std::vector<RecordPtr> out;
  for (const auto& [id, rec] : records_) out.push_back(rec);
  return out;
}

std::vector<int> ParameterMemory::ids() const {
  std::shared_lock lock(*mutex_);
  std::vector<int> out;
  for (const auto& [id, rec] : records_) out.push_back(id);
  return out;
}

std::size_t ParameterMemory::size() const {
  std::shared_lock lock(*mutex_);
  return records_.size();
}

bool ParameterMemory::contains(int id) const {
  std::shared_lock lock(*mutex_);
  return records_.contains(id);
}

int ParameterMemory::next_id(int floor) const {
  std::shared_lock lock(*mutex_);
  int next = floor + 1;
  if (!records_.empty()) next = std::max(next, records_.rbegin()->first + 1);
  return next;
}

void ParameterMemory::persist_locked(const AdapterRecord& r) const {
  save_container(*dir_ / record_file_name(r.id), record_container(r));
}

void ParameterMemory::write_manifest_locked(const std::filesystem::path& directory) const {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& [id, rec] : records_) {
    entries.push_back({{"id", id},
                       {"name", rec->name},
                       {"file", record_file_name(id)},
                       {"origin", to_string(rec->provenance.origin)},
                       {"parent_id", rec->provenance.parent_id},
                       {"timestamp", rec->provenance.timestamp}});
  }
  write_text_atomic(directory / "manifest.json",
                    nlohmann::json{{"version", kManifestVersion}, {"records", entries}}.dump(2) + "\n");
}

void ParameterMemory::save(const std::filesystem::path& directory) const {
  std::filesystem::create_directories(directory);
  std::shared_lock lock(*mutex_);
  for (const auto& [id, rec] : records_) save_container(directory / record_file_name(id), record_container(*rec));
  write_manifest_locked(directory);
}

}  // namespace adaptkit
