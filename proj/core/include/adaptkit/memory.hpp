#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include "adaptkit/adapter.hpp"
#include "adaptkit/gan.hpp"

namespace adaptkit {

enum class RecordOrigin { offline, online };

std::string to_string(RecordOrigin origin);

struct RecordProvenance {
  RecordOrigin origin = RecordOrigin::offline;
  int parent_id = -1;           // record this one was cloned from; −1 if none
  std::uint64_t timestamp = 0;  // logical clock, not wall time
};

/// One condition's entry. Records are immutable once stored.
struct AdapterRecord {
  int id = 0;
  std::string name;
  std::vector<float> descriptor;  // centroid in classifier descriptor space
  Adapter adapter;
  std::optional<GanModels> generators;  // absent for the reference
  RecordProvenance provenance;
};

using RecordPtr = std::shared_ptr<const AdapterRecord>;

struct MemoryMatch {
  RecordPtr record;
  double distance = 0.0;
};

/// Adapter and generator store addressed by id or by nearest descriptor.
///
/// Reads take a shared lock and hand out immutable snapshots, so they can run
/// while a writer publishes a new record. With a directory attached every
/// store() writes the record file and then the manifest, each via
/// temp-then-rename, so the manifest never names a missing file.
class ParameterMemory {
 public:
  ParameterMemory();
  explicit ParameterMemory(std::filesystem::path directory);

  /// Reads the manifest and every record under `directory`.
  static ParameterMemory open(const std::filesystem::path& directory);

  /// Throws ContractViolation on a duplicate id, an empty or non-finite
  /// descriptor, or a descriptor length that differs from stored ones.
  int store(AdapterRecord record);

  /// Throws NotFoundError for unknown ids.
  RecordPtr query_by_index(int id) const;
  /// Exact linear scan by Euclidean distance; ties go to the lowest id.
  /// Throws NotFoundError when no record passes `filter`.
  MemoryMatch query_by_descriptor(std::span<const float> d,
                                  const std::function<bool(const AdapterRecord&)>& filter = {}) const;

  std::vector<RecordPtr> records() const;  // ascending id
  std::vector<int> ids() const;
  std::size_t size() const;
  bool contains(int id) const;
  /// Smallest id above every stored id and `floor`.
  int next_id(int floor) const;

  const std::optional<std::filesystem::path>& directory() const noexcept { return dir_; }
  /// Writes all records and the manifest to `directory`.
  void save(const std::filesystem::path& directory) const;

 private:
  void persist_locked(const AdapterRecord& r) const;
  void write_manifest_locked(const std::filesystem::path& directory) const;

  std::unique_ptr<std::shared_mutex> mutex_;
  std::map<int, RecordPtr> records_;
  std::optional<std::filesystem::path> dir_;
};

Container record_container(const AdapterRecord& r);
AdapterRecord record_from_container(const Container& c);
std::string record_file_name(int id);

}  // namespace adaptkit
