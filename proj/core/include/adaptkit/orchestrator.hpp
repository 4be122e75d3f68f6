#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <mutex>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "adaptkit/adapter.hpp"
#include "adaptkit/classifier.hpp"
#include "adaptkit/gan.hpp"
#include "adaptkit/memory.hpp"
#include "adaptkit/tasks.hpp"

namespace adaptkit {

/// The most recent `capacity` frames, oldest first.
class FrameBuffer {
 public:
  explicit FrameBuffer(std::size_t capacity);

  /// Accepts 3×H×W or 1×3×H×W; evicts the oldest frame when full.
  void push(const Tensor& frame);
  void clear() noexcept { frames_.clear(); }
  std::size_t size() const noexcept { return frames_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }
  bool full() const noexcept { return frames_.size() == capacity_; }
  const std::deque<Tensor>& frames() const noexcept { return frames_; }
  /// N×3×H×W, oldest first.
  Tensor stacked() const;

 private:
  std::size_t capacity_;
  std::deque<Tensor> frames_;
};

struct NoveltyPolicy {
  double tau = 0.0;
  std::size_t min_fill = 16;
  /// Consecutive Novel results needed before an episode is requested. With
  /// the buffer length here, the episode sees only post-change frames.
  std::size_t confirmations = 1;
  void validate() const;
};

struct NoveltyResult {
  bool novel = false;
  int nearest_id = -1;  // reported for Novel too
  double distance = 0.0;
};

/// Novel iff the nearest stored descriptor is farther than τ.
NoveltyResult novelty_from_descriptor(std::span<const float> d, const ParameterMemory& memory,
                                      const NoveltyPolicy& policy);
/// Throws ContractViolation below the policy's minimum fill.
NoveltyResult detect_novelty(const ConditionClassifier& classifier, const ParameterMemory& memory,
                             const FrameBuffer& buffer, const NoveltyPolicy& policy);

/// Exactly one record per frame. The classifier's argmax names a record; an
/// online record replaces it when it is the nearest descriptor, since the
/// classifier has no output for conditions learned after it was trained.
RecordPtr select_adapter(const ConditionClassifier& classifier, const ParameterMemory& memory, const Tensor& frame);

enum class OnlinePhase { monitoring, adapting, ready };

std::string to_string(OnlinePhase phase);

struct OnlineEvent {
  std::uint64_t timestamp;  // position in the log
  OnlinePhase phase;
  std::string event;
  nlohmann::json details;
};

/// Totally ordered event log; timestamps are a logical counter.
class EventLog {
 public:
  std::uint64_t append(OnlinePhase phase, std::string event, nlohmann::json details = nlohmann::json::object());
  std::vector<OnlineEvent> events() const;
  std::uint64_t clock() const;
  void write_jsonl(const std::filesystem::path& path) const;

 private:
  mutable std::mutex mutex_;
  std::vector<OnlineEvent> events_;
};

struct OnlineConfig {
  GanHyper gan;
  AdapterTrainConfig adapter;
  TaskWeighting weighting;
  std::uint64_t seed = 41;
  /// Online ids are allocated above this (the number of initial conditions).
  int id_floor = 0;
};

/// Everything an online episode reads. Nothing here is modified.
struct OnlineContext {
  const ConditionClassifier& classifier;
  const FrozenTasks& tasks;
  const Dataset& reference_train;
  const PseudoGroundTruth& gt_train;
  const Dataset& reference_val;
  const PseudoGroundTruth& gt_val;
};

struct OnlineOutcome {
  RecordPtr record;
  int gan_parent = -1;
  int adapter_parent = -1;
  AdapterTrainResult training;
};

/// Clones the nearest stored generators and fine-tunes them on `buffer`,
/// regenerates the reference under the new style, trains a clone of the
/// nearest adapter on it and stores the result under a fresh id. The record
/// descriptor is the buffer's average descriptor. Any failure leaves memory
/// untouched.
OnlineOutcome run_online_adaptation(const Tensor& buffer, ParameterMemory& memory, const OnlineContext& ctx,
                                    const OnlineConfig& cfg, std::uint64_t timestamp = 0);

struct FrameResult {
  int record_id = -1;
  Tensor adapted;  // 1×3×H×W
  std::optional<NoveltyResult> novelty;
  /// Set once `confirmations` consecutive frames tested Novel.
  bool request_episode = false;
};

/// Runtime loop around a memory. Serving frames is safe while an episode
/// runs on another thread; at most one episode runs at a time.
class Orchestrator {
 public:
  Orchestrator(const ConditionClassifier& classifier, ParameterMemory& memory, NoveltyPolicy policy,
               std::size_t buffer_capacity);

  /// Pushes the frame, serves it through its selected adapter and, when the
  /// buffer is full and no episode runs, tests for novelty.
  FrameResult process(const Tensor& frame);
  NoveltyResult detect_novelty() const;
  /// Runs an episode on the current buffer. Throws ContractViolation when an
  /// episode is already running; on failure the phase returns to monitoring
  /// and the error propagates.
  OnlineOutcome adapt_online(const OnlineContext& ctx, const OnlineConfig& cfg);

  OnlinePhase phase() const;
  const EventLog& log() const noexcept { return log_; }
  Tensor buffer_snapshot() const;
  std::size_t buffer_size() const;

 private:
  const ConditionClassifier& classifier_;
  ParameterMemory& memory_;
  NoveltyPolicy policy_;
  mutable std::mutex mutex_;  // guards buffer_ and phase_
  FrameBuffer buffer_;
  OnlinePhase phase_ = OnlinePhase::monitoring;
  std::size_t novel_streak_ = 0;
  EventLog log_;
};

}  // namespace adaptkit
