#pragma once

#include <cstdint>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <vector>

#include "adaptkit/autograd.hpp"
#include "adaptkit/container.hpp"
#include "adaptkit/worldgen.hpp"

namespace adaptkit {

enum class TaskKind { segmentation, retrieval };

std::string to_string(TaskKind kind);

/// A task network. Once frozen its parameters must never change again;
/// verify_frozen() compares the current hash with the one taken at freeze().
struct TaskNet {
  TaskKind kind = TaskKind::segmentation;
  ParamSet params;
  nlohmann::json arch;
  bool frozen = false;
  std::uint64_t frozen_hash = 0;

  void freeze();
  /// Throws FrozenTaskViolation if not frozen or if the weights moved.
  void verify_frozen() const;
};

struct SegNetArch {
  std::size_t width = 24;
  int classes = kNumClasses;
};

struct RetrievalNetArch {
  std::size_t width1 = 16, width2 = 32, width3 = 32;
  std::size_t descriptor = 32;
  int places = 32;
};

TaskNet init_segmentation_net(const SegNetArch& arch, std::size_t height, std::size_t width, Rng& rng);
TaskNet init_retrieval_net(const RetrievalNetArch& arch, std::size_t height, std::size_t width, Rng& rng);

/// N×3×H×W → N×C×H×W class logits.
Var segmentation_logits(Binder& b, const TaskNet& net, Var images);
/// N×3×H×W → N×D unit-norm descriptors.
Var retrieval_descriptor(Binder& b, const TaskNet& net, Var images);
/// Place-classification logits computed from the descriptor (training only).
Var retrieval_place_logits(Binder& b, const TaskNet& net, Var descriptors);

/// Per-pixel argmax labels, N·H·W in (n, h, w) order.
std::vector<std::uint8_t> segment(const TaskNet& net, const Tensor& images);
Tensor describe(const TaskNet& net, const Tensor& images);

struct TaskTrainConfig {
  std::size_t epochs = 12;
  std::size_t batch = 16;
  float lr = 2e-3f;
  std::uint64_t seed = 11;
  double target = 0.85;
};

/// Trains on `train`, checks the target on `check` and freezes. Throws
/// ConfigError with diagnostics if the target is not reached.
TaskNet train_segmentation(const Dataset& train, const Dataset& check, const SegNetArch& arch,
                           const TaskTrainConfig& cfg);
/// `check` is split in halves: the first half is the database, the second
/// the queries. The target applies to top-1 place accuracy.
TaskNet train_retrieval(const Dataset& train, const Dataset& check, const RetrievalNetArch& arch,
                        const TaskTrainConfig& cfg);

struct FrozenTasks {
  TaskNet segmentation;
  TaskNet retrieval;
  void verify() const {
    segmentation.verify_frozen();
    retrieval.verify_frozen();
  }
};

struct PseudoGroundTruth {
  std::vector<std::uint8_t> labels;  // N·H·W argmax of the frozen segmentation net
  Tensor descriptors;                // N×D frozen retrieval descriptors
  std::uint64_t source_hash = 0;     // Dataset::hash() of the reference set
  std::vector<std::uint64_t> jitter_seeds;  // row identity, for alignment checks

  std::size_t size() const { return descriptors.empty() ? 0 : descriptors.dim(0); }
};

/// Stores the parameters, architecture and frozen hash under `prefix`.
void add_task_net(Container& c, const TaskNet& net, const std::string& prefix);
/// Restores a frozen net; a hash that disagrees with the stored one throws
/// CorruptCheckpointError.
TaskNet load_task_net(const Container& c, const std::string& prefix);

/// Rejects any sample whose condition is not the reference.
PseudoGroundTruth compute_pseudo_gt(const Dataset& reference, const FrozenTasks& tasks);

/// Dataset-level mean IoU over the classes present in `gt`.
double miou(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt, int num_classes);

struct PrPoint {
  double threshold;
  double precision;
  double recall;
};

struct RetrievalMatch {
  std::size_t query;
  std::size_t db;
  double distance;
  bool correct;
};

struct RetrievalResult {
  std::vector<RetrievalMatch> matches;
  std::vector<PrPoint> curve;  // starts at (recall 0, precision 1)
  double auc = 0.0;
  double top1 = 0.0;
};

/// Trapezoidal area under precision as a function of recall.
double trapezoid_auc(std::span<const PrPoint> curve);

/// Nearest-neighbour place matching by L2 distance. A match is correct when
/// place ids are equal. The PR curve sweeps an acceptance threshold over the
/// nearest-match distances; recall counts queries whose place is in the DB.
RetrievalResult evaluate_retrieval(const Tensor& query_desc, std::span<const int> query_places,
                                   const Tensor& db_desc, std::span<const int> db_places);

double segmentation_miou(const TaskNet& seg, const Dataset& data);
RetrievalResult retrieval_eval(const TaskNet& ret, const Dataset& db, const Dataset& queries);

/// Splits a test set into database (first half) and queries (second half).
/// Test sets hold whole traversals in order, so halves are disjoint traversals.
std::pair<Dataset, Dataset> db_query_halves(const Dataset& test);

}  // namespace adaptkit
