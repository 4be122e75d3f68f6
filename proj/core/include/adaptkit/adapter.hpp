#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "adaptkit/autograd.hpp"
#include "adaptkit/container.hpp"
#include "adaptkit/tasks.hpp"
#include "adaptkit/worldgen.hpp"

namespace adaptkit {

/// Encoder-decoder input adapter. Three stride-2 down-convolutions, residual
/// blocks at the bottleneck, three stride-2 transposed convolutions, each
/// decoder stage concatenated with the matching encoder stage, and a
/// full-resolution head over [decoder, input]. The head output is a residual
/// added to logit(input) before the final sigmoid, and starts at zero.
struct AdapterArch {
  std::size_t width1 = 16, width2 = 32, width3 = 32;
  int res_blocks = 2;
  std::size_t head = 16;
};

struct Adapter {
  ParamSet params;
  AdapterArch arch;
  int condition_id = 0;
};

Adapter init_adapter(const AdapterArch& arch, Rng& rng);
/// N×3×H×W in [0, 1] to N×3×H×W in (0, 1); H and W divisible by 8.
Var adapter_forward(Binder& b, const AdapterArch& arch, Var images);
Tensor adapt(const Adapter& adapter, const Tensor& images);

struct TaskWeighting {
  double seg = 1.0;
  double ret = 10.0;
  void validate() const;
};

struct AdapterTrainConfig {
  std::size_t epochs = 20;
  std::size_t batch = 8;
  double lr = 0.0005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::size_t patience = 2;
  /// Caps the minibatches per epoch; 0 means a full pass.
  std::size_t steps_per_epoch = 0;
  std::uint64_t seed = 21;
};

/// Trains a fresh adapter to reproduce its input (l1). Zero epochs return
/// the raw initialization.
Adapter pretrain_identity(const Dataset& reference, const AdapterArch& arch, const AdapterTrainConfig& cfg);

/// Σ α_m · discrepancy_m of the frozen tasks on `adapted`, where row i of
/// `adapted` is compared with pseudo ground truth row rows[i]:
///   segmentation: cross-entropy against the pseudo labels
///   retrieval:    squared L2 to the pseudo descriptor, averaged over rows
/// Terms with α = 0 are not evaluated.
Var task_supervision_loss(Var adapted, std::span<const std::size_t> rows, const PseudoGroundTruth& gt,
                          const FrozenTasks& tasks, const TaskWeighting& weighting);

struct AdapterEpoch {
  std::size_t epoch;  // 0 is the seed, before any update
  double train_loss;  // mean over the epoch's minibatches; NaN for epoch 0
  double val_loss;
};

struct AdapterTrainResult {
  Adapter adapter;  // best-validation parameters
  std::vector<AdapterEpoch> curve;
  std::size_t best_epoch = 0;
};

/// Trains a clone of `seed` on `generated` (row-aligned with `gt`), early
/// stopping on the validation task loss. Frozen task hashes are verified
/// before and after; a mismatch throws FrozenTaskViolation.
AdapterTrainResult train_adapter(int condition_id, const Dataset& generated, const PseudoGroundTruth& gt,
                                 const Dataset& generated_val, const PseudoGroundTruth& gt_val, const Adapter& seed,
                                 const FrozenTasks& tasks, const TaskWeighting& weighting,
                                 const AdapterTrainConfig& cfg);

/// Mean task loss of `adapter` over a row-aligned dataset.
double validation_loss(const Adapter& adapter, const Dataset& data, const PseudoGroundTruth& gt,
                       const FrozenTasks& tasks, const TaskWeighting& weighting);

void add_adapter(Container& c, const Adapter& adapter, const std::string& prefix);
Adapter load_adapter(const Container& c, const std::string& prefix);

}  // namespace adaptkit
