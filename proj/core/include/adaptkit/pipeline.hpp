#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "adaptkit/adapter.hpp"
#include "adaptkit/classifier.hpp"
#include "adaptkit/gan.hpp"
#include "adaptkit/tasks.hpp"
#include "adaptkit/worldgen.hpp"

namespace adaptkit {

/// Every knob of an end-to-end run. Keys absent from a config file keep
/// these defaults; unknown keys are rejected.
struct PipelineConfig {
  std::filesystem::path output_dir = "adaptkit_out";

  WorldConfig world;
  SplitCounts counts;
  SplitSeeds split_seeds;
  /// The initial non-reference conditions, in class order 1..N.
  std::vector<std::string> conditions = {"snow",    "dusk",      "night", "night_rain", "night_low_exposure",
                                         "shadows", "sun_glare"};
  std::string held_out = "sun_ultrahigh_exposure";

  SegNetArch seg_arch{16, kNumClasses};
  TaskTrainConfig seg_train{8, 16, 2e-3f, 11, 0.85};
  RetrievalNetArch ret_arch;
  TaskTrainConfig ret_train{12, 16, 2e-3f, 12, 0.90};

  GeneratorArch gen_arch;
  DiscriminatorArch disc_arch;
  GanHyper gan;
  std::uint64_t gan_seed = 5;

  AdapterArch adapter_arch;
  AdapterTrainConfig identity{1, 8, 0.0005, 0.9, 0.999, 2, 0, 19};
  AdapterTrainConfig adapter{10, 8, 0.0005, 0.9, 0.999, 2, 32, 21};
  TaskWeighting weighting;

  ClassifierTrainConfig classifier;

  struct Online {
    std::size_t buffer = 16;
    std::size_t min_fill = 16;
    double sigmas = 3.0;
    std::size_t gan_steps = 1000;
    AdapterTrainConfig adapter{10, 8, 0.0005, 0.9, 0.999, 2, 32, 23};
    std::uint64_t seed = 41;
  } online;

  void validate() const;
  nlohmann::json to_json() const;
  static PipelineConfig from_json(const nlohmann::json& j);
};

PipelineConfig load_config(const std::filesystem::path& path);

/// Artifact locations under the output directory.
struct Layout {
  std::filesystem::path root;

  std::filesystem::path data(const std::string& condition, const std::string& split) const;
  std::filesystem::path tasks() const { return root / "tasks" / "tasks.adpt"; }
  std::filesystem::path tasks_summary() const { return root / "tasks" / "tasks.json"; }
  std::filesystem::path pseudo_gt() const { return root / "pseudo_gt" / "pseudo_gt.adpt"; }
  std::filesystem::path gan(const std::string& condition) const { return root / "gan" / (condition + ".adpt"); }
  std::filesystem::path gan_loss(const std::string& condition) const { return root / "gan" / (condition + "_loss.csv"); }
  std::filesystem::path gan_summary(const std::string& condition) const {
    return root / "gan" / (condition + ".json");
  }
  std::filesystem::path gan_dump(const std::string& condition) const {
    return root / "gan" / (condition + "_abort.json");
  }
  std::filesystem::path identity_adapter() const { return root / "adapters" / "identity.adpt"; }
  std::filesystem::path adapter(const std::string& condition) const {
    return root / "adapters" / (condition + ".adpt");
  }
  std::filesystem::path adapter_curve(const std::string& condition) const {
    return root / "adapters" / (condition + "_curve.csv");
  }
  std::filesystem::path adapters_summary() const { return root / "adapters" / "adapters.json"; }
  std::filesystem::path classifier() const { return root / "classifier" / "classifier.adpt"; }
  std::filesystem::path classifier_summary() const { return root / "classifier" / "classifier.json"; }
  std::filesystem::path memory() const { return root / "memory"; }
  std::filesystem::path metrics_dir() const { return root / "metrics"; }
  std::filesystem::path evaluation() const { return root / "metrics" / "evaluate.json"; }
  std::filesystem::path online_dir() const { return root / "online"; }
  std::filesystem::path online_summary() const { return root / "online" / "online.json"; }
  std::filesystem::path metrics() const { return root / "metrics.json"; }
  std::filesystem::path manifest() const { return root / "manifest.json"; }
};

/// Stage functions behind the CLI subcommands. Each reads its inputs from
/// the output tree, throws DependencyError naming the producing command when
/// one is missing, and writes byte-identical outputs for a fixed config.
namespace pipeline {

void gen_data(const PipelineConfig& cfg);
void train_tasks(const PipelineConfig& cfg);
void pseudo_gt(const PipelineConfig& cfg);
/// Trains every initial condition, or only `only` when non-empty.
void train_gan(const PipelineConfig& cfg, const std::string& only = {});
void train_adapters(const PipelineConfig& cfg);
void train_classifier(const PipelineConfig& cfg);
void build_memory(const PipelineConfig& cfg);
nlohmann::json evaluate(const PipelineConfig& cfg);
nlohmann::json online_run(const PipelineConfig& cfg);
nlohmann::json report(const PipelineConfig& cfg);

/// Every stage in order; returns the aggregated metrics.
nlohmann::json run_all(const PipelineConfig& cfg);

FrozenTasks load_tasks(const Layout& layout);

struct PseudoGtBundle {
  PseudoGroundTruth train, val;
};
void save_pseudo_gt(const std::filesystem::path& path, const PseudoGtBundle& gt);
PseudoGtBundle load_pseudo_gt(const std::filesystem::path& path);

}  // namespace pipeline

}  // namespace adaptkit
