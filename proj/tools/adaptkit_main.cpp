// Command-line driver: one subcommand per pipeline stage.

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>

#include "adaptkit/errors.hpp"
#include "adaptkit/pipeline.hpp"

namespace {

using adaptkit::PipelineConfig;

struct Options {
  std::string config;
  std::string output;
  std::string condition;
};

PipelineConfig resolve(const Options& o) {
  PipelineConfig cfg = o.config.empty() ? PipelineConfig{} : adaptkit::load_config(o.config);
  if (!o.output.empty()) cfg.output_dir = o.output;
  cfg.validate();
  return cfg;
}

void print(const nlohmann::json& j) { std::cout << j.dump(2) << "\n"; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"adaptkit: condition adapters for frozen perception tasks"};
  app.require_subcommand(1);
  Options opt;
  auto common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", opt.config, "pipeline config (JSON); defaults apply when omitted");
    sub->add_option("-o,--output", opt.output, "output directory, overriding the config");
    return sub;
  };

  std::string init_path;
  auto* init = app.add_subcommand("init-config", "write the default config as JSON");
  init->add_option("path", init_path, "destination file")->required();

  using Stage = void (*)(const PipelineConfig&);
  const std::vector<std::tuple<const char*, const char*, Stage>> stages = {
      {"gen-data", "render reference and condition splits", adaptkit::pipeline::gen_data},
      {"train-tasks", "train and freeze the segmentation and retrieval nets", adaptkit::pipeline::train_tasks},
      {"pseudo-gt", "label the reference splits with the frozen tasks", adaptkit::pipeline::pseudo_gt},
      {"train-adapters", "train the identity seed and one adapter per condition",
       adaptkit::pipeline::train_adapters},
      {"train-classifier", "train the condition classifier and calibrate the novelty threshold",
       adaptkit::pipeline::train_classifier},
      {"build-memory", "assemble the parameter memory", adaptkit::pipeline::build_memory},
  };
  std::vector<std::pair<CLI::App*, Stage>> stage_cmds;
  for (const auto& [name, help, fn] : stages) stage_cmds.emplace_back(common(app.add_subcommand(name, help)), fn);

  auto* gan = common(app.add_subcommand("train-gan", "train the translation pair of each condition"));
  gan->add_option("--condition", opt.condition, "train only this condition");
  auto* eval = common(app.add_subcommand("evaluate", "per-condition mIOU, retrieval AUC and confusion matrix"));
  auto* online = common(app.add_subcommand("online-run", "stream the held-out condition through the orchestrator"));
  auto* rep = common(app.add_subcommand("report", "aggregate metrics.json and the output manifest"));
  auto* all = common(app.add_subcommand("run-all", "every stage in order"));

  CLI11_PARSE(app, argc, argv);

  try {
    if (*init) {
      adaptkit::write_text_atomic(init_path, PipelineConfig{}.to_json().dump(2) + "\n");
      return 0;
    }
    const PipelineConfig cfg = resolve(opt);
    for (const auto& [cmd, fn] : stage_cmds) {
      if (*cmd) fn(cfg);
    }
    if (*gan) adaptkit::pipeline::train_gan(cfg, opt.condition);
    if (*eval) print(adaptkit::pipeline::evaluate(cfg)["summary"]);
    if (*online) print(adaptkit::pipeline::online_run(cfg)["episode"]);
    if (*rep) adaptkit::pipeline::report(cfg);
    if (*all) print(adaptkit::pipeline::run_all(cfg)["evaluate"]["summary"]);
  } catch (const adaptkit::DependencyError& e) {
    std::cerr << "adaptkit: " << e.what() << "\n";
    return 3;
  } catch (const adaptkit::ConfigError& e) {
    std::cerr << "adaptkit: config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "adaptkit: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
