#include "adaptkit/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <set>
#include <sstream>

#include "adaptkit/errors.hpp"
#include "adaptkit/memory.hpp"
#include "adaptkit/orchestrator.hpp"

namespace adaptkit {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Reads known keys from one JSON object and rejects the rest.
class Section {
 public:
  Section(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + " must be a JSON object");
  }

  template <class T>
  Section& operator()(const char* key, T& value) {
    seen_.insert(key);
    if (!j_.contains(key)) return *this;
    try {
      value = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
    return *this;
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.contains(key)) throw ConfigError("unknown config key " + where_ + "." + key);
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

json train_cfg_json(const AdapterTrainConfig& c) {
  return {{"epochs", c.epochs},   {"batch", c.batch},       {"lr", c.lr},
          {"beta1", c.beta1},     {"beta2", c.beta2},       {"patience", c.patience},
          {"steps_per_epoch", c.steps_per_epoch}, {"seed", c.seed}};
}

void read_train_cfg(const json& j, const std::string& where, AdapterTrainConfig& c) {
  Section s(j, where);
  s("epochs", c.epochs)("batch", c.batch)("lr", c.lr)("beta1", c.beta1)("beta2", c.beta2)("patience", c.patience)(
      "steps_per_epoch", c.steps_per_epoch)("seed", c.seed);
  s.finish();
}

json task_cfg_json(const TaskTrainConfig& c) {
  return {{"epochs", c.epochs}, {"batch", c.batch}, {"lr", c.lr}, {"seed", c.seed}, {"target", c.target}};
}

void require(const fs::path& path, const std::string& command) {
  if (!fs::exists(path)) throw DependencyError(path.string(), "adaptkit " + command);
}

void write_json(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path());
  write_text_atomic(path, j.dump(2) + "\n");
}

json read_json(const fs::path& path, const std::string& command) {
  require(path, command);
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw CorruptCheckpointError("bad JSON in " + path.string() + ": " + e.what());
  }
}

// Fixed-precision rendering keeps CSV output byte-stable.
std::string num(double v) {
  std::ostringstream os;
  os.precision(9);
  os << v;
  return os.str();
}

class StageClock {
 public:
  explicit StageClock(std::string name) : name_(std::move(name)), start_(std::chrono::steady_clock::now()) {
    std::clog << "[adaptkit] " << name_ << " ..." << std::endl;
  }
  ~StageClock() {
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    std::clog << "[adaptkit] " << name_ << " done in " << num(s) << " s" << std::endl;
  }
  StageClock(const StageClock&) = delete;
  StageClock& operator=(const StageClock&) = delete;

 private:
  std::string name_;
  std::chrono::steady_clock::time_point start_;
};

Dataset load_split(const Layout& layout, const std::string& condition, const std::string& split) {
  const fs::path p = layout.data(condition, split);
  require(p, "gen-data");
  return load_dataset(p);
}

GanModels load_gan_file(const Layout& layout, const std::string& condition) {
  const fs::path p = layout.gan(condition);
  require(p, "train-gan");
  return load_gan(load_container(p), "");
}

Adapter load_adapter_file(const fs::path& path) {
  require(path, "train-adapters");
  return load_adapter(load_container(path), "");
}

std::uint64_t gan_seed_for(const PipelineConfig& cfg, const ConditionSpec& spec) {
  return Rng(cfg.gan_seed).split(static_cast<std::uint64_t>(spec.id)).next_u64();
}

double mean_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw DimensionError("mean_abs_diff shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += std::fabs(static_cast<double>(a[i]) - b[i]);
  return s / static_cast<double>(a.numel());
}

double seg_miou_on(const FrozenTasks& tasks, const Tensor& images, const Dataset& truth) {
  return miou(segment(tasks.segmentation, images), truth.masks, kNumClasses);
}

RetrievalResult retrieval_on(const FrozenTasks& tasks, const Tensor& db_desc, const Dataset& db, const Tensor& images,
                             const Dataset& queries) {
  return evaluate_retrieval(describe(tasks.retrieval, images), queries.place_ids, db_desc, db.place_ids);
}

/// Each frame through the record the runtime selection path picks for it.
Tensor adapt_selected(const ConditionClassifier& clf, const ParameterMemory& memory, const Tensor& images,
                      std::vector<int>* chosen) {
  const std::vector<int> pred = predict(clf, images);
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < pred.size(); ++i) groups[pred[i]].push_back(i);
  Tensor out(images.shape());
  const std::size_t per = images.numel() / images.dim(0);
  for (const auto& [id, rows] : groups) {
    const Tensor adapted = adapt(memory.query_by_index(id)->adapter, images.gather_batch(rows));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      std::copy_n(adapted.data().begin() + static_cast<std::ptrdiff_t>(r * per), per,
                  out.data().begin() + static_cast<std::ptrdiff_t>(rows[r] * per));
    }
  }
  if (chosen) *chosen = pred;
  return out;
}

json curve_json(const std::vector<AdapterEpoch>& curve) {
  json out = json::array();
  for (const auto& e : curve) {
    out.push_back({{"epoch", e.epoch},
                   {"train_loss", std::isfinite(e.train_loss) ? json(e.train_loss) : json(nullptr)},
                   {"val_loss", e.val_loss}});
  }
  return out;
}

void write_curve_csv(const fs::path& path, const std::vector<AdapterEpoch>& curve) {
  std::string s = "epoch,train_loss,val_loss\n";
  for (const auto& e : curve) {
    s += std::to_string(e.epoch) + "," + (std::isfinite(e.train_loss) ? num(e.train_loss) : std::string("")) + "," +
         num(e.val_loss) + "\n";
  }
  write_text_atomic(path, s);
}

void reset_directory(const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
}

}  // namespace

void PipelineConfig::validate() const {
  world.validate();
  if (conditions.empty()) throw ConfigError("at least one initial condition is required");
  std::set<std::string> names;
  for (const auto& c : conditions) {
    if (find_condition(c).id == 0) throw ConfigError("the reference is implicit; do not list it as a condition");
    if (!names.insert(c).second) throw ConfigError("condition '" + c + "' listed twice");
  }
  if (find_condition(held_out).id == 0) throw ConfigError("the held-out condition cannot be the reference");
  if (names.contains(held_out)) throw ConfigError("the held-out condition must not be an initial condition");
  if (counts.train == 0 || counts.val == 0 || counts.test < 2) throw ConfigError("split sizes must be positive");
  for (const auto* t : {&seg_train, &ret_train}) {
    if (t->epochs == 0 || t->batch == 0 || !(t->lr > 0)) throw ConfigError("task budgets must be positive");
  }
  if (gan.steps == 0 || gan.batch == 0 || !(gan.lr > 0)) throw ConfigError("GAN budgets must be positive");
  for (const auto* a : {&identity, &adapter, &online.adapter}) {
    if (a->epochs == 0 || a->batch == 0 || !(a->lr > 0)) throw ConfigError("adapter budgets must be positive");
  }
  weighting.validate();
  if (classifier.epochs == 0 || classifier.batch == 0 || !(classifier.lr > 0)) {
    throw ConfigError("classifier budgets must be positive");
  }
  if (online.buffer == 0 || online.min_fill == 0 || online.min_fill > online.buffer) {
    throw ConfigError("online buffer must hold at least min_fill frames");
  }
  if (online.gan_steps == 0 || !(online.sigmas >= 0)) throw ConfigError("online budgets must be positive");
  if (counts.val < online.buffer) throw ConfigError("validation split must hold one full buffer for calibration");
}

json PipelineConfig::to_json() const {
  return {
      {"output_dir", output_dir.string()},
      {"world",
       {{"height", world.height},
        {"width", world.width},
        {"places", world.num_places},
        {"seed", world.seed},
        {"max_jitter_px", world.max_jitter_px}}},
      {"splits",
       {{"train", counts.train},
        {"val", counts.val},
        {"test", counts.test},
        {"train_seed", split_seeds.train},
        {"val_seed", split_seeds.val},
        {"test_seed", split_seeds.test}}},
      {"conditions", conditions},
      {"held_out", held_out},
      {"segmentation",
       {{"width", seg_arch.width}, {"train", task_cfg_json(seg_train)}}},
      {"retrieval",
       {{"width1", ret_arch.width1},
        {"width2", ret_arch.width2},
        {"width3", ret_arch.width3},
        {"descriptor", ret_arch.descriptor},
        {"train", task_cfg_json(ret_train)}}},
      {"gan",
       {{"gen_width1", gen_arch.width1},
        {"gen_width2", gen_arch.width2},
        {"res_blocks", gen_arch.res_blocks},
        {"disc_width1", disc_arch.width1},
        {"disc_width2", disc_arch.width2},
        {"lambda_rec", gan.lambda_rec},
        {"lambda_adv", gan.lambda_adv},
        {"steps", gan.steps},
        {"batch", gan.batch},
        {"pool_size", gan.pool_size},
        {"lr", gan.lr},
        {"beta1", gan.beta1},
        {"beta2", gan.beta2},
        {"seed", gan_seed}}},
      {"adapter",
       {{"width1", adapter_arch.width1},
        {"width2", adapter_arch.width2},
        {"width3", adapter_arch.width3},
        {"res_blocks", adapter_arch.res_blocks},
        {"head", adapter_arch.head},
        {"alpha_seg", weighting.seg},
        {"alpha_ret", weighting.ret},
        {"identity", train_cfg_json(identity)},
        {"train", train_cfg_json(adapter)}}},
      {"classifier",
       {{"epochs", classifier.epochs}, {"batch", classifier.batch}, {"lr", classifier.lr}, {"seed", classifier.seed}}},
      {"online",
       {{"buffer", online.buffer},
        {"min_fill", online.min_fill},
        {"sigmas", online.sigmas},
        {"gan_steps", online.gan_steps},
        {"seed", online.seed},
        {"adapter", train_cfg_json(online.adapter)}}},
  };
}

PipelineConfig PipelineConfig::from_json(const json& j) {
  PipelineConfig c;
  Section top(j, "config");
  std::string out = c.output_dir.string();
  top("output_dir", out)("conditions", c.conditions)("held_out", c.held_out);
  c.output_dir = out;
  if (const json* w = top.child("world")) {
    Section s(*w, "world");
    s("height", c.world.height)("width", c.world.width)("places", c.world.num_places)("seed", c.world.seed)(
        "max_jitter_px", c.world.max_jitter_px);
    s.finish();
  }
  if (const json* w = top.child("splits")) {
    Section s(*w, "splits");
    s("train", c.counts.train)("val", c.counts.val)("test", c.counts.test)("train_seed", c.split_seeds.train)(
        "val_seed", c.split_seeds.val)("test_seed", c.split_seeds.test);
    s.finish();
  }
  auto read_task = [](const json& t, const std::string& where, TaskTrainConfig& cfg) {
    Section s(t, where);
    s("epochs", cfg.epochs)("batch", cfg.batch)("lr", cfg.lr)("seed", cfg.seed)("target", cfg.target);
    s.finish();
  };
  if (const json* w = top.child("segmentation")) {
    Section s(*w, "segmentation");
    s("width", c.seg_arch.width);
    if (const json* t = s.child("train")) read_task(*t, "segmentation.train", c.seg_train);
    s.finish();
  }
  if (const json* w = top.child("retrieval")) {
    Section s(*w, "retrieval");
    s("width1", c.ret_arch.width1)("width2", c.ret_arch.width2)("width3", c.ret_arch.width3)(
        "descriptor", c.ret_arch.descriptor);
    if (const json* t = s.child("train")) read_task(*t, "retrieval.train", c.ret_train);
    s.finish();
  }
  if (const json* w = top.child("gan")) {
    Section s(*w, "gan");
    s("gen_width1", c.gen_arch.width1)("gen_width2", c.gen_arch.width2)("res_blocks", c.gen_arch.res_blocks)(
        "disc_width1", c.disc_arch.width1)("disc_width2", c.disc_arch.width2)("lambda_rec", c.gan.lambda_rec)(
        "lambda_adv", c.gan.lambda_adv)("steps", c.gan.steps)("batch", c.gan.batch)("pool_size", c.gan.pool_size)(
        "lr", c.gan.lr)("beta1", c.gan.beta1)("beta2", c.gan.beta2)("seed", c.gan_seed);
    s.finish();
  }
  if (const json* w = top.child("adapter")) {
    Section s(*w, "adapter");
    s("width1", c.adapter_arch.width1)("width2", c.adapter_arch.width2)("width3", c.adapter_arch.width3)(
        "res_blocks", c.adapter_arch.res_blocks)("head", c.adapter_arch.head)("alpha_seg", c.weighting.seg)(
        "alpha_ret", c.weighting.ret);
    if (const json* t = s.child("identity")) read_train_cfg(*t, "adapter.identity", c.identity);
    if (const json* t = s.child("train")) read_train_cfg(*t, "adapter.train", c.adapter);
    s.finish();
  }
  if (const json* w = top.child("classifier")) {
    Section s(*w, "classifier");
    s("epochs", c.classifier.epochs)("batch", c.classifier.batch)("lr", c.classifier.lr)("seed", c.classifier.seed);
    s.finish();
  }
  if (const json* w = top.child("online")) {
    Section s(*w, "online");
    s("buffer", c.online.buffer)("min_fill", c.online.min_fill)("sigmas", c.online.sigmas)(
        "gan_steps", c.online.gan_steps)("seed", c.online.seed);
    if (const json* t = s.child("adapter")) read_train_cfg(*t, "online.adapter", c.online.adapter);
    s.finish();
  }
  top.finish();
  c.validate();
  return c;
}

PipelineConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) throw NotFoundError("config file not found: " + path.string());
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return PipelineConfig::from_json(j);
}

fs::path Layout::data(const std::string& condition, const std::string& split) const {
  return root / "data" / (condition + "_" + split + ".adpt");
}

namespace pipeline {

FrozenTasks load_tasks(const Layout& layout) {
  require(layout.tasks(), "train-tasks");
  const Container c = load_container(layout.tasks());
  FrozenTasks t{load_task_net(c, "seg/"), load_task_net(c, "ret/")};
  t.verify();
  return t;
}

void save_pseudo_gt(const fs::path& path, const PseudoGtBundle& gt) {
  Container c;
  for (const auto& [name, g] : {std::pair<std::string, const PseudoGroundTruth*>{"train", &gt.train},
                                std::pair<std::string, const PseudoGroundTruth*>{"val", &gt.val}}) {
    Tensor labels({g->labels.size()});
    for (std::size_t i = 0; i < g->labels.size(); ++i) labels[i] = static_cast<float>(g->labels[i]);
    c.add(name + ".labels", std::move(labels));
    c.add(name + ".descriptors", g->descriptors);
    std::vector<std::string> seeds;
    for (auto s : g->jitter_seeds) seeds.push_back(std::to_string(s));
    c.attributes()[name] = {{"source_hash", std::to_string(g->source_hash)}, {"jitter_seeds", seeds}};
  }
  fs::create_directories(path.parent_path());
  save_container(path, c);
}

PseudoGtBundle load_pseudo_gt(const fs::path& path) {
  require(path, "pseudo-gt");
  const Container c = load_container(path);
  PseudoGtBundle out;
  for (auto& [name, g] : {std::pair<std::string, PseudoGroundTruth*>{"train", &out.train},
                          std::pair<std::string, PseudoGroundTruth*>{"val", &out.val}}) {
    for (float v : c.get(name + ".labels").data()) g->labels.push_back(static_cast<std::uint8_t>(v));
    g->descriptors = c.get(name + ".descriptors");
    try {
      const auto& a = c.attributes().at(name);
      g->source_hash = std::stoull(a.at("source_hash").get<std::string>());
      for (const auto& s : a.at("jitter_seeds")) g->jitter_seeds.push_back(std::stoull(s.get<std::string>()));
    } catch (const json::exception& e) {
      throw CorruptCheckpointError(std::string("bad pseudo ground truth attributes: ") + e.what());
    }
  }
  return out;
}

void gen_data(const PipelineConfig& cfg) {
  StageClock clock("gen-data");
  const Layout layout{cfg.output_dir};
  fs::create_directories(layout.root / "data");
  const auto route = default_route(cfg.world);
  json files = json::array();
  auto save = [&](const std::string& name, const std::string& split, const Dataset& d) {
    save_dataset(layout.data(name, split), d);
    files.push_back({{"file", layout.data(name, split).filename().string()},
                     {"condition", name},
                     {"split", split},
                     {"place_ids", d.place_ids},
                     {"condition_ids", d.condition_ids}});
  };
  const Splits ref = build_split(cfg.world, route, find_condition("reference"), cfg.counts, cfg.split_seeds);
  save("reference", "train", ref.train);
  save("reference", "val", ref.val);
  save("reference", "test", ref.test);
  for (const auto& name : cfg.conditions) {
    const Splits s = build_split(cfg.world, route, find_condition(name), cfg.counts, cfg.split_seeds);
    save(name, "train", s.train);
    save(name, "test", s.test);
  }
  const Splits held = build_split(cfg.world, route, find_condition(cfg.held_out), cfg.counts, cfg.split_seeds);
  save(cfg.held_out, "test", held.test);
  write_json(layout.root / "data" / "manifest.json", {{"route", route}, {"files", files}});
}

void train_tasks(const PipelineConfig& cfg) {
  StageClock clock("train-tasks");
  const Layout layout{cfg.output_dir};
  const Dataset train = load_split(layout, "reference", "train");
  const Dataset val = load_split(layout, "reference", "val");
  const Dataset test = load_split(layout, "reference", "test");
  RetrievalNetArch ret_arch = cfg.ret_arch;
  ret_arch.places = cfg.world.num_places;
  const TaskNet seg = train_segmentation(train, val, cfg.seg_arch, cfg.seg_train);
  const TaskNet ret = train_retrieval(train, val, ret_arch, cfg.ret_train);
  Container c;
  add_task_net(c, seg, "seg/");
  add_task_net(c, ret, "ret/");
  fs::create_directories(layout.tasks().parent_path());
  save_container(layout.tasks(), c);
  const auto [db, queries] = db_query_halves(test);
  const RetrievalResult r = retrieval_eval(ret, db, queries);
  write_json(layout.tasks_summary(), {{"segmentation_val_miou", segmentation_miou(seg, val)},
                                      {"segmentation_test_miou", segmentation_miou(seg, test)},
                                      {"retrieval_test_top1", r.top1},
                                      {"retrieval_test_auc", r.auc},
                                      {"segmentation_hash", std::to_string(seg.frozen_hash)},
                                      {"retrieval_hash", std::to_string(ret.frozen_hash)}});
}

void pseudo_gt(const PipelineConfig& cfg) {
  StageClock clock("pseudo-gt");
  const Layout layout{cfg.output_dir};
  const FrozenTasks tasks = load_tasks(layout);
  const PseudoGtBundle gt{compute_pseudo_gt(load_split(layout, "reference", "train"), tasks),
                          compute_pseudo_gt(load_split(layout, "reference", "val"), tasks)};
  save_pseudo_gt(layout.pseudo_gt(), gt);
}

void train_gan(const PipelineConfig& cfg, const std::string& only) {
  const Layout layout{cfg.output_dir};
  if (!only.empty() && std::find(cfg.conditions.begin(), cfg.conditions.end(), only) == cfg.conditions.end()) {
    throw ConfigError("'" + only + "' is not an initial condition of this config");
  }
  const Dataset ref_train = load_split(layout, "reference", "train");
  const Dataset ref_val = load_split(layout, "reference", "val");
  fs::create_directories(layout.root / "gan");
  for (const auto& name : cfg.conditions) {
    if (!only.empty() && name != only) continue;
    StageClock clock("train-gan " + name);
    const ConditionSpec& spec = find_condition(name);
    const Dataset cond_train = load_split(layout, name, "train");
    GanHyper hyper = cfg.gan;
    hyper.dump_path = layout.gan_dump(name);
    const std::uint64_t seed = gan_seed_for(cfg, spec);
    const GanModels init = init_gan(cfg.gen_arch, cfg.disc_arch, spec.id, Rng(seed).split(100).next_u64());
    const GanResult r = train_pair(ref_train.images, cond_train.images, hyper, cfg.gen_arch, cfg.disc_arch, spec.id, seed);
    Container c;
    add_gan(c, r.models, "");
    save_container(layout.gan(name), c);
    write_loss_csv(layout.gan_loss(name), r.history);
    const double l1_init = analytic_l1(init.gen, ref_val, spec);
    const double l1_trained = analytic_l1(r.models.gen, ref_val, spec);
    write_json(layout.gan_summary(name), {{"condition", name},
                                          {"steps", r.history.size()},
                                          {"analytic_l1_init", l1_init},
                                          {"analytic_l1_trained", l1_trained},
                                          {"analytic_l1_ratio", l1_trained / l1_init},
                                          {"hash", std::to_string(r.models.hash())}});
  }
}

void train_adapters(const PipelineConfig& cfg) {
  const Layout layout{cfg.output_dir};
  const FrozenTasks tasks = load_tasks(layout);
  const PseudoGtBundle gt = load_pseudo_gt(layout.pseudo_gt());
  const Dataset ref_train = load_split(layout, "reference", "train");
  const Dataset ref_val = load_split(layout, "reference", "val");
  for (const auto& name : cfg.conditions) require(layout.gan(name), "train-gan --condition " + name);
  fs::create_directories(layout.root / "adapters");

  json summary;
  Adapter identity;
  {
    StageClock clock("train-adapters identity");
    identity = pretrain_identity(ref_train, cfg.adapter_arch, cfg.identity);
    Container c;
    add_adapter(c, identity, "");
    save_container(layout.identity_adapter(), c);
    summary["identity"] = {{"val_l1", mean_abs_diff(adapt(identity, ref_val.images), ref_val.images)}};
  }
  for (const auto& name : cfg.conditions) {
    StageClock clock("train-adapters " + name);
    const ConditionSpec& spec = find_condition(name);
    const GanModels gan = load_gan_file(layout, name);
    const Dataset gen = generate_condition_sequence(gan.gen, ref_train);
    const Dataset gen_val = generate_condition_sequence(gan.gen, ref_val);
    const AdapterTrainResult r =
        train_adapter(spec.id, gen, gt.train, gen_val, gt.val, identity, tasks, cfg.weighting, cfg.adapter);
    Container c;
    add_adapter(c, r.adapter, "");
    save_container(layout.adapter(name), c);
    write_curve_csv(layout.adapter_curve(name), r.curve);
    summary[name] = {{"best_epoch", r.best_epoch}, {"curve", curve_json(r.curve)}};
  }
  tasks.verify();
  write_json(layout.adapters_summary(), summary);
}

void train_classifier(const PipelineConfig& cfg) {
  StageClock clock("train-classifier");
  const Layout layout{cfg.output_dir};
  const Dataset ref_train = load_split(layout, "reference", "train");
  const Dataset ref_val = load_split(layout, "reference", "val");
  std::vector<Tensor> train{ref_train.images}, val{ref_val.images};
  std::vector<std::string> names{"reference"};
  for (const auto& name : cfg.conditions) {
    const GanModels gan = load_gan_file(layout, name);
    // Generated images alone teach the classifier the generator's artifacts;
    // the real condition images the pair was trained on anchor it to the
    // actual appearance.
    const Dataset real = load_split(layout, name, "train");
    train.push_back(Tensor::concat_batch(std::vector<Tensor>{generate_condition_sequence(gan.gen, ref_train).images, real.images}));
    val.push_back(generate_condition_sequence(gan.gen, ref_val).images);
    names.push_back(name);
  }
  const ClassifierTrainResult r = train_classifier(train, val, names, cfg.classifier);
  const NoveltyCalibration cal = calibrate_novelty(r.classifier, val, cfg.online.buffer, cfg.online.sigmas);
  Container c;
  add_classifier(c, r.classifier, "");
  for (std::size_t k = 0; k < cal.centroids.size(); ++k) {
    c.add("centroid." + std::to_string(k), Tensor({cal.centroids[k].size()}, cal.centroids[k]));
  }
  c.attributes()["calibration"] = {
      {"tau", cal.tau}, {"mean", cal.mean}, {"stddev", cal.stddev}, {"windows", cal.windows}};
  fs::create_directories(layout.classifier().parent_path());
  save_container(layout.classifier(), c);
  write_json(layout.classifier_summary(), {{"classes", names},
                                           {"epoch_loss", r.epoch_loss},
                                           {"generated_val_accuracy", r.val_accuracy},
                                           {"tau", cal.tau},
                                           {"tau_mean", cal.mean},
                                           {"tau_stddev", cal.stddev},
                                           {"tau_windows", cal.windows}});
}

namespace {

struct ClassifierBundle {
  ConditionClassifier classifier;
  double tau = 0.0;
  std::vector<std::vector<float>> centroids;
};

ClassifierBundle load_classifier_bundle(const Layout& layout) {
  require(layout.classifier(), "train-classifier");
  const Container c = load_container(layout.classifier());
  ClassifierBundle b;
  b.classifier = load_classifier(c, "");
  try {
    b.tau = c.attributes().at("calibration").at("tau").get<double>();
  } catch (const json::exception& e) {
    throw CorruptCheckpointError(std::string("classifier lacks its calibration: ") + e.what());
  }
  for (std::size_t k = 0; k < b.classifier.arch.classes; ++k) {
    const Tensor& t = c.get("centroid." + std::to_string(k));
    b.centroids.emplace_back(t.data().begin(), t.data().end());
  }
  return b;
}

ParameterMemory open_memory(const Layout& layout) {
  require(layout.memory() / "manifest.json", "build-memory");
  return ParameterMemory::open(layout.memory());
}

}  // namespace

void build_memory(const PipelineConfig& cfg) {
  StageClock clock("build-memory");
  const Layout layout{cfg.output_dir};
  const ClassifierBundle clf = load_classifier_bundle(layout);
  if (clf.classifier.class_names.size() != cfg.conditions.size() + 1) {
    throw DependencyError(layout.classifier().string() + " (for the current condition list)",
                          "adaptkit train-classifier");
  }
  reset_directory(layout.memory());
  ParameterMemory memory(layout.memory());
  AdapterRecord ref;
  ref.id = 0;
  ref.name = "reference";
  ref.descriptor = clf.centroids[0];
  ref.adapter = load_adapter_file(layout.identity_adapter());
  memory.store(std::move(ref));
  for (std::size_t k = 0; k < cfg.conditions.size(); ++k) {
    const std::string& name = cfg.conditions[k];
    if (clf.classifier.class_names[k + 1] != name) {
      throw DependencyError(layout.classifier().string() + " (class order)", "adaptkit train-classifier");
    }
    AdapterRecord r;
    r.id = static_cast<int>(k + 1);
    r.name = name;
    r.descriptor = clf.centroids[k + 1];
    r.adapter = load_adapter_file(layout.adapter(name));
    r.generators = load_gan_file(layout, name);
    memory.store(std::move(r));
  }
}

json evaluate(const PipelineConfig& cfg) {
  StageClock clock("evaluate");
  const Layout layout{cfg.output_dir};
  const FrozenTasks tasks = load_tasks(layout);
  const ClassifierBundle clf = load_classifier_bundle(layout);
  const ParameterMemory memory = open_memory(layout);
  const Dataset ref_test = load_split(layout, "reference", "test");
  const auto [db, ref_queries] = db_query_halves(ref_test);
  const Tensor db_desc = describe(tasks.retrieval, db.images);
  fs::create_directories(layout.metrics_dir());

  std::vector<std::string> rows{"reference"};
  rows.insert(rows.end(), cfg.conditions.begin(), cfg.conditions.end());
  rows.push_back(cfg.held_out);

  json per = json::array();
  std::string seg_csv = "condition,method,miou\n";
  std::string ret_csv = "condition,method,auc,top1\n";
  std::string pr_csv = "condition,method,threshold,precision,recall\n";
  std::vector<Tensor> confusion_sets;
  std::vector<Tensor> descriptor_sets;

  for (std::size_t k = 0; k < rows.size(); ++k) {
    const std::string& name = rows[k];
    const bool held = k + 1 == rows.size();
    const Dataset test = load_split(layout, name, "test");
    const Dataset queries = db_query_halves(test).second;

    std::map<std::string, std::pair<Tensor, Tensor>> methods;  // full test set, query half
    methods["none"] = {test.images, queries.images};
    if (!held) {
      const Adapter& own = memory.query_by_index(static_cast<int>(k))->adapter;
      methods["adapter"] = {adapt(own, test.images), adapt(own, queries.images)};
    }
    std::vector<int> chosen;
    const Tensor selected = adapt_selected(clf.classifier, memory, test.images, &chosen);
    methods["selected"] = {selected, adapt_selected(clf.classifier, memory, queries.images, nullptr)};

    json row = {{"condition", name}, {"held_out", held}};
    for (const auto& [method, imgs] : methods) {
      const double m = seg_miou_on(tasks, imgs.first, test);
      const RetrievalResult r = retrieval_on(tasks, db_desc, db, imgs.second, queries);
      row["miou_" + method] = m;
      row["auc_" + method] = r.auc;
      row["top1_" + method] = r.top1;
      seg_csv += name + "," + method + "," + num(m) + "\n";
      ret_csv += name + "," + method + "," + num(r.auc) + "," + num(r.top1) + "\n";
      for (const auto& p : r.curve) {
        pr_csv += name + "," + method + "," + num(p.threshold) + "," + num(p.precision) + "," + num(p.recall) + "\n";
      }
    }
    if (!held) {
      const auto correct = std::count(chosen.begin(), chosen.end(), static_cast<int>(k));
      row["selection_agreement"] = static_cast<double>(correct) / static_cast<double>(chosen.size());
      confusion_sets.push_back(test.images);
    }
    descriptor_sets.push_back(extract_descriptor(clf.classifier, test.images));
    per.push_back(row);
  }

  const ConfusionMatrix cm = confusion_matrix(clf.classifier, confusion_sets);
  std::string cm_csv = "true\\predicted";
  for (std::size_t j = 0; j < cm.size(); ++j) cm_csv += "," + rows[j];
  cm_csv += "\n";
  for (std::size_t i = 0; i < cm.size(); ++i) {
    cm_csv += rows[i];
    for (auto v : cm[i]) cm_csv += "," + std::to_string(v);
    cm_csv += "\n";
  }

  // Mean pairwise descriptor distance within and between conditions.
  double within = 0.0, between = 0.0;
  std::size_t n_within = 0, n_between = 0;
  for (std::size_t a = 0; a < descriptor_sets.size(); ++a) {
    for (std::size_t b = a; b < descriptor_sets.size(); ++b) {
      const Tensor& da = descriptor_sets[a];
      const Tensor& dbs = descriptor_sets[b];
      const std::size_t dim = da.dim(1);
      for (std::size_t i = 0; i < da.dim(0); ++i) {
        for (std::size_t j = (a == b ? i + 1 : 0); j < dbs.dim(0); ++j) {
          const double d = euclidean(da.data().subspan(i * dim, dim), dbs.data().subspan(j * dim, dim));
          if (a == b) {
            within += d;
            ++n_within;
          } else {
            between += d;
            ++n_between;
          }
        }
      }
    }
  }

  double raw_m = 0, ad_m = 0, raw_a = 0, ad_a = 0, min_gain = std::numeric_limits<double>::infinity();
  for (std::size_t k = 1; k <= cfg.conditions.size(); ++k) {
    const json& r = per[k];
    raw_m += r["miou_none"].get<double>();
    ad_m += r["miou_adapter"].get<double>();
    raw_a += r["auc_none"].get<double>();
    ad_a += r["auc_adapter"].get<double>();
    min_gain = std::min(min_gain, r["miou_adapter"].get<double>() - r["miou_none"].get<double>());
  }
  const double n = static_cast<double>(cfg.conditions.size());
  json out = {
      {"rows", per},
      {"summary",
       {{"mean_miou_none", raw_m / n},
        {"mean_miou_adapter", ad_m / n},
        {"mean_miou_gain", (ad_m - raw_m) / n},
        {"min_condition_miou_gain", min_gain},
        {"mean_auc_none", raw_a / n},
        {"mean_auc_adapter", ad_a / n},
        {"mean_auc_gain", (ad_a - raw_a) / n},
        {"reference_identity_delta_miou", per[0]["miou_adapter"].get<double>() - per[0]["miou_none"].get<double>()}}},
      {"classifier",
       {{"classes", std::vector<std::string>(rows.begin(), rows.end() - 1)},
        {"confusion", cm},
        {"accuracy", accuracy(cm)},
        {"descriptor_within_mean", within / static_cast<double>(n_within)},
        {"descriptor_between_mean", between / static_cast<double>(n_between)}}},
  };
  write_text_atomic(layout.metrics_dir() / "seg_miou.csv", seg_csv);
  write_text_atomic(layout.metrics_dir() / "retrieval_auc.csv", ret_csv);
  write_text_atomic(layout.metrics_dir() / "pr_curves.csv", pr_csv);
  write_text_atomic(layout.metrics_dir() / "confusion.csv", cm_csv);
  write_json(layout.evaluation(), out);
  return out;
}

json online_run(const PipelineConfig& cfg) {
  StageClock clock("online-run");
  const Layout layout{cfg.output_dir};
  const FrozenTasks tasks = load_tasks(layout);
  const ClassifierBundle clf = load_classifier_bundle(layout);
  const PseudoGtBundle gt = load_pseudo_gt(layout.pseudo_gt());
  const ParameterMemory offline = open_memory(layout);
  const Dataset ref_train = load_split(layout, "reference", "train");
  const Dataset ref_val = load_split(layout, "reference", "val");
  const Dataset ref_test = load_split(layout, "reference", "test");
  const Dataset held = load_split(layout, cfg.held_out, "test");

  // The episode works on a copy so build-memory's output stays as built.
  const fs::path mem_dir = layout.online_dir() / "memory";
  reset_directory(layout.online_dir());
  offline.save(mem_dir);
  ParameterMemory memory = ParameterMemory::open(mem_dir);

  std::map<int, std::pair<std::uint64_t, std::uint64_t>> seed_hashes;
  for (const auto& r : offline.records()) {
    seed_hashes[r->id] = {r->adapter.params.hash(), r->generators ? r->generators->hash() : 0};
  }

  NoveltyPolicy policy{clf.tau, cfg.online.min_fill, cfg.online.buffer};
  Orchestrator orch(clf.classifier, memory, policy, cfg.online.buffer);
  OnlineConfig ocfg;
  ocfg.gan = cfg.gan;
  ocfg.gan.steps = cfg.online.gan_steps;
  ocfg.gan.dump_path = layout.online_dir() / "gan_abort.json";
  ocfg.adapter = cfg.online.adapter;
  ocfg.weighting = cfg.weighting;
  ocfg.seed = cfg.online.seed;
  ocfg.id_floor = static_cast<int>(cfg.conditions.size());
  const OnlineContext ctx{clf.classifier, tasks, ref_train, gt.train, ref_val, gt.val};

  json out;
  // Reference segment: one full buffer of reference frames.
  std::optional<NoveltyResult> ref_novelty;
  for (std::size_t i = 0; i < cfg.online.buffer; ++i) {
    const FrameResult f = orch.process(ref_test.images.slice_batch(i));
    if (f.novelty) ref_novelty = f.novelty;
  }
  if (!ref_novelty) throw ContractViolation("reference segment never filled the buffer");
  out["reference_segment"] = {
      {"novel", ref_novelty->novel}, {"nearest_id", ref_novelty->nearest_id}, {"distance", ref_novelty->distance}};

  // Held-out stream until an episode is requested, then adapt and keep serving.
  std::optional<OnlineOutcome> outcome;
  std::optional<NoveltyResult> trigger_novelty;
  std::size_t trigger_frame = 0;
  std::map<int, std::size_t> served_after;
  for (std::size_t i = 0; i < held.size(); ++i) {
    const FrameResult f = orch.process(held.images.slice_batch(i));
    if (outcome) ++served_after[f.record_id];
    if (!outcome && f.request_episode) {
      trigger_novelty = f.novelty;
      trigger_frame = i;
      outcome = orch.adapt_online(ctx, ocfg);
    }
  }
  tasks.verify();
  orch.log().write_jsonl(layout.online_dir() / "events.jsonl");
  if (!outcome) {
    out["episode"] = nullptr;
    write_json(layout.online_summary(), out);
    return out;
  }

  const NoveltyResult after = orch.detect_novelty();
  bool seeds_unchanged = true;
  for (const auto& r : memory.records()) {
    auto it = seed_hashes.find(r->id);
    if (it == seed_hashes.end()) continue;
    const std::uint64_t g = r->generators ? r->generators->hash() : 0;
    seeds_unchanged = seeds_unchanged && r->adapter.params.hash() == it->second.first && g == it->second.second;
  }
  const auto [db, ref_q] = db_query_halves(ref_test);
  const Tensor db_desc = describe(tasks.retrieval, db.images);
  const Dataset queries = db_query_halves(held).second;
  const Adapter& learned = outcome->record->adapter;
  const Adapter& parent = memory.query_by_index(outcome->adapter_parent)->adapter;
  const double miou_raw = seg_miou_on(tasks, held.images, held);
  const double miou_new = seg_miou_on(tasks, adapt(learned, held.images), held);
  const double miou_parent = seg_miou_on(tasks, adapt(parent, held.images), held);
  const double auc_raw = retrieval_on(tasks, db_desc, db, queries.images, queries).auc;
  const double auc_new = retrieval_on(tasks, db_desc, db, adapt(learned, queries.images), queries).auc;
  json served = json::object();
  for (const auto& [id, count] : served_after) served[std::to_string(id)] = count;

  out["episode"] = {{"trigger_frame", trigger_frame},
                    {"trigger_distance", trigger_novelty->distance},
                    {"trigger_nearest_id", trigger_novelty->nearest_id},
                    {"tau", clf.tau},
                    {"new_id", outcome->record->id},
                    {"gan_parent", outcome->gan_parent},
                    {"adapter_parent", outcome->adapter_parent},
                    {"best_epoch", outcome->training.best_epoch},
                    {"curve", curve_json(outcome->training.curve)},
                    {"memory_size_before", offline.size()},
                    {"memory_size_after", memory.size()},
                    {"after_novel", after.novel},
                    {"after_nearest_id", after.nearest_id},
                    {"after_distance", after.distance},
                    {"seeds_unchanged", seeds_unchanged},
                    {"miou_none", miou_raw},
                    {"miou_online", miou_new},
                    {"miou_parent", miou_parent},
                    {"miou_gain", miou_new - miou_raw},
                    {"auc_none", auc_raw},
                    {"auc_online", auc_new},
                    {"auc_gain", auc_new - auc_raw},
                    {"frames_served_after", served}};
  write_json(layout.online_summary(), out);
  return out;
}

json report(const PipelineConfig& cfg) {
  StageClock clock("report");
  const Layout layout{cfg.output_dir};
  json m;
  m["config"] = cfg.to_json();
  m["config"].erase("output_dir");
  m["tasks"] = read_json(layout.tasks_summary(), "train-tasks");
  json gans = json::object();
  for (const auto& name : cfg.conditions) gans[name] = read_json(layout.gan_summary(name), "train-gan");
  m["gan"] = gans;
  m["adapters"] = read_json(layout.adapters_summary(), "train-adapters");
  m["classifier"] = read_json(layout.classifier_summary(), "train-classifier");
  m["evaluate"] = read_json(layout.evaluation(), "evaluate");
  m["online"] = read_json(layout.online_summary(), "online-run");
  write_json(layout.metrics(), m);

  // Manifest of every output file with its size and content hash.
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(layout.root)) {
    if (e.is_regular_file() && e.path() != layout.manifest()) files.push_back(fs::relative(e.path(), layout.root));
  }
  std::sort(files.begin(), files.end());
  json entries = json::array();
  for (const auto& f : files) {
    const std::string bytes = read_text(layout.root / f);
    const auto* p = reinterpret_cast<const std::uint8_t*>(bytes.data());
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(std::span<const std::uint8_t>(p, bytes.size()))));
    entries.push_back({{"path", f.generic_string()}, {"bytes", bytes.size()}, {"fnv1a64", hex}});
  }
  write_json(layout.manifest(), {{"files", entries}});
  return m;
}

json run_all(const PipelineConfig& cfg) {
  gen_data(cfg);
  train_tasks(cfg);
  pseudo_gt(cfg);
  train_gan(cfg);
  train_adapters(cfg);
  train_classifier(cfg);
  build_memory(cfg);
  evaluate(cfg);
  online_run(cfg);
  return report(cfg);
}

}  // namespace pipeline

}  // namespace adaptkit
