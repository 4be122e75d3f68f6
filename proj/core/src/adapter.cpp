#include "adaptkit/adapter.hpp"

#include <cmath>
#include <limits>

#include "adaptkit/adam.hpp"
#include "adaptkit/errors.hpp"
#include "adaptkit/nn.hpp"
#include "adaptkit/ops.hpp"
#include "adaptkit/rng.hpp"

namespace adaptkit {

namespace {

constexpr std::size_t kInferBatch = 32;

std::string res_name(int block, int conv) { return "res" + std::to_string(block) + "." + std::to_string(conv); }

void check_alignment(const Dataset& data, const PseudoGroundTruth& gt) {
  if (data.size() != gt.size() || gt.jitter_seeds != data.jitter_seeds) {
    throw ContractViolation("generated set is not row-aligned with its pseudo ground truth");
  }
}

}  // namespace

Adapter init_adapter(const AdapterArch& arch, Rng& rng) {
  Adapter a;
  a.arch = arch;
  ParamSet& p = a.params;
  nn::add_conv(p, "enc1", 3, arch.width1, 4, rng);
  nn::add_conv(p, "enc2", arch.width1, arch.width2, 4, rng);
  nn::add_norm(p, "enc2.n", arch.width2);
  nn::add_conv(p, "enc3", arch.width2, arch.width3, 4, rng);
  nn::add_norm(p, "enc3.n", arch.width3);
  for (int r = 0; r < arch.res_blocks; ++r) {
    for (int c = 0; c < 2; ++c) {
      nn::add_conv(p, res_name(r, c), arch.width3, arch.width3, 3, rng);
      nn::add_norm(p, res_name(r, c) + ".n", arch.width3);
    }
  }
  nn::add_conv_transpose(p, "dec3", arch.width3, arch.width2, 4, rng);
  nn::add_conv_transpose(p, "dec2", 2 * arch.width2, arch.width1, 4, rng);
  nn::add_conv_transpose(p, "dec1", 2 * arch.width1, arch.width1, 4, rng);
  nn::add_conv(p, "head1", arch.width1 + 3, arch.head, 3, rng);
  nn::add_conv(p, "head2", arch.head, 3, 1, rng);
  // A zero output layer makes the fresh adapter the identity (up to clamping).
  p["head2.w"].value.fill(0.0f);
  return a;
}

Var adapter_forward(Binder& b, const AdapterArch& arch, Var images) {
  Var e1 = ops::relu(nn::conv(b, "enc1", images, 2, 1));
  Var e2 = ops::relu(nn::norm(b, "enc2.n", nn::conv(b, "enc2", e1, 2, 1)));
  Var x = ops::relu(nn::norm(b, "enc3.n", nn::conv(b, "enc3", e2, 2, 1)));
  for (int r = 0; r < arch.res_blocks; ++r) {
    Var h = ops::relu(nn::norm(b, res_name(r, 0) + ".n", nn::conv(b, res_name(r, 0), x, 1, 1)));
    h = nn::norm(b, res_name(r, 1) + ".n", nn::conv(b, res_name(r, 1), h, 1, 1));
    x = ops::add(x, h);
  }
  Var d = ops::relu(nn::conv_transpose(b, "dec3", x, 2, 1));
  d = ops::relu(nn::conv_transpose(b, "dec2", ops::concat_channels(d, e2), 2, 1));
  d = ops::relu(nn::conv_transpose(b, "dec1", ops::concat_channels(d, e1), 2, 1));
  Var h = ops::relu(nn::conv(b, "head1", ops::concat_channels(d, images), 1, 1));
  return ops::sigmoid(ops::add(ops::logit(images), nn::conv(b, "head2", h, 1, 0)));
}

Tensor adapt(const Adapter& adapter, const Tensor& images) {
  return nn::infer(adapter.params, images, kInferBatch,
                   [&](Binder& b, Var x) { return adapter_forward(b, adapter.arch, x); });
}

void TaskWeighting::validate() const {
  if (seg < 0 || ret < 0) throw ConfigError("task weights must be non-negative");
  if (seg == 0 && ret == 0) throw ConfigError("at least one task weight must be positive");
}

Adapter pretrain_identity(const Dataset& reference, const AdapterArch& arch, const AdapterTrainConfig& cfg) {
  Rng rng(cfg.seed);
  Rng init_rng = rng.split(0);
  Adapter a = init_adapter(arch, init_rng);
  Adam adam(AdamHyper{cfg.lr, cfg.beta1, cfg.beta2, 1e-8});
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng epoch_rng = rng.split(epoch + 1);
    auto batches = nn::minibatches(reference.size(), cfg.batch, epoch_rng);
    if (cfg.steps_per_epoch > 0 && batches.size() > cfg.steps_per_epoch) batches.resize(cfg.steps_per_epoch);
    for (const auto& batch : batches) {
      Tape tape;
      Binder b(tape, a.params, true);
      Var x = tape.constant(reference.images.gather_batch(batch));
      Var loss = ops::l1_loss(adapter_forward(b, arch, x), x);
      a.params.zero_grad();
      tape.backward(loss);
      adam.step(a.params);
    }
  }
  return a;
}

Var task_supervision_loss(Var adapted, std::span<const std::size_t> rows, const PseudoGroundTruth& gt,
                          const FrozenTasks& tasks, const TaskWeighting& weighting) {
  weighting.validate();
  const Shape& s = adapted.shape();
  if (s.size() != 4 || s[0] != rows.size()) throw DimensionError("task_supervision_loss: one row index per image");
  for (auto r : rows) {
    if (r >= gt.size()) throw ContractViolation("no pseudo ground truth entry for row " + std::to_string(r));
  }
  Tape& tape = adapted.tape();
  Var total;
  if (weighting.seg > 0) {
    const std::size_t pixels = s[2] * s[3];
    if (gt.labels.size() != gt.size() * pixels) throw DimensionError("pseudo labels do not match image size");
    std::vector<int> labels;
    labels.reserve(rows.size() * pixels);
    for (auto r : rows) labels.insert(labels.end(), gt.labels.begin() + r * pixels, gt.labels.begin() + (r + 1) * pixels);
    Binder seg(tape, tasks.segmentation.params);
    Var ce = ops::softmax_cross_entropy(ops::channels_last(segmentation_logits(seg, tasks.segmentation, adapted)),
                                        labels);
    total = ops::scale(ce, static_cast<float>(weighting.seg));
  }
  if (weighting.ret > 0) {
    Binder ret(tape, tasks.retrieval.params);
    Var target = tape.constant(gt.descriptors.gather_batch(rows));
    Var d = ops::squared_l2(retrieval_descriptor(ret, tasks.retrieval, adapted), target);
    Var term = ops::scale(d, static_cast<float>(weighting.ret));
    total = total.valid() ? ops::add(total, term) : term;
  }
  return total;
}

double validation_loss(const Adapter& adapter, const Dataset& data, const PseudoGroundTruth& gt,
                       const FrozenTasks& tasks, const TaskWeighting& weighting) {
  check_alignment(data, gt);
  double acc = 0.0;
  for (std::size_t begin = 0; begin < data.size(); begin += kInferBatch) {
    const std::size_t end = std::min(data.size(), begin + kInferBatch);
    std::vector<std::size_t> rows(end - begin);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = begin + i;
    Tape tape;
    Binder b(tape, adapter.params);
    Var adapted = adapter_forward(b, adapter.arch, tape.constant(data.images.gather_batch(rows)));
    acc += task_supervision_loss(adapted, rows, gt, tasks, weighting).value().item() * static_cast<double>(rows.size());
  }
  return acc / static_cast<double>(data.size());
}

AdapterTrainResult train_adapter(int condition_id, const Dataset& generated, const PseudoGroundTruth& gt,
                                 const Dataset& generated_val, const PseudoGroundTruth& gt_val, const Adapter& seed,
                                 const FrozenTasks& tasks, const TaskWeighting& weighting,
                                 const AdapterTrainConfig& cfg) {
  weighting.validate();
  tasks.verify();
  check_alignment(generated, gt);
  check_alignment(generated_val, gt_val);

  AdapterTrainResult result;
  Adapter current = seed;
  current.condition_id = condition_id;
  double best = validation_loss(current, generated_val, gt_val, tasks, weighting);
  result.adapter = current;
  result.curve.push_back({0, std::numeric_limits<double>::quiet_NaN(), best});

  Adam adam(AdamHyper{cfg.lr, cfg.beta1, cfg.beta2, 1e-8});
  Rng rng(cfg.seed);
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng epoch_rng = rng.split(epoch);
    auto batches = nn::minibatches(generated.size(), cfg.batch, epoch_rng);
    if (cfg.steps_per_epoch > 0 && batches.size() > cfg.steps_per_epoch) batches.resize(cfg.steps_per_epoch);
    double train_acc = 0.0;
    for (const auto& rows : batches) {
      Tape tape;
      Binder b(tape, current.params, true);
      Var adapted = adapter_forward(b, current.arch, tape.constant(generated.images.gather_batch(rows)));
      Var loss = task_supervision_loss(adapted, rows, gt, tasks, weighting);
      train_acc += loss.value().item();
      current.params.zero_grad();
      tape.backward(loss);
      adam.step(current.params);
    }
    const double val = validation_loss(current, generated_val, gt_val, tasks, weighting);
    result.curve.push_back({epoch, train_acc / static_cast<double>(batches.size()), val});
    if (val < best) {
      best = val;
      result.adapter = current;
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  tasks.verify();
  return result;
}

void add_adapter(Container& c, const Adapter& adapter, const std::string& prefix) {
  c.add_params(adapter.params, prefix);
  c.attributes()[prefix + "adapter"] = {{"width1", adapter.arch.width1},   {"width2", adapter.arch.width2},
                                        {"width3", adapter.arch.width3},   {"res_blocks", adapter.arch.res_blocks},
                                        {"head", adapter.arch.head},       {"condition_id", adapter.condition_id}};
}

Adapter load_adapter(const Container& c, const std::string& prefix) {
  Adapter a;
  try {
    const auto& j = c.attributes().at(prefix + "adapter");
    a.arch = {j.at("width1").get<std::size_t>(), j.at("width2").get<std::size_t>(), j.at("width3").get<std::size_t>(),
              j.at("res_blocks").get<int>(), j.at("head").get<std::size_t>()};
    a.condition_id = j.at("condition_id").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCheckpointError(std::string("missing adapter attributes: ") + e.what());
  }
  a.params = c.params(prefix);
  if (a.params.empty()) throw CorruptCheckpointError("container lacks adapter parameters under '" + prefix + "'");
  return a;
}

}  // namespace adaptkit
