#include "adaptkit/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "adaptkit/adam.hpp"
#include "adaptkit/errors.hpp"
#include "adaptkit/nn.hpp"
#include "adaptkit/ops.hpp"
#include "adaptkit/rng.hpp"

namespace adaptkit {

namespace {

constexpr std::size_t kInferBatch = 64;

}  // namespace

std::string to_string(TaskKind kind) { return kind == TaskKind::segmentation ? "segmentation" : "retrieval"; }

void TaskNet::freeze() {
  frozen = true;
  frozen_hash = params.hash();
}

void TaskNet::verify_frozen() const {
  if (!frozen) throw FrozenTaskViolation(to_string(kind) + " network is not frozen");
  if (params.hash() != frozen_hash) {
    throw FrozenTaskViolation(to_string(kind) + " network parameters changed after freezing");
  }
}

TaskNet init_segmentation_net(const SegNetArch& arch, std::size_t height, std::size_t width, Rng& rng) {
  TaskNet net;
  net.kind = TaskKind::segmentation;
  const std::size_t w = arch.width;
  nn::add_conv(net.params, "c1", 3, w, 3, rng);
  nn::add_conv(net.params, "c2", w, w, 3, rng);
  nn::add_conv(net.params, "c3", w, w, 3, rng);
  nn::add_conv(net.params, "head", w, static_cast<std::size_t>(arch.classes), 1, rng);
  net.arch = {{"width", w}, {"classes", arch.classes}, {"height", height}, {"image_width", width}};
  return net;
}

TaskNet init_retrieval_net(const RetrievalNetArch& arch, std::size_t height, std::size_t width, Rng& rng) {
  TaskNet net;
  net.kind = TaskKind::retrieval;
  nn::add_conv(net.params, "c1", 3, arch.width1, 4, rng);
  nn::add_conv(net.params, "c2", arch.width1, arch.width2, 4, rng);
  nn::add_conv(net.params, "c3", arch.width2, arch.width3, 4, rng);
  const std::size_t flat = arch.width3 * (height / 8) * (width / 8);
  nn::add_linear(net.params, "embed", flat, arch.descriptor, rng);
  nn::add_linear(net.params, "places", arch.descriptor, static_cast<std::size_t>(arch.places), rng);
  net.arch = {{"width1", arch.width1}, {"width2", arch.width2}, {"width3", arch.width3},
              {"descriptor", arch.descriptor}, {"places", arch.places}, {"height", height},
              {"image_width", width}};
  return net;
}

Var segmentation_logits(Binder& b, const TaskNet& net, Var images) {
  if (net.kind != TaskKind::segmentation) throw ContractViolation("not a segmentation network");
  Var x = ops::relu(nn::conv(b, "c1", images, 1, 1));
  x = ops::relu(nn::conv(b, "c2", x, 1, 1));
  x = ops::relu(nn::conv(b, "c3", x, 1, 1));
  return nn::conv(b, "head", x, 1, 0);
}

Var retrieval_descriptor(Binder& b, const TaskNet& net, Var images) {
  if (net.kind != TaskKind::retrieval) throw ContractViolation("not a retrieval network");
  Var x = ops::relu(nn::conv(b, "c1", images, 2, 1));
  x = ops::relu(nn::conv(b, "c2", x, 2, 1));
  x = ops::relu(nn::conv(b, "c3", x, 2, 1));
  const std::size_t n = x.shape()[0];
  x = ops::reshape(x, {n, x.value().numel() / n});
  return ops::l2_normalize(nn::dense(b, "embed", x));
}

Var retrieval_place_logits(Binder& b, const TaskNet& net, Var descriptors) {
  (void)net;
  // Unit-norm descriptors bound the logits; a fixed scale lets softmax saturate.
  return nn::dense(b, "places", ops::scale(descriptors, 8.0f));
}

std::vector<std::uint8_t> segment(const TaskNet& net, const Tensor& images) {
  const Tensor logits = nn::infer(net.params, images, kInferBatch,
                                  [&](Binder& b, Var x) { return segmentation_logits(b, net, x); });
  const auto labels = ops::argmax_channels(logits);
  return {labels.begin(), labels.end()};
}

Tensor describe(const TaskNet& net, const Tensor& images) {
  return nn::infer(net.params, images, kInferBatch,
                   [&](Binder& b, Var x) { return retrieval_descriptor(b, net, x); });
}

namespace {

template <typename LossFn>
void train_loop(TaskNet& net, const Dataset& train, const TaskTrainConfig& cfg, LossFn&& loss_fn) {
  Adam adam(AdamHyper{cfg.lr, 0.9, 0.999, 1e-8});
  Rng rng(cfg.seed);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng epoch_rng = rng.split(epoch);
    for (const auto& batch : nn::minibatches(train.size(), cfg.batch, epoch_rng)) {
      Tape tape;
      Binder b(tape, net.params, true);
      Var loss = loss_fn(b, tape.constant(train.images.gather_batch(batch)), batch);
      net.params.zero_grad();
      tape.backward(loss);
      adam.step(net.params);
    }
  }
}

}  // namespace

TaskNet train_segmentation(const Dataset& train, const Dataset& check, const SegNetArch& arch,
                           const TaskTrainConfig& cfg) {
  Rng rng(cfg.seed);
  TaskNet net = init_segmentation_net(arch, train.height(), train.width(), rng);
  const std::size_t pixels = train.pixels();
  train_loop(net, train, cfg, [&](Binder& b, Var images, const std::vector<std::size_t>& batch) {
    std::vector<int> labels;
    labels.reserve(batch.size() * pixels);
    for (auto i : batch) {
      const auto m = train.mask(i);
      labels.insert(labels.end(), m.begin(), m.end());
    }
    return ops::softmax_cross_entropy(ops::channels_last(segmentation_logits(b, net, images)), labels);
  });
  const double score = segmentation_miou(net, check);
  if (score < cfg.target) {
    std::ostringstream os;
    os << "segmentation net reached mIOU " << score << " < target " << cfg.target << " after " << cfg.epochs
       << " epochs (width " << arch.width << ", lr " << cfg.lr << "); raise the epoch budget or width";
    throw ConfigError(os.str());
  }
  net.freeze();
  return net;
}

TaskNet train_retrieval(const Dataset& train, const Dataset& check, const RetrievalNetArch& arch,
                        const TaskTrainConfig& cfg) {
  Rng rng(cfg.seed);
  TaskNet net = init_retrieval_net(arch, train.height(), train.width(), rng);
  train_loop(net, train, cfg, [&](Binder& b, Var images, const std::vector<std::size_t>& batch) {
    std::vector<int> places;
    for (auto i : batch) places.push_back(train.place_ids[i]);
    return ops::softmax_cross_entropy(retrieval_place_logits(b, net, retrieval_descriptor(b, net, images)), places);
  });
  const auto [db, queries] = db_query_halves(check);
  const double top1 = retrieval_eval(net, db, queries).top1;
  if (top1 < cfg.target) {
    std::ostringstream os;
    os << "retrieval net reached top-1 " << top1 << " < target " << cfg.target << " after " << cfg.epochs
       << " epochs; raise the epoch budget";
    throw ConfigError(os.str());
  }
  net.freeze();
  return net;
}

PseudoGroundTruth compute_pseudo_gt(const Dataset& reference, const FrozenTasks& tasks) {
  tasks.verify();
  for (int c : reference.condition_ids) {
    if (c != 0) throw ContractViolation("pseudo ground truth is only computed on reference renders");
  }
  PseudoGroundTruth gt;
  gt.labels = segment(tasks.segmentation, reference.images);
  gt.descriptors = describe(tasks.retrieval, reference.images);
  gt.source_hash = reference.hash();
  gt.jitter_seeds = reference.jitter_seeds;
  return gt;
}

double miou(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt, int num_classes) {
  if (pred.size() != gt.size()) throw DimensionError("miou: prediction and ground truth sizes differ");
  if (num_classes < 1) throw ContractViolation("miou: num_classes must be positive");
  std::vector<std::size_t> inter(static_cast<std::size_t>(num_classes)), uni(inter.size()), present(inter.size());
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const int p = pred[i], g = gt[i];
    if (p >= num_classes || g >= num_classes) throw ContractViolation("miou: class id out of range");
    ++present[static_cast<std::size_t>(g)];
    if (p == g) {
      ++inter[static_cast<std::size_t>(g)];
      ++uni[static_cast<std::size_t>(g)];
    } else {
      ++uni[static_cast<std::size_t>(g)];
      ++uni[static_cast<std::size_t>(p)];
    }
  }
  double total = 0.0;
  int counted = 0;
  for (std::size_t c = 0; c < inter.size(); ++c) {
    if (present[c] == 0) continue;
    total += static_cast<double>(inter[c]) / static_cast<double>(uni[c]);
    ++counted;
  }
  if (counted == 0) throw ContractViolation("miou: empty ground truth");
  return total / counted;
}

double trapezoid_auc(std::span<const PrPoint> curve) {
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    area += (curve[i].recall - curve[i - 1].recall) * 0.5 * (curve[i].precision + curve[i - 1].precision);
  }
  return area;
}

RetrievalResult evaluate_retrieval(const Tensor& query_desc, std::span<const int> query_places,
                                   const Tensor& db_desc, std::span<const int> db_places) {
  if (query_desc.rank() != 2 || db_desc.rank() != 2 || query_desc.dim(1) != db_desc.dim(1)) {
    throw DimensionError("evaluate_retrieval: descriptors must be Q×D and M×D");
  }
  const std::size_t Q = query_desc.dim(0), M = db_desc.dim(0), D = query_desc.dim(1);
  if (query_places.size() != Q || db_places.size() != M) throw DimensionError("evaluate_retrieval: id count mismatch");

  RetrievalResult r;
  std::size_t positives = 0, top1 = 0;
  for (std::size_t q = 0; q < Q; ++q) {
    double best = INFINITY;
    std::size_t best_j = 0;
    bool has_match = false;
    for (std::size_t j = 0; j < M; ++j) {
      double d2 = 0.0;
      for (std::size_t k = 0; k < D; ++k) {
        const double diff = static_cast<double>(query_desc[q * D + k]) - db_desc[j * D + k];
        d2 += diff * diff;
      }
      if (d2 < best) best = d2, best_j = j;
      has_match = has_match || db_places[j] == query_places[q];
    }
    positives += has_match;
    const bool correct = db_places[best_j] == query_places[q];
    top1 += correct;
    r.matches.push_back({q, best_j, std::sqrt(best), correct});
  }
  r.top1 = Q ? static_cast<double>(top1) / static_cast<double>(Q) : 0.0;

  std::vector<RetrievalMatch> sorted = r.matches;
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const auto& a, const auto& b) { return a.distance < b.distance; });
  r.curve.push_back({0.0, 1.0, 0.0});
  std::size_t accepted = 0, tp = 0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    ++accepted;
    tp += sorted[i].correct;
    // Equal distances enter together: a threshold cannot separate them.
    if (i + 1 < sorted.size() && sorted[i + 1].distance == sorted[i].distance) continue;
    const double precision = static_cast<double>(tp) / static_cast<double>(accepted);
    const double recall = positives ? static_cast<double>(tp) / static_cast<double>(positives) : 0.0;
    r.curve.push_back({sorted[i].distance, precision, recall});
  }
  r.auc = trapezoid_auc(r.curve);
  return r;
}

double segmentation_miou(const TaskNet& seg, const Dataset& data) {
  return miou(segment(seg, data.images), data.masks, kNumClasses);
}

RetrievalResult retrieval_eval(const TaskNet& ret, const Dataset& db, const Dataset& queries) {
  return evaluate_retrieval(describe(ret, queries.images), queries.place_ids, describe(ret, db.images), db.place_ids);
}

std::pair<Dataset, Dataset> db_query_halves(const Dataset& test) {
  const std::size_t n = test.size();
  if (n < 2) throw ContractViolation("test set too small to split into database and queries");
  return {test.range(0, n / 2), test.range(n / 2, n)};
}

void add_task_net(Container& c, const TaskNet& net, const std::string& prefix) {
  if (!net.frozen) throw ContractViolation("only frozen task networks are stored");
  c.add_params(net.params, prefix);
  c.attributes()[prefix + "task"] = {
      {"kind", to_string(net.kind)}, {"arch", net.arch}, {"frozen_hash", std::to_string(net.frozen_hash)}};
}

TaskNet load_task_net(const Container& c, const std::string& prefix) {
  TaskNet net;
  std::uint64_t stored = 0;
  try {
    const auto& j = c.attributes().at(prefix + "task");
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "segmentation") {
      net.kind = TaskKind::segmentation;
    } else if (kind == "retrieval") {
      net.kind = TaskKind::retrieval;
    } else {
      throw CorruptCheckpointError("unknown task kind '" + kind + "'");
    }
    net.arch = j.at("arch");
    stored = std::stoull(j.at("frozen_hash").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCheckpointError(std::string("bad task attributes: ") + e.what());
  }
  net.params = c.params(prefix);
  net.freeze();
  if (net.frozen_hash != stored) throw CorruptCheckpointError("task network hash differs from the stored one");
  return net;
}

}  // namespace adaptkit
