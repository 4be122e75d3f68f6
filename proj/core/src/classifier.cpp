#include "adaptkit/classifier.hpp"

#include <cmath>

#include "adaptkit/adam.hpp"
#include "adaptkit/errors.hpp"
#include "adaptkit/nn.hpp"
#include "adaptkit/ops.hpp"
#include "adaptkit/rng.hpp"

namespace adaptkit {

namespace {

constexpr std::size_t kInferBatch = 64;

}  // namespace

ConditionClassifier init_classifier(const ClassifierArch& arch, Rng& rng) {
  if (arch.height % 16 != 0 || arch.width % 16 != 0) throw ConfigError("classifier input must be divisible by 16");
  ConditionClassifier c;
  c.arch = arch;
  nn::add_conv(c.params, "c1", 3, arch.conv1, 4, rng);
  nn::add_conv(c.params, "c2", arch.conv1, arch.conv2, 4, rng);
  nn::add_conv(c.params, "c3", arch.conv2, arch.conv3, 4, rng);
  nn::add_conv(c.params, "c4", arch.conv3, arch.conv4, 4, rng);
  const std::size_t flat = arch.conv4 * (arch.height / 16) * (arch.width / 16);
  nn::add_linear(c.params, "fc1", flat, arch.fc1, rng);
  nn::add_linear(c.params, "fc2", arch.fc1, arch.descriptor, rng);
  nn::add_linear(c.params, "fc3", arch.descriptor, arch.classes, rng);
  return c;
}

ClassifierOutputs classifier_forward(Binder& b, const ClassifierArch&, Var images) {
  Var x = ops::relu(nn::conv(b, "c1", images, 2, 1));
  x = ops::relu(nn::conv(b, "c2", x, 2, 1));
  x = ops::relu(nn::conv(b, "c3", x, 2, 1));
  x = ops::relu(nn::conv(b, "c4", x, 2, 1));
  const std::size_t n = x.shape()[0];
  x = ops::reshape(x, {n, x.value().numel() / n});
  x = ops::relu(nn::dense(b, "fc1", x));
  Var descriptor = nn::dense(b, "fc2", x);
  Var logits = nn::dense(b, "fc3", ops::relu(descriptor));
  return {logits, descriptor};
}

Tensor classify(const ConditionClassifier& c, const Tensor& images) {
  return ops::softmax(nn::infer(c.params, images, kInferBatch,
                                [&](Binder& b, Var x) { return classifier_forward(b, c.arch, x).logits; }));
}

std::vector<int> predict(const ConditionClassifier& c, const Tensor& images) {
  const Tensor p = classify(c, images);
  const std::size_t n = p.dim(0), k = p.dim(1);
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (p[i * k + j] > p[i * k + best]) best = j;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

Tensor extract_descriptor(const ConditionClassifier& c, const Tensor& images) {
  return nn::infer(c.params, images, kInferBatch,
                   [&](Binder& b, Var x) { return classifier_forward(b, c.arch, x).descriptor; });
}

std::vector<float> average_descriptor(const Tensor& d) {
  if (d.rank() != 2 || d.dim(0) == 0) throw ContractViolation("average_descriptor needs a non-empty N×D matrix");
  const std::size_t n = d.dim(0), k = d.dim(1);
  std::vector<double> acc(k, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) acc[j] += d[i * k + j];
  }
  std::vector<float> out(k);
  for (std::size_t j = 0; j < k; ++j) out[j] = static_cast<float>(acc[j] / static_cast<double>(n));
  return out;
}

std::vector<float> average_descriptor(const ConditionClassifier& c, const Tensor& images) {
  return average_descriptor(extract_descriptor(c, images));
}

double euclidean(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw DimensionError("descriptor lengths differ");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

ClassifierTrainResult train_classifier(std::span<const Tensor> train, std::span<const Tensor> val,
                                       std::vector<std::string> class_names, const ClassifierTrainConfig& cfg,
                                       const ClassifierArch& arch_template) {
  if (train.size() < 2 || val.size() != train.size() || class_names.size() != train.size()) {
    throw ContractViolation("classifier needs ≥2 classes with train, val and a name each");
  }
  ClassifierArch arch = arch_template;
  arch.classes = train.size();
  arch.height = train[0].dim(2);
  arch.width = train[0].dim(3);
  Rng rng(cfg.seed);
  Rng init_rng = rng.split(0);
  ClassifierTrainResult r;
  r.classifier = init_classifier(arch, init_rng);
  r.classifier.class_names = std::move(class_names);

  std::vector<Tensor> per_class(train.begin(), train.end());
  std::vector<int> labels;
  for (std::size_t k = 0; k < train.size(); ++k) labels.insert(labels.end(), train[k].dim(0), static_cast<int>(k));
  // Flatten into one pool; rows keep their class order.
  std::vector<Tensor> rows;
  for (const auto& t : per_class) {
    for (std::size_t i = 0; i < t.dim(0); ++i) rows.push_back(t.slice_batch(i));
  }
  const Tensor all = Tensor::stack(rows).reshaped({rows.size(), 3, arch.height, arch.width});

  Adam adam(AdamHyper{cfg.lr, 0.9, 0.999, 1e-8});
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng epoch_rng = rng.split(epoch + 1);
    double acc = 0.0;
    const auto batches = nn::minibatches(all.dim(0), cfg.batch, epoch_rng);
    for (const auto& batch : batches) {
      std::vector<int> y;
      for (auto i : batch) y.push_back(labels[i]);
      Tape tape;
      Binder b(tape, r.classifier.params, true);
      Var loss = ops::softmax_cross_entropy(classifier_forward(b, arch, tape.constant(all.gather_batch(batch))).logits, y);
      acc += loss.value().item();
      r.classifier.params.zero_grad();
      tape.backward(loss);
      adam.step(r.classifier.params);
    }
    r.epoch_loss.push_back(acc / static_cast<double>(batches.size()));
  }
  r.val_accuracy = accuracy(confusion_matrix(r.classifier, val));
  return r;
}

ConfusionMatrix confusion_matrix(const ConditionClassifier& c, std::span<const Tensor> test) {
  const std::size_t k = c.arch.classes;
  if (test.size() != k) throw ContractViolation("confusion_matrix needs one test set per class");
  ConfusionMatrix m(k, std::vector<std::size_t>(k, 0));
  for (std::size_t t = 0; t < k; ++t) {
    for (int p : predict(c, test[t])) ++m[t][static_cast<std::size_t>(p)];
  }
  return m;
}

double accuracy(const ConfusionMatrix& m) {
  std::size_t trace = 0, total = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    for (std::size_t j = 0; j < m[i].size(); ++j) {
      total += m[i][j];
      if (i == j) trace += m[i][j];
    }
  }
  if (total == 0) throw ContractViolation("accuracy of an empty confusion matrix");
  return static_cast<double>(trace) / static_cast<double>(total);
}

NoveltyCalibration calibrate_novelty(const ConditionClassifier& c, std::span<const Tensor> val, std::size_t window,
                                     double sigmas) {
  if (window == 0) throw ConfigError("novelty window must be positive");
  NoveltyCalibration cal;
  std::vector<double> dists;
  for (const auto& images : val) {
    if (images.dim(0) < window) throw ConfigError("validation set smaller than the novelty window");
    const Tensor d = extract_descriptor(c, images);
    cal.centroids.push_back(average_descriptor(d));
    const std::size_t n = d.dim(0), k = d.dim(1);
    for (std::size_t start = 0; start + window <= n; ++start) {
      std::vector<double> acc(k, 0.0);
      for (std::size_t i = start; i < start + window; ++i) {
        for (std::size_t j = 0; j < k; ++j) acc[j] += d[i * k + j];
      }
      std::vector<float> avg(k);
      for (std::size_t j = 0; j < k; ++j) avg[j] = static_cast<float>(acc[j] / static_cast<double>(window));
      dists.push_back(euclidean(avg, cal.centroids.back()));
    }
  }
  double mean = 0.0;
  for (double d : dists) mean += d;
  mean /= static_cast<double>(dists.size());
  double var = 0.0;
  for (double d : dists) var += (d - mean) * (d - mean);
  var /= static_cast<double>(dists.size());
  cal.mean = mean;
  cal.stddev = std::sqrt(var);
  cal.windows = dists.size();
  cal.tau = mean + sigmas * cal.stddev;
  if (!(cal.tau > 0.0)) throw NumericError("novelty threshold calibrated to a non-positive value");
  return cal;
}

void add_classifier(Container& box, const ConditionClassifier& c, const std::string& prefix) {
  box.add_params(c.params, prefix);
  const auto& a = c.arch;
  box.attributes()[prefix + "classifier"] = {
      {"conv", {a.conv1, a.conv2, a.conv3, a.conv4}}, {"fc1", a.fc1},       {"descriptor", a.descriptor},
      {"classes", a.classes},                         {"height", a.height}, {"width", a.width},
      {"class_names", c.class_names}};
}

ConditionClassifier load_classifier(const Container& box, const std::string& prefix) {
  ConditionClassifier c;
  try {
    const auto& j = box.attributes().at(prefix + "classifier");
    const auto conv = j.at("conv").get<std::vector<std::size_t>>();
    if (conv.size() != 4) throw CorruptCheckpointError("classifier needs four conv widths");
    c.arch = {conv[0], conv[1], conv[2], conv[3], j.at("fc1").get<std::size_t>(), j.at("descriptor").get<std::size_t>(),
              j.at("classes").get<std::size_t>(), j.at("height").get<std::size_t>(), j.at("width").get<std::size_t>()};
    c.class_names = j.at("class_names").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCheckpointError(std::string("missing classifier attributes: ") + e.what());
  }
  c.params = box.params(prefix);
  if (c.params.empty()) throw CorruptCheckpointError("container lacks classifier parameters under '" + prefix + "'");
  return c;
}

}  // namespace adaptkit
