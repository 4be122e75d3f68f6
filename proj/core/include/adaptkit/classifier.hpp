#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "adaptkit/autograd.hpp"
#include "adaptkit/container.hpp"
#include "adaptkit/worldgen.hpp"

namespace adaptkit {

/// Four stride-2 convolutions, then three fully connected layers. The second
/// fully connected layer's output (before its activation) is the condition
/// descriptor.
struct ClassifierArch {
  std::size_t conv1 = 8, conv2 = 16, conv3 = 32, conv4 = 32;
  std::size_t fc1 = 256;
  std::size_t descriptor = 128;
  std::size_t classes = 5;
  std::size_t height = 48, width = 48;
};

struct ConditionClassifier {
  ParamSet params;
  ClassifierArch arch;
  /// Class index k is memory record id k; index 0 is the reference.
  std::vector<std::string> class_names;
};

struct ClassifierOutputs {
  Var logits;
  Var descriptor;
};

ConditionClassifier init_classifier(const ClassifierArch& arch, Rng& rng);
ClassifierOutputs classifier_forward(Binder& b, const ClassifierArch& arch, Var images);

struct ClassifierTrainConfig {
  std::size_t epochs = 8;
  std::size_t batch = 32;
  double lr = 0.0005;
  std::uint64_t seed = 31;
};

struct ClassifierTrainResult {
  ConditionClassifier classifier;
  std::vector<double> epoch_loss;
  double val_accuracy = 0.0;
};

/// `train[k]` and `val[k]` hold the images of class k.
ClassifierTrainResult train_classifier(std::span<const Tensor> train, std::span<const Tensor> val,
                                       std::vector<std::string> class_names, const ClassifierTrainConfig& cfg,
                                       const ClassifierArch& arch_template = {});

/// N×K class probabilities.
Tensor classify(const ConditionClassifier& c, const Tensor& images);
std::vector<int> predict(const ConditionClassifier& c, const Tensor& images);
/// N×D descriptors.
Tensor extract_descriptor(const ConditionClassifier& c, const Tensor& images);
/// Elementwise mean over the rows of an N×D descriptor matrix.
std::vector<float> average_descriptor(const Tensor& descriptors);
std::vector<float> average_descriptor(const ConditionClassifier& c, const Tensor& images);

double euclidean(std::span<const float> a, std::span<const float> b);

using ConfusionMatrix = std::vector<std::vector<std::size_t>>;

/// Rows are true classes (the index into `test`), columns predictions.
ConfusionMatrix confusion_matrix(const ConditionClassifier& c, std::span<const Tensor> test);
double accuracy(const ConfusionMatrix& m);

struct NoveltyCalibration {
  double tau = 0.0;
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t windows = 0;
  std::vector<std::vector<float>> centroids;  // one per class
};

/// Centroid per class from `val[k]`, then distances from the average
/// descriptor of every sliding window of `window` consecutive images to its
/// class centroid; τ = mean + sigmas · stddev.
NoveltyCalibration calibrate_novelty(const ConditionClassifier& c, std::span<const Tensor> val, std::size_t window,
                                     double sigmas = 3.0);

void add_classifier(Container& box, const ConditionClassifier& c, const std::string& prefix);
ConditionClassifier load_classifier(const Container& box, const std::string& prefix);

}  // namespace adaptkit
