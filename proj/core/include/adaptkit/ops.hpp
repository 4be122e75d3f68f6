#pragma once

#include <span>

#include "adaptkit/autograd.hpp"

namespace adaptkit::ops {

// Convolutions use cross-correlation semantics (the kernel is not flipped).

/// input N×C×H×W, kernel O×C×kH×kW. Output spatial size is
/// floor((H + 2·padding − kH) / stride) + 1.
Var conv2d(Var input, Var kernel, int stride, int padding);

/// input N×C×H×W, kernel C×O×kH×kW (input channels first). The adjoint of
/// conv2d; output spatial size is (H − 1)·stride − 2·padding + kH.
Var conv_transpose2d(Var input, Var kernel, int stride, int padding);

/// Adds a per-channel bias (length C) to an N×C×H×W tensor.
Var bias_add(Var input, Var bias);

/// Per-(n, c) plane normalization followed by a per-channel affine map.
Var instance_norm(Var input, Var gain, Var bias, float epsilon = 1e-5f);

enum class Activation { relu, leaky_relu, tanh, sigmoid };
inline constexpr float kLeakySlope = 0.2f;

Var activation(Var input, Activation kind);
inline Var relu(Var x) { return activation(x, Activation::relu); }
inline Var leaky_relu(Var x) { return activation(x, Activation::leaky_relu); }
inline Var tanh(Var x) { return activation(x, Activation::tanh); }
inline Var sigmoid(Var x) { return activation(x, Activation::sigmoid); }

/// log(c / (1 − c)) with c = clamp(x, eps, 1 − eps); zero gradient where clamped.
Var logit(Var input, float eps = 1e-3f);

/// input N×F times weights F×G plus bias G.
Var linear(Var input, Var weights, Var bias);

/// Mean over rows of −Σ t·log softmax(logits). `target` must be one-hot.
Var softmax_cross_entropy(Var logits, Var target);
/// Same loss with integer class labels, one per row.
Var softmax_cross_entropy(Var logits, std::span<const int> labels);

/// Mean absolute difference.
Var l1_loss(Var a, Var b);
/// Mean of (a − c)².
Var squared_error(Var a, float c);
/// Σ (a − b)² over all features, averaged over the leading axis.
Var squared_l2(Var a, Var b);

Var add(Var a, Var b);
/// Elementwise product of equally shaped tensors.
Var mul(Var a, Var b);
Var scale(Var a, float s);
/// Elementwise a·s + t.
Var affine(Var a, float s, float t);
Var sum(Var a);
Var mean(Var a);

/// Channel concatenation of two N×C×H×W tensors with equal N, H, W.
Var concat_channels(Var a, Var b);
Var reshape(Var a, Shape shape);
/// N×C×H×W → (N·H·W)×C.
Var channels_last(Var a);
/// Row-wise x / sqrt(Σx² + eps) on an N×F tensor.
Var l2_normalize(Var a, float eps = 1e-12f);

// Non-differentiable helpers.

/// Row-wise softmax of an N×K tensor.
Tensor softmax(const Tensor& logits);
/// Argmax along the channel axis of N×C×H×W, returning N·H·W labels.
std::vector<int> argmax_channels(const Tensor& logits);

}  // namespace adaptkit::ops
