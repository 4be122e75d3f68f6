#include "adaptkit/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include "adaptkit/errors.hpp"

namespace adaptkit::ops {

namespace {

using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using MapCM = Eigen::Map<const MatRM>;

void require(bool cond, const std::string& msg) {
  if (!cond) throw DimensionError(msg);
}

struct ConvGeom {
  std::size_t channels, height, width, kh, kw, out_h, out_w;
  int stride, pad;
  std::size_t col_rows() const { return channels * kh * kw; }
  std::size_t col_cols() const { return out_h * out_w; }
};

// col[(c, i, j), (oh, ow)] = x[c, oh·s − p + i, ow·s − p + j], zero outside.
void im2col(const float* x, const ConvGeom& g, float* col) {
  const std::size_t cols = g.col_cols();
  for (std::size_t c = 0; c < g.channels; ++c) {
    const float* plane = x + c * g.height * g.width;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        float* row = col + ((c * g.kh + i) * g.kw + j) * cols;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const long ih = static_cast<long>(oh) * g.stride - g.pad + static_cast<long>(i);
          float* dst = row + oh * g.out_w;
          if (ih < 0 || ih >= static_cast<long>(g.height)) {
            std::fill(dst, dst + g.out_w, 0.0f);
            continue;
          }
          const float* src = plane + static_cast<std::size_t>(ih) * g.width;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const long iw = static_cast<long>(ow) * g.stride - g.pad + static_cast<long>(j);
            dst[ow] = (iw < 0 || iw >= static_cast<long>(g.width)) ? 0.0f : src[iw];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds columns back into the image.
void col2im(const float* col, const ConvGeom& g, float* x) {
  const std::size_t cols = g.col_cols();
  for (std::size_t c = 0; c < g.channels; ++c) {
    float* plane = x + c * g.height * g.width;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const float* row = col + ((c * g.kh + i) * g.kw + j) * cols;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const long ih = static_cast<long>(oh) * g.stride - g.pad + static_cast<long>(i);
          if (ih < 0 || ih >= static_cast<long>(g.height)) continue;
          float* dst = plane + static_cast<std::size_t>(ih) * g.width;
          const float* src = row + oh * g.out_w;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const long iw = static_cast<long>(ow) * g.stride - g.pad + static_cast<long>(j);
            if (iw >= 0 && iw < static_cast<long>(g.width)) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

void check_conv_args(int stride, int padding) {
  if (stride < 1) throw DimensionError("stride must be >= 1");
  if (padding < 0) throw DimensionError("padding must be >= 0");
}

}  // namespace

Var conv2d(Var input, Var kernel, int stride, int padding) {
  check_conv_args(stride, padding);
  const Tensor& x = input.value();
  const Tensor& w = kernel.value();
  require(x.rank() == 4 && w.rank() == 4, "conv2d expects NCHW input and OIHW kernel");
  require(x.dim(1) == w.dim(1), "conv2d channel mismatch: input " + shape_str(x.shape()) + " kernel " +
                                    shape_str(w.shape()));
  const long span_h = static_cast<long>(x.dim(2)) + 2 * padding - static_cast<long>(w.dim(2));
  const long span_w = static_cast<long>(x.dim(3)) + 2 * padding - static_cast<long>(w.dim(3));
  require(span_h >= 0 && span_w >= 0, "conv2d kernel larger than padded input");

  ConvGeom g{x.dim(1), x.dim(2), x.dim(3), w.dim(2), w.dim(3), static_cast<std::size_t>(span_h / stride + 1),
             static_cast<std::size_t>(span_w / stride + 1), stride, padding};
  const std::size_t n = x.dim(0), out_c = w.dim(0);
  Tensor out({n, out_c, g.out_h, g.out_w});
  std::vector<float> col(g.col_rows() * g.col_cols());
  MapCM wm(w.raw(), out_c, g.col_rows());
  for (std::size_t b = 0; b < n; ++b) {
    im2col(x.raw() + b * g.channels * g.height * g.width, g, col.data());
    MapM om(out.raw() + b * out_c * g.col_cols(), out_c, g.col_cols());
    om.noalias() = wm * MapCM(col.data(), g.col_rows(), g.col_cols());
  }

  return input.tape().record(std::move(out), {input, kernel}, [g, n, out_c](GradContext& ctx) {
    const Tensor& x = *ctx.in[0];
    const Tensor& w = *ctx.in[1];
    std::vector<float> col(g.col_rows() * g.col_cols());
    std::vector<float> dcol(ctx.in_grad[0] ? col.size() : 0);
    MapCM wm(w.raw(), out_c, g.col_rows());
    const std::size_t in_stride = g.channels * g.height * g.width;
    for (std::size_t b = 0; b < n; ++b) {
      MapCM go(ctx.out_grad.raw() + b * out_c * g.col_cols(), out_c, g.col_cols());
      if (ctx.in_grad[1]) {
        im2col(x.raw() + b * in_stride, g, col.data());
        MapM gw(ctx.in_grad[1]->raw(), out_c, g.col_rows());
        gw.noalias() += go * MapCM(col.data(), g.col_rows(), g.col_cols()).transpose();
      }
      if (ctx.in_grad[0]) {
        MapM dc(dcol.data(), g.col_rows(), g.col_cols());
        dc.noalias() = wm.transpose() * go;
        col2im(dcol.data(), g, ctx.in_grad[0]->raw() + b * in_stride);
      }
    }
  });
}

Var conv_transpose2d(Var input, Var kernel, int stride, int padding) {
  check_conv_args(stride, padding);
  const Tensor& x = input.value();
  const Tensor& w = kernel.value();
  require(x.rank() == 4 && w.rank() == 4, "conv_transpose2d expects NCHW input and IOHW kernel");
  require(x.dim(1) == w.dim(0), "conv_transpose2d channel mismatch: input " + shape_str(x.shape()) + " kernel " +
                                    shape_str(w.shape()));
  const long out_h = (static_cast<long>(x.dim(2)) - 1) * stride - 2 * padding + static_cast<long>(w.dim(2));
  const long out_w = (static_cast<long>(x.dim(3)) - 1) * stride - 2 * padding + static_cast<long>(w.dim(3));
  require(out_h > 0 && out_w > 0, "conv_transpose2d produces empty output");

  const std::size_t n = x.dim(0), in_c = x.dim(1), out_c = w.dim(1);
  // Geometry of the forward convolution this op is the adjoint of.
  ConvGeom g{out_c, static_cast<std::size_t>(out_h), static_cast<std::size_t>(out_w), w.dim(2), w.dim(3),
             x.dim(2), x.dim(3), stride, padding};
  Tensor out({n, out_c, g.height, g.width});
  std::vector<float> col(g.col_rows() * g.col_cols());
  MapCM wm(w.raw(), in_c, g.col_rows());
  for (std::size_t b = 0; b < n; ++b) {
    MapM cm(col.data(), g.col_rows(), g.col_cols());
    cm.noalias() = wm.transpose() * MapCM(x.raw() + b * in_c * g.col_cols(), in_c, g.col_cols());
    col2im(col.data(), g, out.raw() + b * out_c * g.height * g.width);
  }

  return input.tape().record(std::move(out), {input, kernel}, [g, n, in_c, out_c](GradContext& ctx) {
    const Tensor& x = *ctx.in[0];
    const Tensor& w = *ctx.in[1];
    std::vector<float> dcol(g.col_rows() * g.col_cols());
    MapCM wm(w.raw(), in_c, g.col_rows());
    for (std::size_t b = 0; b < n; ++b) {
      im2col(ctx.out_grad.raw() + b * out_c * g.height * g.width, g, dcol.data());
      MapCM dc(dcol.data(), g.col_rows(), g.col_cols());
      if (ctx.in_grad[0]) {
        MapM gx(ctx.in_grad[0]->raw() + b * in_c * g.col_cols(), in_c, g.col_cols());
        gx.noalias() += wm * dc;
      }
      if (ctx.in_grad[1]) {
        MapM gw(ctx.in_grad[1]->raw(), in_c, g.col_rows());
        gw.noalias() += MapCM(x.raw() + b * in_c * g.col_cols(), in_c, g.col_cols()) * dc.transpose();
      }
    }
  });
}

Var bias_add(Var input, Var bias) {
  const Tensor& x = input.value();
  const Tensor& b = bias.value();
  require(x.rank() == 4 && b.numel() == x.dim(1), "bias_add expects NCHW input and a length-C bias");
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor out = x;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < c; ++k) {
      float* p = out.raw() + (i * c + k) * plane;
      for (std::size_t j = 0; j < plane; ++j) p[j] += b[k];
    }
  return input.tape().record(std::move(out), {input, bias}, [n, c, plane](GradContext& ctx) {
    const float* g = ctx.out_grad.raw();
    if (ctx.in_grad[0]) {
      auto dst = ctx.in_grad[0]->data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
    }
    if (ctx.in_grad[1]) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < c; ++k) {
          const float* p = g + (i * c + k) * plane;
          double acc = 0.0;
          for (std::size_t j = 0; j < plane; ++j) acc += p[j];
          (*ctx.in_grad[1])[k] += static_cast<float>(acc);
        }
    }
  });
}

Var instance_norm(Var input, Var gain, Var bias, float epsilon) {
  if (!(epsilon > 0.0f)) throw ContractViolation("instance_norm epsilon must be positive");
  const Tensor& x = input.value();
  require(x.rank() == 4, "instance_norm expects NCHW input");
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  require(gain.value().numel() == c && bias.value().numel() == c, "instance_norm gain/bias must have length C");
  const Tensor& gm = gain.value();
  const Tensor& bs = bias.value();

  Tensor xhat(x.shape());
  std::vector<float> inv_std(n * c);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < n * c; ++i) {
    const float* src = x.raw() + i * plane;
    double mu = 0.0;
    for (std::size_t j = 0; j < plane; ++j) mu += src[j];
    mu /= static_cast<double>(plane);
    double var = 0.0;
    for (std::size_t j = 0; j < plane; ++j) var += (src[j] - mu) * (src[j] - mu);
    var /= static_cast<double>(plane);
    const double is = 1.0 / std::sqrt(var + epsilon);
    inv_std[i] = static_cast<float>(is);
    const std::size_t ch = i % c;
    float* xh = xhat.raw() + i * plane;
    float* dst = out.raw() + i * plane;
    for (std::size_t j = 0; j < plane; ++j) {
      xh[j] = static_cast<float>((src[j] - mu) * is);
      dst[j] = gm[ch] * xh[j] + bs[ch];
    }
  }

  return input.tape().record(
      std::move(out), {input, gain, bias},
      [n, c, plane, xhat = std::move(xhat), inv_std = std::move(inv_std)](GradContext& ctx) {
        const Tensor& gm = *ctx.in[1];
        for (std::size_t i = 0; i < n * c; ++i) {
          const std::size_t ch = i % c;
          const float* g = ctx.out_grad.raw() + i * plane;
          const float* xh = xhat.raw() + i * plane;
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::size_t j = 0; j < plane; ++j) {
            sum_g += g[j];
            sum_gx += static_cast<double>(g[j]) * xh[j];
          }
          if (ctx.in_grad[1]) (*ctx.in_grad[1])[ch] += static_cast<float>(sum_gx);
          if (ctx.in_grad[2]) (*ctx.in_grad[2])[ch] += static_cast<float>(sum_g);
          if (ctx.in_grad[0]) {
            const double mean_g = sum_g / static_cast<double>(plane);
            const double mean_gx = sum_gx / static_cast<double>(plane);
            const double k = gm[ch] * inv_std[i];
            float* dx = ctx.in_grad[0]->raw() + i * plane;
            for (std::size_t j = 0; j < plane; ++j) {
              dx[j] += static_cast<float>(k * (g[j] - mean_g - xh[j] * mean_gx));
            }
          }
        }
      });
}

Var activation(Var input, Activation kind) {
  const Tensor& x = input.value();
  Tensor out(x.shape());
  const float* s = x.raw();
  float* d = out.raw();
  const std::size_t m = x.numel();
  switch (kind) {
    case Activation::relu:
      for (std::size_t i = 0; i < m; ++i) d[i] = s[i] > 0.0f ? s[i] : 0.0f;
      break;
    case Activation::leaky_relu:
      for (std::size_t i = 0; i < m; ++i) d[i] = s[i] > 0.0f ? s[i] : kLeakySlope * s[i];
      break;
    case Activation::tanh:
      for (std::size_t i = 0; i < m; ++i) d[i] = std::tanh(s[i]);
      break;
    case Activation::sigmoid:
      for (std::size_t i = 0; i < m; ++i) d[i] = 1.0f / (1.0f + std::exp(-s[i]));
      break;
  }
  return input.tape().record(std::move(out), {input}, [kind](GradContext& ctx) {
    if (!ctx.in_grad[0]) return;
    const float* g = ctx.out_grad.raw();
    const float* x = ctx.in[0]->raw();
    const float* y = ctx.out.raw();
    float* dx = ctx.in_grad[0]->raw();
    const std::size_t m = ctx.out.numel();
    switch (kind) {
      case Activation::relu:
        for (std::size_t i = 0; i < m; ++i) dx[i] += x[i] > 0.0f ? g[i] : 0.0f;
        break;
      case Activation::leaky_relu:
        for (std::size_t i = 0; i < m; ++i) dx[i] += x[i] > 0.0f ? g[i] : kLeakySlope * g[i];
        break;
      case Activation::tanh:
        for (std::size_t i = 0; i < m; ++i) dx[i] += g[i] * (1.0f - y[i] * y[i]);
        break;
      case Activation::sigmoid:
        for (std::size_t i = 0; i < m; ++i) dx[i] += g[i] * y[i] * (1.0f - y[i]);
        break;
    }
  });
}

Var logit(Var input, float eps) {
  if (!(eps > 0.0f && eps < 0.5f)) throw ContractViolation("logit eps must lie in (0, 0.5)");
  const Tensor& x = input.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const float c = std::clamp(x[i], eps, 1.0f - eps);
    out[i] = std::log(c / (1.0f - c));
  }
  return input.tape().record(std::move(out), {input}, [eps](GradContext& ctx) {
    if (!ctx.in_grad[0]) return;
    const Tensor& x = *ctx.in[0];
    Tensor& dx = *ctx.in_grad[0];
    for (std::size_t i = 0; i < x.numel(); ++i) {
      if (x[i] > eps && x[i] < 1.0f - eps) dx[i] += ctx.out_grad[i] / (x[i] * (1.0f - x[i]));
    }
  });
}

Var linear(Var input, Var weights, Var bias) {
  const Tensor& x = input.value();
  const Tensor& w = weights.value();
  const Tensor& b = bias.value();
  require(x.rank() == 2 && w.rank() == 2, "linear expects N×F input and F×G weights");
  require(x.dim(1) == w.dim(0), "linear feature mismatch: " + shape_str(x.shape()) + " vs " + shape_str(w.shape()));
  require(b.numel() == w.dim(1), "linear bias must have length G");
  const std::size_t n = x.dim(0), f = x.dim(1), gdim = w.dim(1);
  Tensor out({n, gdim});
  MapM om(out.raw(), n, gdim);
  om.noalias() = MapCM(x.raw(), n, f) * MapCM(w.raw(), f, gdim);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < gdim; ++j) om(i, j) += b[j];

  return input.tape().record(std::move(out), {input, weights, bias}, [n, f, gdim](GradContext& ctx) {
    MapCM go(ctx.out_grad.raw(), n, gdim);
    if (ctx.in_grad[0]) {
      MapM gx(ctx.in_grad[0]->raw(), n, f);
      gx.noalias() += go * MapCM(ctx.in[1]->raw(), f, gdim).transpose();
    }
    if (ctx.in_grad[1]) {
      MapM gw(ctx.in_grad[1]->raw(), f, gdim);
      gw.noalias() += MapCM(ctx.in[0]->raw(), n, f).transpose() * go;
    }
    if (ctx.in_grad[2]) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < gdim; ++j) (*ctx.in_grad[2])[j] += go(i, j);
    }
  });
}

namespace {

// Row-wise softmax probabilities and the mean cross-entropy against `target`.
Var cross_entropy_impl(Var logits, const std::vector<float>& target) {
  const Tensor& z = logits.value();
  const std::size_t n = z.dim(0), k = z.dim(1);
  Tensor probs = softmax(z);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = z.raw() + i * k;
    const float mx = *std::max_element(row, row + k);
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(static_cast<double>(row[j] - mx));
    const double log_denom = std::log(denom);
    for (std::size_t j = 0; j < k; ++j) {
      const float t = target[i * k + j];
      if (t != 0.0f) loss -= t * (static_cast<double>(row[j] - mx) - log_denom);
    }
  }
  loss /= static_cast<double>(n);
  Tensor out = Tensor::scalar(static_cast<float>(std::max(loss, 0.0)));
  return logits.tape().record(std::move(out), {logits},
                              [n, k, probs = std::move(probs), target](GradContext& ctx) {
                                if (!ctx.in_grad[0]) return;
                                const float g = ctx.out_grad[0] / static_cast<float>(n);
                                float* dz = ctx.in_grad[0]->raw();
                                for (std::size_t i = 0; i < n * k; ++i) dz[i] += g * (probs[i] - target[i]);
                              });
}

}  // namespace

Var softmax_cross_entropy(Var logits, Var target) {
  const Tensor& z = logits.value();
  const Tensor& t = target.value();
  require(z.rank() == 2, "softmax_cross_entropy expects N×K logits");
  require(t.shape() == z.shape(), "target shape must match logits");
  const std::size_t n = z.dim(0), k = z.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    int ones = 0;
    for (std::size_t j = 0; j < k; ++j) {
      const float v = t[i * k + j];
      if (v == 1.0f) {
        ++ones;
      } else if (v != 0.0f) {
        ones = -1;
        break;
      }
    }
    if (ones != 1) throw ContractViolation("softmax_cross_entropy target row " + std::to_string(i) + " is not one-hot");
  }
  return cross_entropy_impl(logits, t.vec());
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  const Tensor& z = logits.value();
  require(z.rank() == 2, "softmax_cross_entropy expects N×K logits");
  const std::size_t n = z.dim(0), k = z.dim(1);
  require(labels.size() == n, "one label per logits row required");
  std::vector<float> onehot(n * k, 0.0f);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw ContractViolation("class label " + std::to_string(labels[i]) + " out of range");
    }
    onehot[i * k + static_cast<std::size_t>(labels[i])] = 1.0f;
  }
  return cross_entropy_impl(logits, onehot);
}

Var l1_loss(Var a, Var b) {
  require(a.shape() == b.shape(), "l1_loss shape mismatch");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  double acc = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) acc += std::fabs(static_cast<double>(x[i]) - y[i]);
  const std::size_t m = x.numel();
  return a.tape().record(Tensor::scalar(static_cast<float>(acc / m)), {a, b}, [m](GradContext& ctx) {
    const float g = ctx.out_grad[0] / static_cast<float>(m);
    const float* x = ctx.in[0]->raw();
    const float* y = ctx.in[1]->raw();
    for (std::size_t i = 0; i < m; ++i) {
      const float s = x[i] > y[i] ? g : (x[i] < y[i] ? -g : 0.0f);
      if (ctx.in_grad[0]) (*ctx.in_grad[0])[i] += s;
      if (ctx.in_grad[1]) (*ctx.in_grad[1])[i] -= s;
    }
  });
}

Var squared_error(Var a, float c) {
  const Tensor& x = a.value();
  double acc = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double d = static_cast<double>(x[i]) - c;
    acc += d * d;
  }
  const std::size_t m = x.numel();
  return a.tape().record(Tensor::scalar(static_cast<float>(acc / m)), {a}, [m, c](GradContext& ctx) {
    if (!ctx.in_grad[0]) return;
    const float g = 2.0f * ctx.out_grad[0] / static_cast<float>(m);
    const float* x = ctx.in[0]->raw();
    for (std::size_t i = 0; i < m; ++i) (*ctx.in_grad[0])[i] += g * (x[i] - c);
  });
}

Var squared_l2(Var a, Var b) {
  require(a.shape() == b.shape(), "squared_l2 shape mismatch");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const std::size_t rows = x.dim(0);
  double acc = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double d = static_cast<double>(x[i]) - y[i];
    acc += d * d;
  }
  const std::size_t m = x.numel();
  return a.tape().record(Tensor::scalar(static_cast<float>(acc / rows)), {a, b}, [m, rows](GradContext& ctx) {
    const float g = 2.0f * ctx.out_grad[0] / static_cast<float>(rows);
    const float* x = ctx.in[0]->raw();
    const float* y = ctx.in[1]->raw();
    for (std::size_t i = 0; i < m; ++i) {
      const float d = g * (x[i] - y[i]);
      if (ctx.in_grad[0]) (*ctx.in_grad[0])[i] += d;
      if (ctx.in_grad[1]) (*ctx.in_grad[1])[i] -= d;
    }
  });
}

Var add(Var a, Var b) {
  require(a.shape() == b.shape(), "add shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = a.value();
  const float* y = b.value().raw();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += y[i];
  return a.tape().record(std::move(out), {a, b}, [](GradContext& ctx) {
    const float* g = ctx.out_grad.raw();
    for (int k = 0; k < 2; ++k) {
      if (!ctx.in_grad[k]) continue;
      float* d = ctx.in_grad[k]->raw();
      for (std::size_t i = 0; i < ctx.out.numel(); ++i) d[i] += g[i];
    }
  });
}

Var mul(Var a, Var b) {
  require(a.shape() == b.shape(), "mul shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = a.value();
  const float* y = b.value().raw();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= y[i];
  return a.tape().record(std::move(out), {a, b}, [](GradContext& ctx) {
    const float* g = ctx.out_grad.raw();
    for (int k = 0; k < 2; ++k) {
      if (!ctx.in_grad[k]) continue;
      const float* other = ctx.in[1 - k]->raw();
      float* d = ctx.in_grad[k]->raw();
      for (std::size_t i = 0; i < ctx.out.numel(); ++i) d[i] += g[i] * other[i];
    }
  });
}

Var scale(Var a, float s) { return affine(a, s, 0.0f); }

Var affine(Var a, float s, float t) {
  Tensor out = a.value();
  for (auto& v : out.data()) v = v * s + t;
  return a.tape().record(std::move(out), {a}, [s](GradContext& ctx) {
    if (!ctx.in_grad[0]) return;
    const float* g = ctx.out_grad.raw();
    float* d = ctx.in_grad[0]->raw();
    for (std::size_t i = 0; i < ctx.out.numel(); ++i) d[i] += s * g[i];
  });
}

Var sum(Var a) {
  double acc = 0.0;
  for (float v : a.value().data()) acc += v;
  return a.tape().record(Tensor::scalar(static_cast<float>(acc)), {a}, [](GradContext& ctx) {
    if (!ctx.in_grad[0]) return;
    for (auto& d : ctx.in_grad[0]->data()) d += ctx.out_grad[0];
  });
}

Var mean(Var a) {
  const std::size_t m = a.value().numel();
  return scale(sum(a), 1.0f / static_cast<float>(m));
}

Var concat_channels(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require(x.rank() == 4 && y.rank() == 4 && x.dim(0) == y.dim(0) && x.dim(2) == y.dim(2) && x.dim(3) == y.dim(3),
          "concat_channels shape mismatch: " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  const std::size_t n = x.dim(0), ca = x.dim(1), cb = y.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor out({n, ca + cb, x.dim(2), x.dim(3)});
  for (std::size_t i = 0; i < n; ++i) {
    std::memcpy(out.raw() + i * (ca + cb) * plane, x.raw() + i * ca * plane, ca * plane * sizeof(float));
    std::memcpy(out.raw() + (i * (ca + cb) + ca) * plane, y.raw() + i * cb * plane, cb * plane * sizeof(float));
  }
  return a.tape().record(std::move(out), {a, b}, [n, ca, cb, plane](GradContext& ctx) {
    const float* g = ctx.out_grad.raw();
    for (std::size_t i = 0; i < n; ++i) {
      if (ctx.in_grad[0]) {
        float* d = ctx.in_grad[0]->raw() + i * ca * plane;
        const float* s = g + i * (ca + cb) * plane;
        for (std::size_t j = 0; j < ca * plane; ++j) d[j] += s[j];
      }
      if (ctx.in_grad[1]) {
        float* d = ctx.in_grad[1]->raw() + i * cb * plane;
        const float* s = g + (i * (ca + cb) + ca) * plane;
        for (std::size_t j = 0; j < cb * plane; ++j) d[j] += s[j];
      }
    }
  });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.tape().record(std::move(out), {a}, [](GradContext& ctx) {
    if (!ctx.in_grad[0]) return;
    const float* g = ctx.out_grad.raw();
    float* d = ctx.in_grad[0]->raw();
    for (std::size_t i = 0; i < ctx.out.numel(); ++i) d[i] += g[i];
  });
}

Var channels_last(Var a) {
  const Tensor& x = a.value();
  require(x.rank() == 4, "channels_last expects NCHW");
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor out({n * plane, c});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < c; ++k)
      for (std::size_t j = 0; j < plane; ++j) out[(i * plane + j) * c + k] = x[(i * c + k) * plane + j];
  return a.tape().record(std::move(out), {a}, [n, c, plane](GradContext& ctx) {
    if (!ctx.in_grad[0]) return;
    const float* g = ctx.out_grad.raw();
    float* d = ctx.in_grad[0]->raw();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < c; ++k)
        for (std::size_t j = 0; j < plane; ++j) d[(i * c + k) * plane + j] += g[(i * plane + j) * c + k];
  });
}

Var l2_normalize(Var a, float eps) {
  const Tensor& x = a.value();
  require(x.rank() == 2, "l2_normalize expects N×F");
  const std::size_t n = x.dim(0), f = x.dim(1);
  Tensor out(x.shape());
  std::vector<float> inv(n);
  for (std::size_t i = 0; i < n; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < f; ++j) ss += static_cast<double>(x[i * f + j]) * x[i * f + j];
    inv[i] = static_cast<float>(1.0 / std::sqrt(ss + eps));
    for (std::size_t j = 0; j < f; ++j) out[i * f + j] = x[i * f + j] * inv[i];
  }
  return a.tape().record(std::move(out), {a}, [n, f, inv = std::move(inv)](GradContext& ctx) {
    if (!ctx.in_grad[0]) return;
    const float* g = ctx.out_grad.raw();
    const float* y = ctx.out.raw();
    float* d = ctx.in_grad[0]->raw();
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < f; ++j) dot += static_cast<double>(y[i * f + j]) * g[i * f + j];
      for (std::size_t j = 0; j < f; ++j) {
        d[i * f + j] += inv[i] * static_cast<float>(g[i * f + j] - y[i * f + j] * dot);
      }
    }
  });
}

Tensor softmax(const Tensor& logits) {
  require(logits.rank() == 2, "softmax expects N×K");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  Tensor out(logits.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = logits.raw() + i * k;
    const float mx = *std::max_element(row, row + k);
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(static_cast<double>(row[j] - mx));
    for (std::size_t j = 0; j < k; ++j) {
      out[i * k + j] = static_cast<float>(std::exp(static_cast<double>(row[j] - mx)) / denom);
    }
  }
  return out;
}

std::vector<int> argmax_channels(const Tensor& logits) {
  require(logits.rank() == 4, "argmax_channels expects NCHW");
  const std::size_t n = logits.dim(0), c = logits.dim(1), plane = logits.dim(2) * logits.dim(3);
  std::vector<int> out(n * plane);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < plane; ++j) {
      int best = 0;
      float best_v = logits[(i * c) * plane + j];
      for (std::size_t k = 1; k < c; ++k) {
        const float v = logits[(i * c + k) * plane + j];
        if (v > best_v) {
          best_v = v;
          best = static_cast<int>(k);
        }
      }
      out[i * plane + j] = best;
    }
  return out;
}

}  // namespace adaptkit::ops
