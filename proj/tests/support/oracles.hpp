#pragma once

// Independent double-precision reference implementations used by the test
// suites. Written as direct loops over the defining formulas; they share no
// code with the engine.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <set>
#include <vector>

#include "adaptkit/autograd.hpp"
#include "adaptkit/rng.hpp"
#include "adaptkit/tasks.hpp"
#include "adaptkit/tensor.hpp"

namespace oracle {

struct DTensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  std::size_t numel() const { return data.size(); }
  double& at4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data[((n * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }
  double at4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data[((n * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }
};

inline DTensor from(const adaptkit::Tensor& t) {
  DTensor d{t.shape(), std::vector<double>(t.data().begin(), t.data().end())};
  return d;
}

inline adaptkit::Tensor to_tensor(const DTensor& d) {
  std::vector<float> v(d.data.begin(), d.data.end());
  return adaptkit::Tensor(d.shape, std::move(v));
}

inline adaptkit::Tensor random_tensor(adaptkit::Shape shape, adaptkit::Rng& rng, double lo = -1.0, double hi = 1.0) {
  adaptkit::Tensor t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

/// Random values with |v| >= margin, for ops with a kink at zero.
inline adaptkit::Tensor random_away_from_zero(adaptkit::Shape shape, adaptkit::Rng& rng, double margin = 0.05) {
  adaptkit::Tensor t(std::move(shape));
  for (auto& v : t.data()) {
    double u = rng.uniform(margin, 1.0);
    v = static_cast<float>(rng.uniform() < 0.5 ? -u : u);
  }
  return t;
}

// Six nested loops straight from the cross-correlation definition.
inline DTensor conv2d(const DTensor& x, const DTensor& w, int stride, int pad) {
  const std::size_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3];
  const std::size_t o = w.shape[0], kh = w.shape[2], kw = w.shape[3];
  const std::size_t oh = (h + 2 * pad - kh) / stride + 1, ow = (wd + 2 * pad - kw) / stride + 1;
  DTensor y{{n, o, oh, ow}, std::vector<double>(n * o * oh * ow, 0.0)};
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oc = 0; oc < o; ++oc)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double acc = 0.0;
          for (std::size_t ic = 0; ic < c; ++ic)
            for (std::size_t u = 0; u < kh; ++u)
              for (std::size_t v = 0; v < kw; ++v) {
                const long yy = static_cast<long>(i * stride + u) - pad;
                const long xx = static_cast<long>(j * stride + v) - pad;
                if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(wd)) continue;
                acc += x.at4(b, ic, yy, xx) * w.at4(oc, ic, u, v);
              }
          y.at4(b, oc, i, j) = acc;
        }
  return y;
}

// Scatter-accumulate: every input pixel stamps a scaled kernel into the output.
inline DTensor conv_transpose2d(const DTensor& x, const DTensor& w, int stride, int pad) {
  const std::size_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3];
  const std::size_t o = w.shape[1], kh = w.shape[2], kw = w.shape[3];
  const std::size_t oh = (h - 1) * stride - 2 * pad + kh, ow = (wd - 1) * stride - 2 * pad + kw;
  DTensor y{{n, o, oh, ow}, std::vector<double>(n * o * oh * ow, 0.0)};
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ic = 0; ic < c; ++ic)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < wd; ++j)
          for (std::size_t oc = 0; oc < o; ++oc)
            for (std::size_t u = 0; u < kh; ++u)
              for (std::size_t v = 0; v < kw; ++v) {
                const long yy = static_cast<long>(i * stride + u) - pad;
                const long xx = static_cast<long>(j * stride + v) - pad;
                if (yy < 0 || xx < 0 || yy >= static_cast<long>(oh) || xx >= static_cast<long>(ow)) continue;
                y.at4(b, oc, yy, xx) += x.at4(b, ic, i, j) * w.at4(ic, oc, u, v);
              }
  return y;
}

inline DTensor instance_norm(const DTensor& x, const DTensor& g, const DTensor& b, double eps) {
  DTensor y = x;
  const std::size_t n = x.shape[0], c = x.shape[1], plane = x.shape[2] * x.shape[3];
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < c; ++k) {
      double mu = 0.0, var = 0.0;
      for (std::size_t j = 0; j < plane; ++j) mu += x.data[(i * c + k) * plane + j];
      mu /= plane;
      for (std::size_t j = 0; j < plane; ++j) {
        const double d = x.data[(i * c + k) * plane + j] - mu;
        var += d * d;
      }
      var /= plane;
      for (std::size_t j = 0; j < plane; ++j) {
        const std::size_t idx = (i * c + k) * plane + j;
        y.data[idx] = g.data[k] * (x.data[idx] - mu) / std::sqrt(var + eps) + b.data[k];
      }
    }
  return y;
}

inline DTensor matmul_bias(const DTensor& x, const DTensor& w, const DTensor& b) {
  const std::size_t n = x.shape[0], f = x.shape[1], g = w.shape[1];
  DTensor y{{n, g}, std::vector<double>(n * g, 0.0)};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < g; ++j) {
      double acc = b.data[j];
      for (std::size_t k = 0; k < f; ++k) acc += x.data[i * f + k] * w.data[k * g + j];
      y.data[i * g + j] = acc;
    }
  return y;
}

inline double cross_entropy(const DTensor& logits, const DTensor& target) {
  const std::size_t n = logits.shape[0], k = logits.shape[1];
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(logits.data[i * k + j]);
    for (std::size_t j = 0; j < k; ++j) {
      total -= target.data[i * k + j] * std::log(std::exp(logits.data[i * k + j]) / denom);
    }
  }
  return total / n;
}

inline DTensor map(const DTensor& x, const std::function<double(double)>& f) {
  DTensor y = x;
  for (auto& v : y.data) v = f(v);
  return y;
}

/// Central-difference gradient of a scalar function of one flat input,
/// evaluated at up to `max_coords` coordinates spread across the input.
struct FiniteDiff {
  std::vector<std::size_t> coords;
  std::vector<double> grad;
};

inline FiniteDiff central_difference(const std::function<double(const DTensor&)>& f, const DTensor& x, double h,
                                     std::size_t max_coords, adaptkit::Rng& rng) {
  FiniteDiff fd;
  const std::size_t n = x.numel();
  if (n <= max_coords) {
    for (std::size_t i = 0; i < n; ++i) fd.coords.push_back(i);
  } else {
    for (std::size_t i = 0; i < max_coords; ++i) fd.coords.push_back(static_cast<std::size_t>(rng.below(n)));
  }
  DTensor probe = x;
  for (std::size_t i : fd.coords) {
    const double orig = probe.data[i];
    probe.data[i] = orig + h;
    const double up = f(probe);
    probe.data[i] = orig - h;
    const double down = f(probe);
    probe.data[i] = orig;
    fd.grad.push_back((up - down) / (2.0 * h));
  }
  return fd;
}

/// ||analytic − numeric|| / max(||numeric||, floor) over the probed coordinates.
inline double relative_error(const adaptkit::Tensor& analytic, const FiniteDiff& fd, double floor = 1e-6) {
  double diff = 0.0, ref = 0.0;
  for (std::size_t k = 0; k < fd.coords.size(); ++k) {
    const double a = analytic[fd.coords[k]];
    diff += (a - fd.grad[k]) * (a - fd.grad[k]);
    ref += fd.grad[k] * fd.grad[k];
  }
  return std::sqrt(diff) / std::max(std::sqrt(ref), floor);
}

/// Dataset-level mIOU by explicit per-class pixel counting.
inline double miou_by_counting(const std::vector<int>& pred, const std::vector<int>& gt, int classes) {
  double total = 0.0;
  int present = 0;
  for (int c = 0; c < classes; ++c) {
    long inter = 0, uni = 0, in_gt = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      const bool p = pred[i] == c, g = gt[i] == c;
      inter += (p && g);
      uni += (p || g);
      in_gt += g;
    }
    if (in_gt == 0) continue;
    ++present;
    total += static_cast<double>(inter) / static_cast<double>(uni);
  }
  return present ? total / present : 0.0;
}

/// PR area by brute force: for every distinct nearest-match distance t,
/// count the queries accepted at t and the correct ones among them, then
/// integrate precision over recall with trapezoids from (0, 1).
inline double auc_by_counting(const adaptkit::RetrievalResult& r, std::size_t positives) {
  std::set<double> thresholds;
  for (const auto& m : r.matches) thresholds.insert(m.distance);
  double prev_p = 1.0, prev_r = 0.0, area = 0.0;
  for (double t : thresholds) {
    std::size_t accepted = 0, tp = 0;
    for (const auto& m : r.matches) {
      if (m.distance <= t) {
        ++accepted;
        tp += m.correct;
      }
    }
    const double p = static_cast<double>(tp) / static_cast<double>(accepted);
    const double rec = static_cast<double>(tp) / static_cast<double>(positives);
    area += (rec - prev_r) * 0.5 * (p + prev_p);
    prev_p = p;
    prev_r = rec;
  }
  return area;
}

}  // namespace oracle
