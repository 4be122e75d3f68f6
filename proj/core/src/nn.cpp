#include "adaptkit/nn.hpp"

#include <algorithm>
#include <cstring>

#include "adaptkit/errors.hpp"
#include "adaptkit/ops.hpp"
#include "adaptkit/rng.hpp"

namespace adaptkit::nn {

void add_conv(ParamSet& p, const std::string& name, std::size_t in, std::size_t out, std::size_t k, Rng& rng) {
  p.add(name + ".w", he_normal({out, in, k, k}, in * k * k, rng));
  p.add(name + ".b", Tensor({out}, 0.0f));
}

void add_conv_transpose(ParamSet& p, const std::string& name, std::size_t in, std::size_t out, std::size_t k,
                        Rng& rng) {
  // Each output pixel of a stride-2, k=4 transposed conv sees in·k²/4 taps.
  p.add(name + ".w", he_normal({in, out, k, k}, std::max<std::size_t>(1, in * k * k / 4), rng));
  p.add(name + ".b", Tensor({out}, 0.0f));
}

void add_norm(ParamSet& p, const std::string& name, std::size_t channels) {
  p.add(name + ".g", Tensor({channels}, 1.0f));
  p.add(name + ".b", Tensor({channels}, 0.0f));
}

void add_linear(ParamSet& p, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  p.add(name + ".w", he_normal({in, out}, in, rng));
  p.add(name + ".b", Tensor({out}, 0.0f));
}

Var conv(Binder& b, const std::string& name, Var x, int stride, int padding) {
  return ops::bias_add(ops::conv2d(x, b(name + ".w"), stride, padding), b(name + ".b"));
}

Var conv_transpose(Binder& b, const std::string& name, Var x, int stride, int padding) {
  return ops::bias_add(ops::conv_transpose2d(x, b(name + ".w"), stride, padding), b(name + ".b"));
}

Var norm(Binder& b, const std::string& name, Var x) {
  return ops::instance_norm(x, b(name + ".g"), b(name + ".b"));
}

Var dense(Binder& b, const std::string& name, Var x) { return ops::linear(x, b(name + ".w"), b(name + ".b")); }

Tensor infer(const ParamSet& params, const Tensor& input, std::size_t batch,
             const std::function<Var(Binder&, Var)>& forward) {
  if (input.rank() == 0 || input.dim(0) == 0) throw DimensionError("infer on empty input");
  if (batch == 0) throw ContractViolation("infer batch must be positive");
  const std::size_t n = input.dim(0);
  const std::size_t row = input.numel() / n;
  Tensor out;
  std::size_t out_row = 0;
  for (std::size_t begin = 0; begin < n; begin += batch) {
    const std::size_t m = std::min(batch, n - begin);
    Shape chunk_shape = input.shape();
    chunk_shape[0] = m;
    Tensor chunk(chunk_shape, std::vector<float>(input.raw() + begin * row, input.raw() + (begin + m) * row));
    Tape tape;
    Binder binder(tape, params);
    const Tensor& y = forward(binder, tape.constant(std::move(chunk))).value();
    if (out.empty()) {
      Shape s = y.shape();
      if (s.empty() || s[0] != m) throw DimensionError("infer: forward must keep the leading axis");
      out_row = y.numel() / m;
      s[0] = n;
      out = Tensor(s);
    }
    if (y.numel() != m * out_row) throw DimensionError("infer: inconsistent output shape across chunks");
    std::memcpy(out.raw() + begin * out_row, y.raw(), y.numel() * sizeof(float));
  }
  return out;
}

std::vector<std::vector<std::size_t>> minibatches(std::size_t n, std::size_t batch, Rng& rng) {
  if (batch == 0) throw ContractViolation("batch size must be positive");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t b = 0; b < n; b += batch) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, b + batch)));
  }
  return out;
}

}  // namespace adaptkit::nn
