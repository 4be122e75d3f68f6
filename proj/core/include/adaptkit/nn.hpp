#pragma once

#include <functional>
#include <string>
#include <vector>

#include "adaptkit/autograd.hpp"

namespace adaptkit {
class Rng;
}

/// Named-layer helpers shared by every model. A layer "name" owns the
/// parameters "name.w" and, where present, "name.b" (conv/linear bias) or
/// "name.g"/"name.b" (normalization gain/bias).
namespace adaptkit::nn {

void add_conv(ParamSet& p, const std::string& name, std::size_t in, std::size_t out, std::size_t k, Rng& rng);
/// Kernel layout in×out×k×k, matching ops::conv_transpose2d.
void add_conv_transpose(ParamSet& p, const std::string& name, std::size_t in, std::size_t out, std::size_t k,
                        Rng& rng);
void add_norm(ParamSet& p, const std::string& name, std::size_t channels);
void add_linear(ParamSet& p, const std::string& name, std::size_t in, std::size_t out, Rng& rng);

Var conv(Binder& b, const std::string& name, Var x, int stride, int padding);
Var conv_transpose(Binder& b, const std::string& name, Var x, int stride, int padding);
Var norm(Binder& b, const std::string& name, Var x);
Var dense(Binder& b, const std::string& name, Var x);

/// Runs `forward` over `input` in chunks of `batch` rows on fresh tapes with
/// frozen bindings and stacks the results along the leading axis.
Tensor infer(const ParamSet& params, const Tensor& input, std::size_t batch,
             const std::function<Var(Binder&, Var)>& forward);

/// Shuffled index batches covering [0, n); the last batch may be short.
std::vector<std::vector<std::size_t>> minibatches(std::size_t n, std::size_t batch, Rng& rng);

}  // namespace adaptkit::nn
