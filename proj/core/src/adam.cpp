#include "adaptkit/adam.hpp"

#include <cmath>

#include "adaptkit/errors.hpp"

namespace adaptkit {

void Adam::step(ParamSet& params) {
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.value.numel(), 0.0);
      v_.emplace_back(p.value.numel(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw ContractViolation("Adam state bound to a different parameter set");

  ++t_;
  const double b1 = hyper_.beta1, b2 = hyper_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  std::size_t k = 0;
  for (auto& p : params) {
    auto& m = m_[k];
    auto& v = v_[k];
    ++k;
    if (m.size() != p.value.numel()) throw ContractViolation("Adam moment shape mismatch for " + p.name);
    float* w = p.value.raw();
    const float* g = p.grad.raw();
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double gi = g[i];
      m[i] = b1 * m[i] + (1.0 - b1) * gi;
      v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      w[i] = static_cast<float>(w[i] - hyper_.lr * mhat / (std::sqrt(vhat) + hyper_.epsilon));
    }
  }
}

}  // namespace adaptkit
