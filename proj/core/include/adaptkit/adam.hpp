#pragma once

#include <cstdint>
#include <vector>

#include "adaptkit/autograd.hpp"

namespace adaptkit {

struct AdamHyper {
  double lr = 0.0005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias correction. Moments are kept in double; the state is
/// bound to the layout of the ParamSet it first steps.
class Adam {
 public:
  explicit Adam(AdamHyper hyper = {}) : hyper_(hyper) {}

  /// Applies one update from `params[i].grad`, then increments t.
  void step(ParamSet& params);

  std::int64_t t() const noexcept { return t_; }
  const AdamHyper& hyper() const noexcept { return hyper_; }
  const std::vector<std::vector<double>>& first_moment() const noexcept { return m_; }
  const std::vector<std::vector<double>>& second_moment() const noexcept { return v_; }

 private:
  AdamHyper hyper_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace adaptkit
