#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "adaptkit/tensor.hpp"

namespace adaptkit {

class Rng;

/// A named trainable tensor with its accumulated gradient.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

/// Ordered, named collection of parameters making up one model's weights.
class ParamSet {
 public:
  Parameter& add(std::string name, Tensor init);

  Parameter& operator[](std::string_view name);
  const Parameter& operator[](std::string_view name) const;
  bool contains(std::string_view name) const;

  std::size_t size() const noexcept { return params_.size(); }
  bool empty() const noexcept { return params_.empty(); }
  std::size_t numel() const noexcept;

  auto begin() noexcept { return params_.begin(); }
  auto end() noexcept { return params_.end(); }
  auto begin() const noexcept { return params_.begin(); }
  auto end() const noexcept { return params_.end(); }

  void zero_grad();

  /// FNV-1a over names, shapes and value bytes.
  std::uint64_t hash() const noexcept;
  bool bit_equal(const ParamSet& other) const noexcept;

  /// Copies `other` into this set under `prefix` + name.
  void merge(const ParamSet& other, std::string_view prefix);
  /// Extracts parameters whose name starts with `prefix`, stripping it.
  ParamSet extract(std::string_view prefix) const;

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// He-normal initializer: N(0, 2 / fan_in).
Tensor he_normal(Shape shape, std::size_t fan_in, Rng& rng);

class Tape;

/// Handle to a node recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape& tape() const { return *tape_; }
  std::uint32_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

inline constexpr std::size_t kMaxOpInputs = 3;

/// What a backward closure sees: forward values, the upstream gradient and
/// gradient accumulators for inputs that need one (null otherwise).
struct GradContext {
  const Tensor& out;
  const Tensor& out_grad;
  std::array<const Tensor*, kMaxOpInputs> in{};
  std::array<Tensor*, kMaxOpInputs> in_grad{};
};

using BackwardFn = std::function<void(GradContext&)>;

/// Records operations in execution order and replays them in reverse.
///
/// Nodes are appended as ops run, so every op's inputs precede it. A tape is
/// single-use: build a graph, call backward once, discard it.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf whose gradient is kept on the tape (see grad()).
  Var input(Tensor value);
  /// Leaf bound to a parameter; backward accumulates into `p.grad`.
  Var param(Parameter& p);

  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);

  /// Seeds d(loss)/d(loss) = 1 and propagates to every reachable leaf.
  void backward(Var loss);

  const Tensor& value(Var v) const { return nodes_[v.id()]->value; }
  bool requires_grad(Var v) const { return nodes_[v.id()]->requires_grad; }
  /// Gradient of an input() leaf; zeros if the leaf did not participate.
  const Tensor& grad(Var v) const;

  std::size_t size() const noexcept { return nodes_.size(); }
  std::size_t backward_visits() const noexcept { return visits_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::array<std::uint32_t, kMaxOpInputs> inputs{};
    std::uint8_t num_inputs = 0;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  Var push(std::unique_ptr<Node> node);

  std::vector<std::unique_ptr<Node>> nodes_;
  std::size_t visits_ = 0;
  bool backward_done_ = false;
};

/// Resolves parameter names to tape leaves for one forward pass. Trainable
/// bindings create gradient-carrying leaves; frozen ones bind constants so
/// no gradient ever reaches the stored weights.
class Binder {
 public:
  Binder(Tape& tape, ParamSet& params, bool trainable) : tape_(tape), params_(params), trainable_(trainable) {}
  /// Frozen binding; never writes through `params`.
  Binder(Tape& tape, const ParamSet& params)
      : tape_(tape), params_(const_cast<ParamSet&>(params)), trainable_(false) {}

  Var operator()(std::string_view name);
  Tape& tape() const noexcept { return tape_; }

 private:
  Tape& tape_;
  ParamSet& params_;
  bool trainable_;
  std::unordered_map<std::string, Var> cache_;
};

}  // namespace adaptkit
