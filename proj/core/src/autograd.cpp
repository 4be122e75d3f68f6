#include "adaptkit/autograd.hpp"

#include <cmath>
#include <cstring>

#include "adaptkit/errors.hpp"
#include "adaptkit/rng.hpp"

namespace adaptkit {

namespace {

constexpr std::uint64_t kFnvOffset = 0xCBF29CE484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001B3ULL;

void fnv_bytes(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
}

}  // namespace

Parameter& ParamSet::add(std::string name, Tensor init) {
  if (index_.contains(name)) throw ContractViolation("duplicate parameter name '" + name + "'");
  index_.emplace(name, params_.size());
  Tensor grad(init.shape(), 0.0f);
  params_.push_back(Parameter{std::move(name), std::move(init), std::move(grad)});
  return params_.back();
}

Parameter& ParamSet::operator[](std::string_view name) {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw NotFoundError("no parameter named '" + std::string(name) + "'");
  return params_[it->second];
}

const Parameter& ParamSet::operator[](std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw NotFoundError("no parameter named '" + std::string(name) + "'");
  return params_[it->second];
}

bool ParamSet::contains(std::string_view name) const { return index_.contains(std::string(name)); }

std::size_t ParamSet::numel() const noexcept {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

void ParamSet::zero_grad() {
  for (auto& p : params_) p.grad.fill(0.0f);
}

std::uint64_t ParamSet::hash() const noexcept {
  std::uint64_t h = kFnvOffset;
  for (const auto& p : params_) {
    fnv_bytes(h, p.name.data(), p.name.size());
    for (auto d : p.value.shape()) {
      const std::uint64_t d64 = d;
      fnv_bytes(h, &d64, sizeof d64);
    }
    fnv_bytes(h, p.value.raw(), p.value.numel() * sizeof(float));
  }
  return h;
}

bool ParamSet::bit_equal(const ParamSet& other) const noexcept {
  if (params_.size() != other.params_.size()) return false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name != other.params_[i].name) return false;
    if (!params_[i].value.bit_equal(other.params_[i].value)) return false;
  }
  return true;
}

void ParamSet::merge(const ParamSet& other, std::string_view prefix) {
  for (const auto& p : other) add(std::string(prefix) + p.name, p.value);
}

ParamSet ParamSet::extract(std::string_view prefix) const {
  ParamSet out;
  for (const auto& p : params_) {
    if (p.name.starts_with(prefix)) out.add(p.name.substr(prefix.size()), p.value);
  }
  return out;
}

Tensor he_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& x : t.data()) x = static_cast<float>(rng.normal() * std);
  return t;
}

const Tensor& Var::value() const { return tape_->value(*this); }

Var Tape::push(std::unique_ptr<Node> node) {
  if (backward_done_) throw ContractViolation("tape already consumed by backward()");
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::constant(Tensor value) {
  auto node = std::make_unique<Node>();
  node->value = std::move(value);
  return push(std::move(node));
}

Var Tape::input(Tensor value) {
  auto node = std::make_unique<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return push(std::move(node));
}

Var Tape::param(Parameter& p) {
  auto node = std::make_unique<Node>();
  node->value = p.value;
  node->requires_grad = true;
  node->param = &p;
  return push(std::move(node));
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  if (inputs.size() > kMaxOpInputs) throw ContractViolation("too many op inputs");
  if (!value.all_finite()) throw NumericError("non-finite value produced by forward op");
  auto node = std::make_unique<Node>();
  node->value = std::move(value);
  for (const Var& v : inputs) {
    if (&v.tape() != this) throw ContractViolation("op mixes vars from different tapes");
    node->inputs[node->num_inputs++] = v.id();
    node->requires_grad = node->requires_grad || nodes_[v.id()]->requires_grad;
  }
  if (node->requires_grad) node->backward = std::move(backward);
  return push(std::move(node));
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw ContractViolation("loss belongs to another tape");
  Node& root = *nodes_[loss.id()];
  if (root.value.numel() != 1) {
    throw ContractViolation("backward() needs a scalar loss, got " + shape_str(root.value.shape()));
  }
  backward_done_ = true;
  if (!root.requires_grad) return;
  root.grad = Tensor(root.value.shape(), 1.0f);

  for (std::int64_t id = loss.id(); id >= 0; --id) {
    Node& node = *nodes_[static_cast<std::size_t>(id)];
    if (!node.requires_grad || node.grad.empty()) continue;
    ++visits_;
    if (node.param != nullptr) {
      auto dst = node.param->grad.data();
      auto src = node.grad.data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
      continue;
    }
    if (!node.backward) continue;
    GradContext ctx{node.value, node.grad, {}, {}};
    for (std::size_t i = 0; i < node.num_inputs; ++i) {
      Node& in = *nodes_[node.inputs[i]];
      ctx.in[i] = &in.value;
      if (in.requires_grad) {
        if (in.grad.empty()) in.grad = Tensor(in.value.shape(), 0.0f);
        ctx.in_grad[i] = &in.grad;
      }
    }
    node.backward(ctx);
    // Interior gradients are not needed once propagated.
    node.grad = Tensor();
  }
}

const Tensor& Tape::grad(Var v) const {
  Node& node = *nodes_[v.id()];
  if (node.grad.empty()) node.grad = Tensor(node.value.shape(), 0.0f);
  return node.grad;
}

Var Binder::operator()(std::string_view name) {
  std::string key(name);
  if (auto it = cache_.find(key); it != cache_.end()) return it->second;
  Parameter& p = params_[name];
  Var v = trainable_ ? tape_.param(p) : tape_.constant(p.value);
  cache_.emplace(std::move(key), v);
  return v;
}

}  // namespace adaptkit
