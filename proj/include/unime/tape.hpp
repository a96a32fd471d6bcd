// Copyright 2026 The UniME Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//
// Reverse-mode autodiff on a per-step tape. Parameters live outside the
// tape in a ParamStore; pushing a parameter onto a tape copies its value in
// and registers a backward hook that accumulates the node gradient back
// into Parameter::grad. Pushing the same parameter twice realizes weight
// sharing. Templated on the scalar type so full graphs can be replayed in
// double precision for finite-difference checks.

#ifndef UNIME_TAPE_HPP_
#define UNIME_TAPE_HPP_

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "unime/errors.hpp"
#include "unime/tensor.hpp"

namespace unime {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T> adam_m;  // sized lazily by the optimizer
  Tensor<T> adam_v;
  bool no_decay = false;  // exempt from weight decay (norms, biases, tokens)
  int llrd_layer = -1;    // >= 0 marks uni-encoder depth for layer-wise lr
  std::string init_src;   // provenance tag recorded into checkpoints

  int64_t numel() const { return value.numel(); }
};

template <typename T>
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  Parameter<T>& create(const std::string& name, Shape shape,
                       bool no_decay = false, int llrd_layer = -1) {
    check_contract(by_name_.find(name) == by_name_.end(),
                   "duplicate parameter name: " + name);
    auto p = std::make_unique<Parameter<T>>();
    p->name = name;
    p->value = Tensor<T>::zeros(shape);
    p->grad = Tensor<T>::zeros(shape);
    p->no_decay = no_decay;
    p->llrd_layer = llrd_layer;
    Parameter<T>* raw = p.get();
    by_name_[name] = raw;
    params_.push_back(std::move(p));
    return *raw;
  }

  Parameter<T>* find(const std::string& name) {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : it->second;
  }
  const Parameter<T>* find(const std::string& name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : it->second;
  }

  Parameter<T>& at(const std::string& name) {
    Parameter<T>* p = find(name);
    check_contract(p != nullptr, "unknown parameter: " + name);
    return *p;
  }

  // Insertion order; this order is the serialization order.
  std::vector<Parameter<T>*> all() {
    std::vector<Parameter<T>*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(p.get());
    return out;
  }
  std::vector<const Parameter<T>*> all() const {
    std::vector<const Parameter<T>*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(p.get());
    return out;
  }

  size_t size() const { return params_.size(); }

  int64_t total_numel() const {
    int64_t n = 0;
    for (auto& p : params_) n += p->numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p->grad.fill(T(0));
  }

  template <typename U>
  std::unique_ptr<ParamStore<U>> cast() const {
    auto out = std::make_unique<ParamStore<U>>();
    for (auto& p : params_) {
      Parameter<U>& q = out->create(p->name, p->value.shape, p->no_decay,
                                    p->llrd_layer);
      q.init_src = p->init_src;
      for (int64_t i = 0; i < p->value.numel(); ++i)
        q.value.data[i] = static_cast<U>(p->value.data[i]);
    }
    return out;
  }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::unordered_map<std::string, Parameter<T>*> by_name_;
};

// Handle to a tape node.
struct Val {
  int32_t idx = -1;
  bool valid() const { return idx >= 0; }
};
inline constexpr Val kNoVal{-1};

template <typename T>
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  // Creates a node. `bwd` may be empty for leaves; it must accumulate into
  // input gradients only (never overwrite).
  Val make(Tensor<T> value, bool requires_grad,
           std::function<void()> bwd = nullptr) {
    requires_grad = requires_grad && grad_enabled_;
    Node n;
    n.value = std::move(value);
    if (requires_grad) n.grad = Tensor<T>::zeros(n.value.shape);
    n.requires_grad = requires_grad;
    n.backward = std::move(bwd);
    nodes_.push_back(std::move(n));
    return Val{static_cast<int32_t>(nodes_.size() - 1)};
  }

  // Constant input (no gradient).
  Val constant(Tensor<T> value) { return make(std::move(value), false); }

  // Parameter leaf; gradient flows back into p.grad.
  Val param(Parameter<T>& p) {
    Tensor<T> v = p.value;
    Parameter<T>* pp = &p;
    Val out = make(std::move(v), true);
    if (!nodes_.back().requires_grad) return out;
    Tape* tp = this;
    nodes_.back().backward = [tp, out, pp]() {
      const Tensor<T>& g = tp->grad(out);
      for (int64_t i = 0; i < g.numel(); ++i) pp->grad.data[i] += g.data[i];
    };
    return out;
  }

  // Installs the backward hook after node creation (closures usually need
  // the output handle itself).
  void set_backward(Val v, std::function<void()> bwd) {
    node(v).backward = std::move(bwd);
  }

  Tensor<T>& val(Val v) { return node(v).value; }
  const Tensor<T>& val(Val v) const { return node(v).value; }

  Tensor<T>& grad(Val v) {
    Node& n = node(v);
    check_contract(n.requires_grad, "gradient requested for non-grad node");
    return n.grad;
  }

  bool requires_grad(Val v) const { return node(v).requires_grad; }

  // Seeds d(loss)/d(loss) = 1 and runs all hooks in reverse order.
  void backward(Val loss) {
    check_contract(grad_enabled_, "backward on a no-grad tape");
    Node& ln = node(loss);
    check_contract(ln.requires_grad, "loss does not require grad");
    check_contract(ln.value.numel() == 1, "loss must be scalar");
    ln.grad.data[0] = T(1);
    for (int32_t i = loss.idx; i >= 0; --i)
      if (nodes_[i].backward) nodes_[i].backward();
  }

  size_t size() const { return nodes_.size(); }

  // Bytes held by node values and gradients (diagnostics).
  int64_t bytes() const {
    int64_t b = 0;
    for (const auto& n : nodes_)
      b += (n.value.numel() + n.grad.numel()) * (int64_t)sizeof(T);
    return b;
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    std::function<void()> backward;
    bool requires_grad = false;
  };

  Node& node(Val v) {
    check_contract(v.idx >= 0 && v.idx < (int32_t)nodes_.size(),
                   "invalid tape handle");
    return nodes_[v.idx];
  }
  const Node& node(Val v) const {
    check_contract(v.idx >= 0 && v.idx < (int32_t)nodes_.size(),
                   "invalid tape handle");
    return nodes_[v.idx];
  }

  std::vector<Node> nodes_;
  bool grad_enabled_;
};

}  // namespace unime

#endif  // UNIME_TAPE_HPP_
