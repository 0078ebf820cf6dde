#include "oed/nn/graph.hpp"

#include <algorithm>

#include "oed/error.hpp"

namespace oed::nn {

Parameter& ParamStore::create(const std::string& name, Tensor init) {
  if (params_.contains(name)) throw InvalidArgument("duplicate parameter '" + name + "'");
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->grad = Tensor(init.shape());
  p->value = std::move(init);
  auto& ref = *p;
  params_.emplace(name, std::move(p));
  return ref;
}

Parameter& ParamStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw InvalidArgument("unknown parameter '" + name + "'");
  return *it->second;
}

const Parameter& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw InvalidArgument("unknown parameter '" + name + "'");
  return *it->second;
}

std::vector<Parameter*> ParamStore::all() {
  std::vector<Parameter*> out;
  for (auto& [_, p] : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParamStore::all() const {
  std::vector<const Parameter*> out;
  for (const auto& [_, p] : params_) out.push_back(p.get());
  return out;
}

std::size_t ParamStore::count_scalars() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) n += p->value.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [_, p] : params_) p->grad.fill(0.0);
}

void ParamStore::copy_values_from(const ParamStore& other) {
  for (auto& [name, p] : params_) {
    const Parameter& src = other.get(name);
    if (src.value.shape() != p->value.shape()) throw InvalidArgument("parameter shape mismatch for '" + name + "'");
    p->value = src.value;
  }
}

Var Graph::input(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Graph::param(Parameter& p) {
  Node n;
  n.param = &p;
  n.requires_grad = enable_grad_;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Graph::record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn) {
  return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(fn));
}

Var Graph::record(Tensor value, std::span<const Var> parents, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  if (enable_grad_) {
    for (Var p : parents) {
      if (requires_grad(p)) n.requires_grad = true;
    }
    if (n.requires_grad) n.backward = std::move(fn);
  }
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Tensor* Graph::grad_slot(Var v) {
  Node& n = nodes_.at(static_cast<std::size_t>(v.id));
  if (!n.requires_grad) return nullptr;
  if (n.grad.empty()) {
    const Tensor& v = n.param ? n.param->value : n.value;
    if (!v.empty()) n.grad = Tensor(v.shape());
  }
  return &n.grad;
}

void Graph::backward(std::span<const std::pair<Var, Tensor>> seeds) {
  if (!enable_grad_) throw InvalidArgument("backward on a graph recorded without gradients");
  int last = -1;
  for (const auto& [v, g] : seeds) {
    Tensor* slot = grad_slot(v);
    if (!slot) continue;
    if (g.numel() != slot->numel()) {
      throw InvalidArgument("seed gradient shape " + to_string(g.shape()) + " does not match node " +
                            to_string(slot->shape()));
    }
    for (std::size_t i = 0; i < g.numel(); ++i) (*slot)[i] += g[i];
    last = std::max(last, v.id);
  }
  for (int id = last; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.param) {
      n.param->grad += n.grad;
    } else if (n.backward) {
      // Copy out the grad so the callback may safely touch other nodes.
      const Tensor g = std::move(n.grad);
      n.grad = Tensor();
      n.backward(*this, g);
    }
  }
}

void Graph::backward_scalar(Var scalar) {
  std::pair<Var, Tensor> seed{scalar, Tensor(value(scalar).shape(), 1.0)};
  backward(std::span<const std::pair<Var, Tensor>>(&seed, 1));
}

}  // namespace oed::nn
