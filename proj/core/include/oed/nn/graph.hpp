#pragma once

#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "oed/nn/tensor.hpp"

namespace oed::nn {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

/// Owns named parameters; iteration order is lexicographic by name.
class ParamStore {
 public:
  Parameter& create(const std::string& name, Tensor init);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.contains(name); }

  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  std::size_t size() const noexcept { return params_.size(); }
  std::size_t count_scalars() const;

  void zero_grad();
  void copy_values_from(const ParamStore& other);

 private:
  std::map<std::string, std::unique_ptr<Parameter>> params_;
};

struct Var {
  int id = -1;
  bool valid() const noexcept { return id >= 0; }
};

/// Dynamic reverse-mode tape. Nodes are recorded in creation order, so reverse
/// creation order is a valid topological order for the backward sweep.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, const Tensor& grad_out)>;

  explicit Graph(bool enable_grad = true) : enable_grad_(enable_grad) {}

  Var input(Tensor value);
  Var param(Parameter& p);

  const Tensor& value(Var v) const {
    const Node& n = nodes_.at(static_cast<std::size_t>(v.id));
    return n.param ? n.param->value : n.value;
  }
  bool requires_grad(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).requires_grad; }
  bool grad_enabled() const noexcept { return enable_grad_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Records an op output. `fn` runs during backward only if some parent requires grad.
  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn);
  Var record(Tensor value, std::span<const Var> parents, BackwardFn fn);

  /// Gradient accumulator for `v`, allocated on first use; nullptr if `v` needs no grad.
  Tensor* grad_slot(Var v);
  const Tensor& grad(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).grad; }

  /// Seeds d(loss)/d(node) for each pair, then sweeps backward. Parameter gradients
  /// accumulate into Parameter::grad.
  void backward(std::span<const std::pair<Var, Tensor>> seeds);
  void backward_scalar(Var scalar);

 private:
  // Parameter nodes read Parameter::value in place; the parameter must outlive the graph
  // and stay unmodified while it is in use.
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
  bool enable_grad_;
};

}  // namespace oed::nn
