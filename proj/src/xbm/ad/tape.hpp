#pragma once

#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "xbm/ad/tensor.hpp"

namespace xbm::ad {

/// A named trainable array. `grad` has the shape of `value` once any
/// backward pass has touched it.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name_, Tensor value_) : name(std::move(name_)), value(std::move(value_)) {}

  void zero_grad();

  std::string name;
  Tensor value;
  Tensor grad;
  bool requires_grad = true;
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; only valid while its Tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::int64_t dim(int axis) const { return value().dim(axis); }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Append-only computation graph recorded while forward operators run.
/// Node ids are assigned in creation order, so every parent id is smaller
/// than its child's and the reverse creation order is a valid topological
/// order for the backward sweep.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Tensor value);
  /// A leaf whose gradient can be read back with grad() after backward().
  Var input(Tensor value);
  /// Leaf bound to a Parameter; backward() accumulates into Parameter::grad.
  /// Repeated calls for the same Parameter return the same node.
  Var param(Parameter& p);

  /// Reverse sweep from a single-element loss. A tape can be swept once.
  void backward(Var loss);
  /// Gradient of the last backward sweep with respect to `v` (zeros if none).
  Tensor grad(Var v) const;

  Var record(const char* op, Tensor value, std::initializer_list<Var> parents, BackwardFn fn);
  Var record(const char* op, Tensor value, std::span<const Var> parents, BackwardFn fn);

  const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Tensor& out_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  /// Gradient buffer of node `id`, zero-initialised on first access.
  Tensor& accum(int id);
  const std::vector<int>& parents(int id) const { return nodes_[static_cast<std::size_t>(id)].parents; }
  const char* op_name(int id) const { return nodes_[static_cast<std::size_t>(id)].op; }

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  struct Node {
    const char* op = "";
    std::vector<int> parents;
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    bool requires_grad = false;
    Parameter* param = nullptr;
  };

  Var leaf(const char* op, Tensor value, bool requires_grad, Parameter* p);

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, int> param_nodes_;
  bool grad_enabled_;
  bool consumed_ = false;
};

}  // namespace xbm::ad
