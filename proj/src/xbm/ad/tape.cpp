#include "xbm/ad/tape.hpp"

#include "xbm/util/error.hpp"

namespace xbm::ad {

void Parameter::zero_grad() {
  if (grad.empty() || grad.shape() != value.shape()) grad = Tensor(value.shape());
  else grad.fill(0.0);
}

const Tensor& Var::value() const {
  if (!tape_) fail(ErrorKind::state, "use of an unbound Var");
  return tape_->value(id_);
}

Var Tape::leaf(const char* op, Tensor value, bool requires_grad, Parameter* p) {
  Node n;
  n.op = op;
  n.value = std::move(value);
  n.requires_grad = requires_grad && grad_enabled_;
  n.param = p;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::constant(Tensor value) { return leaf("constant", std::move(value), false, nullptr); }

Var Tape::input(Tensor value) { return leaf("input", std::move(value), true, nullptr); }

Var Tape::param(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
  Var v = leaf("parameter", p.value, p.requires_grad, &p);
  param_nodes_[&p] = v.id();
  return v;
}

Var Tape::record(const char* op, Tensor value, std::initializer_list<Var> parents, BackwardFn fn) {
  return record(op, std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(fn));
}

Var Tape::record(const char* op, Tensor value, std::span<const Var> parents, BackwardFn fn) {
  if (consumed_) fail(ErrorKind::state, std::string(op) + ": tape already consumed by backward()");
  if (!value.all_finite())
    fail(ErrorKind::numeric, std::string(op) + ": non-finite output of shape " + shape_str(value.shape()));
  Node n;
  n.op = op;
  n.value = std::move(value);
  bool any = false;
  n.parents.reserve(parents.size());
  for (const Var& p : parents) {
    if (p.tape() != this) fail(ErrorKind::state, std::string(op) + ": operand belongs to a different tape");
    n.parents.push_back(p.id());
    any = any || nodes_[static_cast<std::size_t>(p.id())].requires_grad;
  }
  n.requires_grad = grad_enabled_ && any;
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Tensor& Tape::accum(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) fail(ErrorKind::state, "backward: loss belongs to a different tape");
  if (consumed_) fail(ErrorKind::state, "backward: graph already consumed");
  if (loss.value().size() != 1)
    fail(ErrorKind::shape, "backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  consumed_ = true;
  if (!nodes_[static_cast<std::size_t>(loss.id())].requires_grad) return;
  accum(loss.id())[0] = 1.0;
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, id);
    if (n.param) {
      Parameter& p = *n.param;
      if (p.grad.empty() || p.grad.shape() != p.value.shape()) p.grad = Tensor(p.value.shape());
      auto dst = p.grad.data();
      auto src = n.grad.data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  }
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[static_cast<std::size_t>(v.id())];
  if (n.grad.empty()) return Tensor(n.value.shape());
  return n.grad;
}

}  // namespace xbm::ad
