#include "caeav/tape.hpp"

#include <limits>

#include "caeav/errors.hpp"

namespace caeav {

const Tensor& Var::value() const {
  if (!tape_) throw UsageError("use of an empty Var");
  return tape_->value(id_);
}

double Var::item() const {
  const Tensor& v = value();
  if (v.size() != 1) throw UsageError("item() on non-scalar of shape " + shape_str(v.shape));
  return v.data[0];
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

Tape::Tape(Mode mode) : mode_(mode) { nodes_.reserve(256); }

void Tape::check_live() const {
  if (consumed_) throw UsageError("tape already consumed by backward(); reset() before recording again");
}

Var Tape::push_node(Tensor value, bool requires_grad, Backward backward) {
  check_live();
  if (nodes_.size() >= std::numeric_limits<std::uint32_t>::max()) throw UsageError("tape overflow");
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::constant(Tensor value) { return push_node(std::move(value), false, nullptr); }

Var Tape::param(Parameter& p) {
  check_live();
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return Var(this, it->second);
  Var v = push_node(p.value, recording() && !p.frozen, nullptr);
  nodes_[v.id()].param = &p;
  param_nodes_.emplace(&p, v.id());
  return v;
}

Var Tape::push(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
  bool rg = false;
  if (recording())
    for (const Var& v : inputs) rg = rg || v.requires_grad();
  return push_node(std::move(value), rg, std::move(backward));
}

Var Tape::push(Tensor value, const std::vector<Var>& inputs, Backward backward) {
  bool rg = false;
  if (recording())
    for (const Var& v : inputs) rg = rg || v.requires_grad();
  return push_node(std::move(value), rg, std::move(backward));
}

std::vector<double>& Tape::grad(std::uint32_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

void Tape::backward(Var root) {
  if (!recording()) throw UsageError("backward() on a no-grad tape");
  if (consumed_) throw UsageError("backward() called twice on the same recording");
  if (&root.tape() != this) throw UsageError("backward() root belongs to a different tape");
  if (root.size() != 1) throw UsageError("backward() root must be scalar, got " + shape_str(root.shape()));
  consumed_ = true;
  if (!nodes_[root.id()].requires_grad) return;

  grad(root.id())[0] = 1.0;
  for (std::uint32_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) {
      n.backward(*this, i);
    } else if (n.param && !n.param->frozen) {
      Parameter& p = *n.param;
      if (p.grad.shape != p.value.shape) p.zero_grad();
      for (std::size_t k = 0; k < n.grad.size(); ++k) p.grad.data[k] += n.grad[k];
    }
  }
}

void Tape::reset() {
  nodes_.clear();
  param_nodes_.clear();
  consumed_ = false;
}

}  // namespace caeav
