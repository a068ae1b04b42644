#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <unordered_map>
#include <vector>

#include "caeav/tensor.hpp"

namespace caeav {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
  std::size_t size() const { return value().size(); }
  double item() const;
  bool requires_grad() const;

  Tape& tape() const { return *tape_; }
  std::uint32_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

/// Linear record of executed primitives. Backward replays adjoints in exact
/// reverse execution order and can run once per recording.
class Tape {
 public:
  enum class Mode { Record, NoGrad };

  /// Adjoint of one recorded op: reads the output gradient of node `self`
  /// and accumulates into the gradients of its inputs.
  using Backward = std::function<void(Tape&, std::uint32_t self)>;

  explicit Tape(Mode mode = Mode::Record);
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var param(Parameter& p);

  /// Populates Parameter::grad for every non-frozen parameter reached from a
  /// scalar root. Throws UsageError on a non-scalar root or a consumed tape.
  void backward(Var root);

  /// Drops every record so the tape can be reused for a new forward pass.
  void reset();

  bool recording() const { return mode_ == Mode::Record; }
  bool consumed() const { return consumed_; }
  std::size_t size() const { return nodes_.size(); }

  const Tensor& value(std::uint32_t id) const { return nodes_[id].value; }
  bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }
  bool has_grad(std::uint32_t id) const { return !nodes_[id].grad.empty(); }
  /// Gradient buffer of a node, zero-allocated on first access.
  std::vector<double>& grad(std::uint32_t id);

  /// Records a new node. The adjoint is kept only when recording and at
  /// least one input requires a gradient.
  Var push(Tensor value, std::initializer_list<Var> inputs, Backward backward);
  Var push(Tensor value, const std::vector<Var>& inputs, Backward backward);

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    Backward backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  Var push_node(Tensor value, bool requires_grad, Backward backward);
  void check_live() const;

  Mode mode_;
  bool consumed_ = false;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::uint32_t> param_nodes_;
};

}  // namespace caeav
