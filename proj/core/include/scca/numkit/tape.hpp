#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

#include "scca/numkit/parameters.hpp"
#include "scca/numkit/tensor.hpp"

namespace scca::nk {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape
// lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
  bool requires_grad() const;
  bool valid() const { return tape_ != nullptr; }

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Ordered record of executed operations. backward() walks the record in exact
// reverse order, calling each node's vector-Jacobian product; gradients of a
// value consumed by several operations accumulate additively. A tape is
// single-threaded and meant to live for one training step.
class Tape {
 public:
  // Receives the gradient of the node's output; adds contributions into the
  // inputs' gradient slots via Tape::grad_slot.
  using Backward = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var leaf(Tensor value);
  // Gradient flowing into this node is added to p.grad by backward().
  Var param(Parameter& p);

  // Records an operation output. `fn` is dropped when no input requires
  // gradients. Throws when the value contains NaN or Inf.
  Var record(Tensor value, std::initializer_list<Var> inputs, Backward fn, const char* name);
  Var record(Tensor value, const std::vector<Var>& inputs, Backward fn, const char* name);

  const Tensor& value(const Var& v) const;
  bool requires_grad(const Var& v) const;

  // Gradient accumulator for v, zero-initialised on first use. Only valid for
  // values that require gradients.
  Tensor& grad_slot(const Var& v);

  // Gradient of the last backward() output with respect to v; nullptr when no
  // gradient reached v.
  const Tensor* grad(const Var& v) const;

  void backward(const Var& output);

  std::size_t size() const { return nodes_.size(); }
  const std::string& name(std::size_t id) const { return nodes_.at(id).name; }
  // Node ids whose backward function ran during the last backward(), in call
  // order.
  const std::vector<std::size_t>& last_backward_order() const { return backward_order_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    Backward backward;
    Parameter* param = nullptr;
    std::string name;
  };

  void check_owned(const Var& v) const;

  std::vector<Node> nodes_;
  std::vector<std::size_t> backward_order_;
};

}  // namespace scca::nk
