#include "scca/numkit/tape.hpp"

#include <stdexcept>

namespace scca::nk {

const Tensor& Var::value() const {
  if (!tape_) throw std::logic_error("use of an unbound Var");
  return tape_->value(*this);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(*this); }

void Tape::check_owned(const Var& v) const {
  if (v.tape_ != this || v.id_ >= nodes_.size()) throw std::invalid_argument("value is not recorded on this tape");
}

Var Tape::constant(Tensor value) {
  require_finite(value, "constant");
  nodes_.push_back(Node{std::move(value), {}, false, false, {}, nullptr, "constant"});
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Tensor value) {
  require_finite(value, "leaf");
  nodes_.push_back(Node{std::move(value), {}, true, false, {}, nullptr, "leaf"});
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(Parameter& p) {
  require_finite(p.value, p.path.c_str());
  nodes_.push_back(Node{p.value, {}, true, false, {}, &p, p.path});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, Backward fn, const char* name) {
  return record(std::move(value), std::vector<Var>(inputs), std::move(fn), name);
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, Backward fn, const char* name) {
  require_finite(value, name);
  bool needs = false;
  for (const Var& in : inputs) {
    check_owned(in);
    needs = needs || nodes_[in.id_].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs, false, needs ? std::move(fn) : Backward{}, nullptr, name});
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value(const Var& v) const {
  check_owned(v);
  return nodes_[v.id_].value;
}

bool Tape::requires_grad(const Var& v) const {
  check_owned(v);
  return nodes_[v.id_].requires_grad;
}

Tensor& Tape::grad_slot(const Var& v) {
  check_owned(v);
  Node& n = nodes_[v.id_];
  if (!n.requires_grad) throw std::logic_error("gradient requested for a value that does not require it");
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape(), 0.0);
    n.has_grad = true;
  }
  return n.grad;
}

const Tensor* Tape::grad(const Var& v) const {
  check_owned(v);
  const Node& n = nodes_[v.id_];
  return n.has_grad ? &n.grad : nullptr;
}

void Tape::backward(const Var& output) {
  check_owned(output);
  if (nodes_[output.id_].value.size() != 1) throw std::invalid_argument("backward() requires a scalar output");
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  backward_order_.clear();
  if (!nodes_[output.id_].requires_grad) return;

  grad_slot(output)[0] = 1.0;
  for (std::size_t i = output.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad) continue;
    if (n.backward) {
      backward_order_.push_back(i);
      n.backward(*this, n.grad);
    }
    if (n.param) {
      auto& dst = n.param->grad;
      if (dst.shape() != n.grad.shape()) dst = Tensor(n.grad.shape(), 0.0);
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += n.grad[k];
    }
  }
}

}  // namespace scca::nk
