#include "hyperst/tape.hpp"

#include <algorithm>

namespace hyperst {

namespace fault {
namespace {
thread_local std::string armed_op;
thread_local double armed_factor = 1.0;
}  // namespace

void arm(std::string op, double factor) {
  armed_op = std::move(op);
  armed_factor = factor;
}

void disarm() {
  armed_op.clear();
  armed_factor = 1.0;
}
}  // namespace fault

const Tensor& Var::value() const { return tape_->value(id_); }
const Tensor& Var::grad() const { return tape_->grad(id_); }

Tape::Tape(Options options) : options_(options) { nodes_.reserve(256); }

Var Tape::leaf(Tensor value) {
  if (options_.check_finite && !value.all_finite()) throw NumericError("leaf: non-finite value");
  Node n;
  n.op = "leaf";
  n.value = std::move(value);
  n.needs_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  if (options_.check_finite && !value.all_finite()) throw NumericError("constant: non-finite value");
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return record(op, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
}

Var Tape::record(std::string_view op, Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  if (options_.check_finite && !value.all_finite()) {
    throw NumericError(std::string(op) + ": produced non-finite values");
  }
  Node n;
  n.op = op;
  n.value = std::move(value);
  n.inputs.reserve(inputs.size());
  for (const Var& v : inputs) {
    if (&v.tape() != this) throw std::logic_error(std::string(op) + ": input from a different tape");
    n.inputs.push_back(v.id());
    n.needs_grad = n.needs_grad || nodes_[v.id()].needs_grad;
  }
  if (n.needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::grad(std::size_t id) const {
  const Node& n = nodes_[id];
  if (!n.has_grad) {
    // Unreached nodes report zeros of their own shape.
    auto& mut = const_cast<Node&>(n);
    mut.grad = Tensor::zeros(n.value.shape());
    mut.has_grad = true;
  }
  return n.grad;
}

std::span<double> Tape::grad_sink(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor::zeros(n.value.shape());
    n.has_grad = true;
  }
  return n.grad.data();
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw std::logic_error("backward: loss from a different tape");
  if (backward_done_) throw std::logic_error("backward: tape already differentiated");
  if (loss.value().numel() != 1) {
    throw DimensionError("backward: loss must be scalar, got " + to_string(loss.shape()));
  }
  backward_done_ = true;
  grad_sink(loss.id())[0] = 1.0;

  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.has_grad || !n.backward) continue;
    if (!fault::armed_op.empty() && n.op == fault::armed_op) {
      for (auto& g : n.grad.data()) g *= fault::armed_factor;
    }
    BackwardContext ctx{*this, id, n.inputs};
    n.backward(ctx);
  }
}

}  // namespace hyperst
