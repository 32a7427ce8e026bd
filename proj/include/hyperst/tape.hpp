#pragma once

#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hyperst/tensor.hpp"

namespace hyperst {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const { return id_; }
  Tape& tape() const { return *tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

struct BackwardContext;
using BackwardFn = std::function<void(BackwardContext&)>;

#ifdef NDEBUG
inline constexpr bool kCheckFiniteByDefault = false;
#else
inline constexpr bool kCheckFiniteByDefault = true;
#endif

/**
 * Reverse-mode gradient tape.
 *
 * Nodes are appended in evaluation order, so inputs always precede the ops
 * that consume them. backward() walks the nodes once, in reverse, from the
 * loss. Leaves that the loss does not reach keep a zero gradient.
 *
 * A tape is single-threaded; use one tape per thread.
 */
class Tape {
 public:
  struct Options {
    bool check_finite = kCheckFiniteByDefault;
  };

  Tape() : Tape(Options{}) {}
  explicit Tape(Options options);
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Differentiable input; its gradient is available after backward().
  Var leaf(Tensor value);
  /// Non-differentiable input (data, labels).
  Var constant(Tensor value);

  /// Records the output of a primitive. Backward is skipped when no input needs a gradient.
  Var record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(std::string_view op, Tensor value, std::span<const Var> inputs, BackwardFn backward);

  void backward(Var loss);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& grad(std::size_t id) const;
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  std::string_view op(std::size_t id) const { return nodes_[id].op; }
  std::size_t size() const { return nodes_.size(); }
  const Options& options() const { return options_; }

 private:
  friend struct BackwardContext;

  struct Node {
    std::string_view op;
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool needs_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };

  std::span<double> grad_sink(std::size_t id);

  Options options_;
  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

/// What a backward rule sees: its output gradient and sinks for each input.
struct BackwardContext {
  Tape& tape;
  std::size_t self;
  std::span<const std::size_t> inputs;

  const Tensor& output() const { return tape.value(self); }
  const Tensor& output_grad() const { return tape.nodes_[self].grad; }
  const Tensor& input(std::size_t k) const { return tape.value(inputs[k]); }
  bool needs(std::size_t k) const { return tape.needs_grad(inputs[k]); }
  /// Mutable gradient buffer of input k; rules accumulate into it.
  std::span<double> sink(std::size_t k) { return tape.grad_sink(inputs[k]); }
};

/**
 * Fault injection for harness self-tests. While a fault is armed for an op
 * name, backward() scales that op's incoming gradient by `factor` before its
 * rule runs, so gradient checks downstream of the op must fail. Thread-local.
 */
namespace fault {
void arm(std::string op, double factor);
void disarm();
}  // namespace fault

}  // namespace hyperst
