#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "hyperst/tape.hpp"

namespace hyperst {

/// Ordered, named collection of learned tensors. Order is insertion order and
/// is the order used by checkpoints and optimizers.
class ParamSet {
 public:
  struct Entry {
    std::string name;
    Tensor value;
  };

  std::size_t add(std::string name, Tensor value);

  std::size_t size() const { return entries_.size(); }
  std::size_t total_numel() const;
  bool contains(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;

  Tensor& operator[](std::size_t i) { return entries_[i].value; }
  const Tensor& operator[](std::size_t i) const { return entries_[i].value; }
  Tensor& at(std::string_view name) { return entries_[index_of(name)].value; }
  const Tensor& at(std::string_view name) const { return entries_[index_of(name)].value; }
  const std::string& name(std::size_t i) const { return entries_[i].name; }

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// A ParamSet registered on one tape, as leaves (trainable) or constants (inference).
class BoundParams {
 public:
  enum class Mode { train, inference };

  BoundParams(Tape& tape, const ParamSet& params, Mode mode = Mode::train);

  Var operator[](std::size_t i) const { return vars_[i]; }
  Tape& tape() const { return *tape_; }
  std::size_t size() const { return vars_.size(); }

  /// Gradient of each parameter after tape.backward(); zeros for unreached ones.
  std::vector<Tensor> gradients() const;

 private:
  Tape* tape_;
  std::vector<Var> vars_;
};

}  // namespace hyperst
