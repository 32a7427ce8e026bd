#include "hyperst/params.hpp"

namespace hyperst {

std::size_t ParamSet::add(std::string name, Tensor value) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), std::move(value)});
  return entries_.size() - 1;
}

std::size_t ParamSet::total_numel() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.numel();
  return n;
}

bool ParamSet::contains(std::string_view name) const { return index_.count(std::string(name)) != 0; }

std::size_t ParamSet::index_of(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + std::string(name));
  return it->second;
}

BoundParams::BoundParams(Tape& tape, const ParamSet& params, Mode mode) : tape_(&tape) {
  vars_.reserve(params.size());
  for (const auto& e : params) {
    vars_.push_back(mode == Mode::train ? tape.leaf(e.value) : tape.constant(e.value));
  }
}

std::vector<Tensor> BoundParams::gradients() const {
  std::vector<Tensor> out;
  out.reserve(vars_.size());
  for (const Var& v : vars_) out.push_back(v.grad());
  return out;
}

}  // namespace hyperst
