#include "cocoa/autodiff/parameter.hpp"

#include "cocoa/errors.hpp"

namespace cocoa::ad {

Parameter& ParameterSet::add(std::string name, Tensor value, bool trainable) {
  if (find(name)) throw ConfigurationError("duplicate parameter name '" + name + "'");
  auto p = std::make_unique<Parameter>();
  p->name = std::move(name);
  p->grad = Tensor(value.shape(), 0.0);
  p->value = std::move(value);
  p->trainable = trainable;
  entries_.push_back(std::move(p));
  return *entries_.back();
}

Parameter* ParameterSet::find(const std::string& name) {
  for (auto& e : entries_) {
    if (e->name == name) return e.get();
  }
  return nullptr;
}

const Parameter* ParameterSet::find(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e->name == name) return e.get();
  }
  return nullptr;
}

Parameter& ParameterSet::at(const std::string& name) {
  Parameter* p = find(name);
  if (!p) throw ConfigurationError("unknown parameter '" + name + "'");
  return *p;
}

std::vector<Parameter*> ParameterSet::trainable() {
  std::vector<Parameter*> out;
  for (auto& e : entries_) {
    if (e->trainable) out.push_back(e.get());
  }
  return out;
}

std::vector<const Parameter*> ParameterSet::all() const {
  std::vector<const Parameter*> out;
  for (const auto& e : entries_) out.push_back(e.get());
  return out;
}

std::vector<Parameter*> ParameterSet::all() {
  std::vector<Parameter*> out;
  for (auto& e : entries_) out.push_back(e.get());
  return out;
}

std::size_t ParameterSet::trainable_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) {
    if (e->trainable) n += e->value.numel();
  }
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& e : entries_) e->grad.fill(0.0);
}

void ParameterSet::copy_values_from(const ParameterSet& other) {
  if (other.size() != size()) throw DimensionError("parameter sets differ in size");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const Parameter& src = *other.entries_[i];
    Parameter& dst = *entries_[i];
    if (src.name != dst.name || src.value.shape() != dst.value.shape()) {
      throw DimensionError("parameter mismatch at '" + dst.name + "'");
    }
    dst.value = src.value;
  }
}

}  // namespace cocoa::ad
