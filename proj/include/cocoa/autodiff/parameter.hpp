#pragma once

#include <memory>
#include <string>
#include <vector>

#include "cocoa/autodiff/tensor.hpp"

namespace cocoa::ad {

// A named tensor owned by a model. Trainable entries carry a gradient
// buffer; non-trainable entries hold state such as batchnorm running stats.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;
};

// Ordered, name-unique collection. Entries have stable addresses so layers
// can hold raw pointers into the set.
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet&) = delete;
  ParameterSet& operator=(const ParameterSet&) = delete;
  ParameterSet(ParameterSet&&) noexcept = default;
  ParameterSet& operator=(ParameterSet&&) noexcept = default;

  Parameter& add(std::string name, Tensor value, bool trainable = true);
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;
  Parameter& at(const std::string& name);

  std::vector<Parameter*> trainable();
  std::vector<const Parameter*> all() const;
  std::vector<Parameter*> all();

  std::size_t size() const { return entries_.size(); }
  std::size_t trainable_count() const;  // number of scalar trainable values

  void zero_grad();
  // Copies values (not gradients) from a set with identical names and shapes.
  void copy_values_from(const ParameterSet& other);

 private:
  std::vector<std::unique_ptr<Parameter>> entries_;
};

}  // namespace cocoa::ad
