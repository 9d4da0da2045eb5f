#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "sed/nn/tape.hpp"

namespace sed::nn {

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
};

/// Ordered, named parameter tensors. Layers refer to entries by index, so a
/// model that owns a store can be copied by value.
class ParameterStore {
 public:
  std::size_t add(std::string name, Matrix init);

  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  std::size_t index_of(std::string_view name) const;
  Parameter& get(std::string_view name) { return params_[index_of(name)]; }
  const Parameter& get(std::string_view name) const { return params_[index_of(name)]; }

  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;
  void zero_grad();
  double grad_norm() const;
  /// Same names and shapes, in the same order.
  bool same_layout(const ParameterStore& other) const;
  /// Copies values from `other` (layouts must match).
  void assign_values(const ParameterStore& other);
  bool values_equal(const ParameterStore& other) const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<Parameter> params_;
};

}  // namespace sed::nn
