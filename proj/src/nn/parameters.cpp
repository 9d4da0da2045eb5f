#include "sed/nn/parameters.hpp"

#include <cmath>

#include "sed/errors.hpp"

namespace sed::nn {

std::size_t ParameterStore::add(std::string name, Matrix init) {
  for (const auto& p : params_) {
    if (p.name == name) throw ContractError("duplicate parameter name '" + name + "'");
  }
  Parameter p{std::move(name), std::move(init), Matrix()};
  p.grad = Matrix::Zero(p.value.rows(), p.value.cols());
  params_.push_back(std::move(p));
  return params_.size() - 1;
}

std::size_t ParameterStore::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return i;
  }
  throw ContractError("no parameter named '" + std::string(name) + "'");
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.grad.setZero(p.value.rows(), p.value.cols());
}

double ParameterStore::grad_norm() const {
  double sq = 0.0;
  for (const auto& p : params_) sq += p.grad.squaredNorm();
  return std::sqrt(sq);
}

bool ParameterStore::same_layout(const ParameterStore& other) const {
  if (params_.size() != other.params_.size()) return false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& a = params_[i];
    const auto& b = other.params_[i];
    if (a.name != b.name || a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols()) {
      return false;
    }
  }
  return true;
}

void ParameterStore::assign_values(const ParameterStore& other) {
  if (!same_layout(other)) throw ContractError("parameter layouts differ");
  for (std::size_t i = 0; i < params_.size(); ++i) params_[i].value = other.params_[i].value;
}

bool ParameterStore::values_equal(const ParameterStore& other) const {
  if (!same_layout(other)) return false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].value != other.params_[i].value) return false;
  }
  return true;
}

}  // namespace sed::nn
