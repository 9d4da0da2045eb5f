#include "sed/nn/optim.hpp"

#include <algorithm>
#include <cmath>

#include "sed/errors.hpp"

namespace sed::nn {

Adam::Adam(const ParameterStore& params, AdamConfig cfg) : cfg_(cfg) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const auto& p : params) {
    m_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
    v_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
  }
}

void Adam::step(ParameterStore& params, double lr) {
  if (params.size() != m_.size()) throw ContractError("Adam: parameter count changed");
  ++t_;
  double clip = 1.0;
  if (cfg_.grad_clip > 0.0) {
    const double norm = params.grad_norm();
    if (norm > cfg_.grad_clip) clip = cfg_.grad_clip / norm;
  }
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    const Matrix g = p.grad * clip;
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    p.value.array() -= lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.eps);
  }
}

double WarmupExponentialDecay::operator()(long step) const {
  step = std::max<long>(step, 1);
  if (warmup_steps > 0 && step <= warmup_steps) {
    return peak * static_cast<double>(step) / static_cast<double>(warmup_steps);
  }
  const long decay_span = std::max<long>(total_steps - warmup_steps, 1);
  const double progress =
      std::min(1.0, static_cast<double>(step - warmup_steps) / static_cast<double>(decay_span));
  return peak * std::pow(final_ratio, progress);
}

}  // namespace sed::nn
