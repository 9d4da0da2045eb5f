#pragma once

#include <vector>

#include "sed/nn/parameters.hpp"

namespace sed::nn {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Global gradient-norm clip; 0 disables.
  double grad_clip = 0.0;
};

class Adam {
 public:
  Adam(const ParameterStore& params, AdamConfig cfg = {});

  /// Applies one update from the gradients currently stored in `params`.
  void step(ParameterStore& params, double lr);
  long steps() const { return t_; }

 private:
  AdamConfig cfg_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  long t_ = 0;
};

/// Linear warmup to `peak`, then exponential decay reaching
/// peak * final_ratio at `total_steps`. Steps are 1-based.
struct WarmupExponentialDecay {
  double peak = 1e-3;
  long warmup_steps = 4000;
  long total_steps = 20000;
  double final_ratio = 0.1;

  double operator()(long step) const;
};

}  // namespace sed::nn
