#pragma once

#include <cstdint>
#include <vector>

#include "ppasr/tensor.hpp"

namespace ppasr {

struct AdamConfig {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

// In-place Adam with bias correction. Every parameter must require grad at
// construction (its gradient buffer is what the optimizer consumes).
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg = {});

  void step();
  void zero_grad();
  int64_t step_count() const { return t_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
  AdamConfig cfg_;
  int64_t t_ = 0;
};

// Scales gradients so their global L2 norm is at most max_norm.
// Returns the pre-clip norm.
float clip_grad_norm(std::vector<Tensor>& params, float max_norm);

}  // namespace ppasr
