#pragma once

#include <cstdint>
#include <vector>

#include "orpit/tensor.hpp"

namespace orpit {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;
};

// Moment accumulators for one fixed set of parameter buffers. Weight decay is
// decoupled from the gradient path (AdamW-style).
class AdamState {
 public:
  AdamState(AdamConfig cfg, const std::vector<std::size_t>& param_sizes);

  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  std::int64_t step_count() const { return step_; }

  friend void adam_step(std::vector<std::vector<float>*> params,
                        const std::vector<const std::vector<float>*>& grads, AdamState& state);

 private:
  AdamConfig cfg_;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
  std::int64_t step_ = 0;
};

void adam_step(std::vector<std::vector<float>*> params,
               const std::vector<const std::vector<float>*>& grads, AdamState& state);

}  // namespace orpit
