#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "langgrasp/ad/tensor.hpp"

namespace langgrasp::ad {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 5.0e-6;  // decoupled, scaled by the learning rate
};

// Cosine decay from `initial` at epoch 0 to `final_lr` at epoch total-1.
struct CosineSchedule {
  double initial = 2.0e-4;
  double final_lr = 2.0e-5;
  int total_epochs = 100;

  double at(int epoch) const;
};

struct OptimState {
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::uint64_t step = 0;
};

// One Adam update with bias correction. grads[i] must match params[i] in size;
// an empty grad span is treated as zeros.
void adam_step(std::span<std::span<double>> params, std::span<const std::span<const double>> grads, OptimState& state,
               const AdamConfig& cfg, double lr);

class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg);

  void step(double lr);
  void zero_grad();
  const OptimState& state() const { return state_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  AdamConfig cfg_;
  OptimState state_;
};

}  // namespace langgrasp::ad
