#pragma once

#include <cstdint>
#include <vector>

#include "mpstr/params.hpp"

namespace mpstr {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled (AdamW style); 0 is plain Adam
};

class Adam {
 public:
  Adam(const ParamStore<float>& params, AdamConfig cfg);

  // One update from the accumulated gradients.
  void step(ParamStore<float>& params, double lr);

  std::int64_t steps() const { return t_; }
  std::vector<Matrix<float>>& first_moments() { return m_; }
  std::vector<Matrix<float>>& second_moments() { return v_; }
  const std::vector<Matrix<float>>& first_moments() const { return m_; }
  const std::vector<Matrix<float>>& second_moments() const { return v_; }
  void set_steps(std::int64_t t) { t_ = t; }

 private:
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<Matrix<float>> m_, v_;
};

// Rescales all gradients so their global L2 norm is at most max_norm.
// Returns the norm before clipping. max_norm <= 0 disables clipping.
double clip_grad_norm(ParamStore<float>& params, double max_norm);

// 1cycle over the first `cycle_fraction` of training (cosine warm-up from
// max_lr/div_factor to max_lr during `warmup_fraction` of the cycle, cosine
// anneal to max_lr*final_ratio), then a constant tail at max_lr*final_ratio.
struct LrSchedule {
  double max_lr = 1e-3;
  std::int64_t iterations = 1000;
  double cycle_fraction = 0.85;
  double warmup_fraction = 0.3;
  double div_factor = 25.0;
  double final_ratio = 0.01;

  double at(std::int64_t step) const;
};

}  // namespace mpstr
