// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "scdnet/tensor.hpp"

namespace scdnet {

/// Learning rate as a function of the 1-based step.
struct LrSchedule {
  enum class Kind { constant, warmup_inv_sqrt };
  Kind kind = Kind::warmup_inv_sqrt;
  double base_lr = 5e-4;
  std::int64_t warmup_steps = 2000;

  /// warmup_inv_sqrt rises linearly to base_lr at warmup_steps, then decays
  /// as base_lr * sqrt(warmup / step).
  double at(std::int64_t step) const;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  double clip_norm = 0.0;  // global gradient-norm clip, 0 disables
  LrSchedule schedule;
};

class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg);

  /// Applies one update from the parameters' accumulated gradients, then
  /// clears them. Parameters without a gradient get a zero-gradient update.
  void step();
  void zero_grad();

  std::int64_t step_count() const { return step_; }
  const AdamConfig& config() const { return cfg_; }
  double current_lr() const { return cfg_.schedule.at(step_ > 0 ? step_ : 1); }

  /// Moment buffers in parameter order (for checkpointing).
  std::vector<Mat>& first_moments() { return m_; }
  std::vector<Mat>& second_moments() { return v_; }
  void set_step_count(std::int64_t s) { step_ = s; }

 private:
  std::vector<Tensor> params_;
  AdamConfig cfg_;
  std::vector<Mat> m_;
  std::vector<Mat> v_;
  std::int64_t step_ = 0;
};

}  // namespace scdnet
