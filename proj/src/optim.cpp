// SPDX-License-Identifier: Apache-2.0
#include "scdnet/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace scdnet {

double LrSchedule::at(std::int64_t step) const {
  if (step < 1) throw std::invalid_argument("LrSchedule::at: step must be >= 1");
  if (kind == Kind::constant || warmup_steps <= 0) return base_lr;
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup_steps);
  return base_lr * std::min(s / w, std::sqrt(w / s));
}

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.push_back(Mat::Zero(p.rows(), p.cols()));
    v_.push_back(Mat::Zero(p.rows(), p.cols()));
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Adam::step() {
  ++step_;
  const double lr = cfg_.schedule.at(step_);
  double clip = 1.0;
  if (cfg_.clip_norm > 0.0) {
    double sq = 0.0;
    for (const auto& p : params_) {
      if (p.has_grad()) sq += p.node()->grad.squaredNorm();
    }
    const double norm = std::sqrt(sq);
    if (norm > cfg_.clip_norm) clip = cfg_.clip_norm / norm;
  }
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.requires_grad()) continue;
    if (p.has_grad()) {
      const Mat& g = p.node()->grad;
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * clip * g;
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * (clip * g).cwiseAbs2();
    } else {
      m_[i] *= cfg_.beta1;
      v_[i] *= cfg_.beta2;
    }
    const auto mhat = m_[i].array() / bc1;
    const auto vhat = v_[i].array() / bc2;
    p.mutable_value().array() -= lr * mhat / (vhat.sqrt() + cfg_.eps);
  }
  zero_grad();
}

}  // namespace scdnet
