// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "scdnet/rng.hpp"
#include "scdnet/tensor.hpp"

namespace scdnet::testing {

inline Mat random_mat(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

/// Largest per-tensor relative error ||g_analytic - g_numeric|| /
/// (||g_analytic|| + ||g_numeric||) over `params`, with central differences
/// of step h.
inline double gradient_error(const std::function<Tensor()>& loss_fn, std::vector<Tensor> params, double h = 1e-5) {
  for (auto& p : params) p.zero_grad();
  backward(loss_fn());
  double worst = 0.0;
  for (auto& p : params) {
    const Mat analytic = p.grad();
    Mat numeric(p.rows(), p.cols());
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      double& x = p.mutable_value().data()[i];
      const double keep = x;
      double up, down;
      {
        NoGradGuard ng;
        x = keep + h;
        up = loss_fn().item();
        x = keep - h;
        down = loss_fn().item();
      }
      x = keep;
      numeric.data()[i] = (up - down) / (2.0 * h);
    }
    const double denom = analytic.norm() + numeric.norm();
    const double err = denom < 1e-12 ? 0.0 : (analytic - numeric).norm() / denom;
    worst = std::max(worst, err);
    p.zero_grad();
  }
  return worst;
}

inline constexpr double kGradTolerance = 1e-3;

}  // namespace scdnet::testing
