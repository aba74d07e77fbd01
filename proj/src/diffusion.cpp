// SPDX-License-Identifier: Apache-2.0
#include "scdnet/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "scdnet/ops.hpp"

namespace scdnet {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void NoiseSchedule::validate() const {
  if (!(gamma_max > gamma_min)) throw std::invalid_argument("NoiseSchedule: gamma_max must exceed gamma_min");
}

double NoiseSchedule::gamma(double t_prime) const {
  if (!(t_prime >= 0.0 && t_prime <= 1.0)) {
    throw std::domain_error("NoiseSchedule::gamma: t' = " + std::to_string(t_prime) + " outside [0, 1]");
  }
  return gamma_min + t_prime * (gamma_max - gamma_min);
}

double NoiseSchedule::alpha(double t_prime) const { return std::sqrt(sigmoid(-gamma(t_prime))); }
double NoiseSchedule::sigma(double t_prime) const { return std::sqrt(sigmoid(gamma(t_prime))); }

void SamplerConfig::validate() const {
  if (steps < 1) throw std::invalid_argument("SamplerConfig: steps must be >= 1");
  if (time_difference < 0) throw std::invalid_argument("SamplerConfig: time difference must be >= 0");
}

Mat forward_diffuse_at(const Mat& x0, double t_prime, const Mat& eps, const NoiseSchedule& schedule) {
  if (x0.rows() != eps.rows() || x0.cols() != eps.cols()) {
    throw ShapeError("forward_diffuse: x0 " + shape_str(x0) + " vs eps " + shape_str(eps));
  }
  return schedule.alpha(t_prime) * x0 + schedule.sigma(t_prime) * eps;
}

Mat forward_diffuse(const Mat& x0, int t, int steps, const Mat& eps, const NoiseSchedule& schedule) {
  if (steps < 1 || t <= 0 || t > steps) {
    throw std::domain_error("forward_diffuse: t = " + std::to_string(t) + " outside (0, " + std::to_string(steps) + "]");
  }
  return forward_diffuse_at(x0, static_cast<double>(t) / steps, eps, schedule);
}

Mat reverse_step(const Mat& x_t, double t_prime, double s_prime, const Mat& x0_hat, const Mat& eps,
                 const NoiseSchedule& schedule) {
  if (s_prime > t_prime) {
    throw std::domain_error("reverse_step: s' = " + std::to_string(s_prime) + " is after t' = " + std::to_string(t_prime));
  }
  if (x_t.rows() != x0_hat.rows() || x_t.cols() != x0_hat.cols()) {
    throw ShapeError("reverse_step: x_t " + shape_str(x_t) + " vs x0_hat " + shape_str(x0_hat));
  }
  if (x_t.rows() != eps.rows() || x_t.cols() != eps.cols()) {
    throw ShapeError("reverse_step: x_t " + shape_str(x_t) + " vs eps " + shape_str(eps));
  }
  const double gs = schedule.gamma(s_prime);
  const double gt = schedule.gamma(t_prime);
  const double alpha_s = std::sqrt(sigmoid(-gs));
  const double alpha_t = std::sqrt(sigmoid(-gt));
  const double sigma_s_sq = sigmoid(gs);
  const double c = -std::expm1(gs - gt);
  const double noise_std = std::sqrt(sigma_s_sq * c);
  Mat mean = alpha_s * (x_t * ((1.0 - c) / alpha_t) + c * x0_hat);
  if (noise_std > 0.0) mean += noise_std * eps;
  return mean;
}

Mat gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

Sentence argmax_rows(const Mat& probs) {
  Sentence out(static_cast<std::size_t>(probs.rows()));
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    Eigen::Index best;
    probs.row(r).maxCoeff(&best);
    out[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return out;
}

SampleResult sample(const Denoiser& denoiser, const BitCodec& codec, Eigen::Index rows,
                    const SamplerConfig& config, const NoiseSchedule& schedule, Rng& rng) {
  config.validate();
  const Eigen::Index n = codec.bits();
  Mat x = gaussian(rows, n, rng);
  Mat self_cond = Mat::Zero(rows, n);
  SampleResult result;
  const double T = config.steps;
  for (int t = config.steps; t >= 1; --t) {
    const int s = std::max(t - 1 - config.time_difference, 0);
    const double t_prime = t / T;
    const double s_prime = s / T;
    DenoiseOutput out = denoiser(x, schedule.gamma(t_prime), self_cond);
    ++result.denoiser_calls;
    if (out.x0_hat.rows() != rows || out.x0_hat.cols() != n || out.probs.rows() != rows ||
        out.probs.cols() != codec.vocab_size()) {
      throw ShapeError("sample: denoiser returned x0_hat " + shape_str(out.x0_hat) + " and probs " +
                       shape_str(out.probs));
    }
    const Mat eps = config.stochastic ? gaussian(rows, n, rng) : Mat::Zero(rows, n);
    x = reverse_step(x, t_prime, s_prime, out.x0_hat, eps, schedule);
    if (config.self_conditioning) self_cond = out.x0_hat;
    if (t == 1) result.probs = std::move(out.probs);
  }
  result.words = argmax_rows(result.probs);
  result.bit_words = codec.quantize_decode(x);
  return result;
}

Tensor l_bit(const Tensor& x0_hat, const Tensor& x0) { return ops::mse(x0_hat, x0); }

}  // namespace scdnet
