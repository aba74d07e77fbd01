// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>

#include "scdnet/bitcodec.hpp"
#include "scdnet/rng.hpp"
#include "scdnet/tensor.hpp"

namespace scdnet {

/// Linear log-SNR schedule gamma(t') = gamma_min + t' (gamma_max - gamma_min).
struct NoiseSchedule {
  double gamma_min = -13.0;
  double gamma_max = 5.0;

  void validate() const;
  double gamma(double t_prime) const;
  /// sqrt(sigmoid(-gamma(t')))
  double alpha(double t_prime) const;
  /// sqrt(sigmoid(gamma(t')))
  double sigma(double t_prime) const;
};

double sigmoid(double x);

struct SamplerConfig {
  int steps = 50;            // T
  int time_difference = 0;   // Delta
  bool stochastic = true;    // add sigma(s', t') * eps on each reverse step
  bool self_conditioning = true;

  void validate() const;
};

/// x_t = alpha(t') x0 + sigma(t') eps.
Mat forward_diffuse_at(const Mat& x0, double t_prime, const Mat& eps, const NoiseSchedule& schedule);
/// Discrete-step form with t' = t / T, t in (0, T].
Mat forward_diffuse(const Mat& x0, int t, int steps, const Mat& eps, const NoiseSchedule& schedule);

/// One reverse transition from time t' to s' <= t' given the denoiser's
/// estimate of x0. Pass a zero `eps` for the deterministic update.
Mat reverse_step(const Mat& x_t, double t_prime, double s_prime, const Mat& x0_hat, const Mat& eps,
                 const NoiseSchedule& schedule);

struct DenoiseOutput {
  Mat x0_hat;  // rows x n
  Mat probs;   // rows x W
};

/// Called once per reverse step with (x_t, gamma(t'), self-conditioning input).
using Denoiser = std::function<DenoiseOutput(const Mat& x_t, double gamma, const Mat& self_cond)>;

struct SampleResult {
  Sentence words;       // per-row argmax of the final distribution
  Sentence bit_words;   // quantized final latent state, for inspection
  Mat probs;
  int denoiser_calls = 0;
};

/// Runs the reverse chain from x_T ~ N(0, I) with `rows` positions of
/// `codec.bits()` channels each.
SampleResult sample(const Denoiser& denoiser, const BitCodec& codec, Eigen::Index rows,
                    const SamplerConfig& config, const NoiseSchedule& schedule, Rng& rng);

Mat gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng);
Sentence argmax_rows(const Mat& probs);

/// Mean squared error between the bit estimate and the clean bits.
Tensor l_bit(const Tensor& x0_hat, const Tensor& x0);

}  // namespace scdnet
