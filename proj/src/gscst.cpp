// SPDX-License-Identifier: Apache-2.0
#include "scdnet/gscst.hpp"

#include <cmath>
#include <stdexcept>

namespace scdnet {

namespace {

int draw_word(const Eigen::Ref<const Eigen::RowVectorXd>& p, double temperature, Rng& rng) {
  Eigen::Index best;
  p.maxCoeff(&best);
  if (temperature <= 0.0) return static_cast<int>(best);
  Eigen::RowVectorXd w = p;
  if (temperature != 1.0) {
    const double pmax = p(best);
    w = (p.array() / pmax).pow(1.0 / temperature).matrix();
  }
  const double total = w.sum();
  double u = rng.uniform() * total;
  for (Eigen::Index c = 0; c < w.size(); ++c) {
    u -= w(c);
    if (u < 0.0) return static_cast<int>(c);
  }
  return static_cast<int>(best);
}

}  // namespace

CandidateSet sample_candidates(const CascadeModel& model, const VisualBatch& visual,
                               const std::vector<Sentence>& guides, const std::vector<Sentence>& retrieved,
                               const CandidateOptions& opts, Rng& rng, const ForwardMode& mode) {
  if (opts.num_samples < 1) throw std::invalid_argument("sample_candidates: N_y must be >= 1");
  const int B = visual.batch_size();
  const int L = model.config().max_len;
  const int Ny = opts.num_samples;
  if (static_cast<int>(guides.size()) != B) throw std::invalid_argument("sample_candidates: one guide per image");

  // One denoiser evaluation on the noised guide sentences.
  const Mat x0 = encode_batch(model.codec(), guides, L);
  std::vector<double> gammas(static_cast<std::size_t>(B));
  Mat x_t(x0.rows(), x0.cols());
  for (int b = 0; b < B; ++b) {
    const double t_prime = rng.uniform_open_low();
    gammas[static_cast<std::size_t>(b)] = opts.train.schedule.gamma(t_prime);
    x_t.middleRows(static_cast<Eigen::Index>(b) * L, L) = forward_diffuse_at(
        x0.middleRows(static_cast<Eigen::Index>(b) * L, L), t_prime, gaussian(L, x0.cols(), rng), opts.train.schedule);
  }
  const std::vector<Tensor> tokens = model.encode_visual(visual, mode);
  std::vector<Mat> self_conds(static_cast<std::size_t>(model.num_stages()), Mat::Zero(x0.rows(), x0.cols()));
  if (opts.train.self_conditioning && rng.uniform() < opts.train.self_cond_probability) {
    NoGradGuard no_grad;
    const CascadeOutputs warm = model.forward(x_t, gammas, tokens, visual.lens, self_conds, retrieved);
    for (std::size_t i = 0; i < self_conds.size(); ++i) self_conds[i] = warm.fused[i].bits.value();
  }
  const CascadeOutputs outs = model.forward(x_t, gammas, tokens, visual.lens, self_conds, retrieved, mode);
  const Tensor& probs = outs.fused.back().probs;
  const Mat& p = probs.value();

  CandidateSet set;
  set.per_image = Ny;
  std::vector<int> rows, words;
  rows.reserve(static_cast<std::size_t>(B * Ny * L));
  for (int b = 0; b < B; ++b) {
    RewardBatch rb;
    const int random_draws = opts.enforce_guide ? Ny - 1 : Ny;
    for (int j = 0; j < random_draws; ++j) {
      Sentence s(static_cast<std::size_t>(L));
      for (int i = 0; i < L; ++i) s[static_cast<std::size_t>(i)] = draw_word(p.row(b * L + i), opts.temperature, rng);
      rb.sentences.push_back(std::move(s));
    }
    if (opts.enforce_guide) {
      Sentence g = guides[static_cast<std::size_t>(b)];
      g.resize(static_cast<std::size_t>(L), Vocabulary::kPad);
      rb.guide_index = static_cast<int>(rb.sentences.size());
      rb.sentences.push_back(std::move(g));
    }
    for (const auto& s : rb.sentences) {
      for (int i = 0; i < L; ++i) {
        rows.push_back(b * L + i);
        words.push_back(s[static_cast<std::size_t>(i)]);
      }
    }
    set.batches.push_back(std::move(rb));
  }
  const Tensor log_p = ops::log(probs);
  const Tensor picked = ops::pick(ops::gather_rows(log_p, rows), words);
  const std::vector<int> lens(static_cast<std::size_t>(B * Ny), L);
  set.log_probs = ops::segment_sum(picked, lens);
  return set;
}

std::vector<Sentence> baseline_decode(const CascadeModel& model, const VisualBatch& visual,
                                      const std::vector<Sentence>& retrieved, const SamplerConfig& sampler,
                                      const NoiseSchedule& schedule, std::uint64_t seed) {
  SamplerConfig cfg = sampler;
  cfg.stochastic = false;
  Rng rng(seed);
  return cascade_sample(model, visual, retrieved, cfg, schedule, rng);
}

double gscst_surrogate_value(const std::vector<double>& rewards, double baseline_reward,
                             const std::vector<double>& log_probs) {
  if (rewards.size() != log_probs.size() || rewards.empty()) {
    throw std::invalid_argument("gscst_surrogate_value: rewards and log-probs must pair up");
  }
  double s = 0.0;
  for (std::size_t j = 0; j < rewards.size(); ++j) s += (rewards[j] - baseline_reward) * log_probs[j];
  return -s / static_cast<double>(rewards.size());
}

Tensor gscst_surrogate(const CandidateSet& candidates) {
  const int B = static_cast<int>(candidates.batches.size());
  const int Ny = candidates.per_image;
  Mat weights(static_cast<Eigen::Index>(B) * Ny, 1);
  for (int b = 0; b < B; ++b) {
    const RewardBatch& rb = candidates.batches[static_cast<std::size_t>(b)];
    if (static_cast<int>(rb.rewards.size()) != Ny) throw std::logic_error("gscst_surrogate: rewards not computed");
    for (int j = 0; j < Ny; ++j) {
      weights(b * Ny + j, 0) = -(rb.rewards[static_cast<std::size_t>(j)] - rb.baseline_reward) / (Ny * static_cast<double>(B));
    }
  }
  return ops::sum(ops::mul(candidates.log_probs, Tensor::constant(std::move(weights))));
}

void SaturationState::update(double validation_cider) {
  if (validation_cider > best) {
    best = validation_cider;
    epochs_without_improvement = 0;
  } else {
    ++epochs_without_improvement;
  }
}

const Sentence& refresh_guide(const Sentence& teacher_sentence, const Sentence& model_sentence, std::size_t sample_id,
                              const RefCorpus& corpus, const SaturationState& state) {
  if (!state.saturated()) return teacher_sentence;
  return cider_d(model_sentence, sample_id, corpus) > cider_d(teacher_sentence, sample_id, corpus) ? model_sentence
                                                                                                    : teacher_sentence;
}

GscstStepStats gscst_step(const CascadeModel& model, Adam& optimizer, CandidateSet& candidates,
                          const std::vector<std::size_t>& sample_ids, const RefCorpus& corpus) {
  (void)model;
  if (sample_ids.size() != candidates.batches.size()) throw std::invalid_argument("gscst_step: one sample id per image");
  GscstStepStats stats;
  bool any_advantage = false;
  double guide_sum = 0.0;
  int guide_count = 0;
  for (std::size_t b = 0; b < candidates.batches.size(); ++b) {
    RewardBatch& rb = candidates.batches[b];
    rb.baseline_reward = cider_d(rb.baseline, sample_ids[b], corpus);
    rb.rewards.clear();
    for (const auto& s : rb.sentences) {
      const double r = cider_d(s, sample_ids[b], corpus);
      rb.rewards.push_back(r);
      any_advantage = any_advantage || r != rb.baseline_reward;
      stats.mean_reward += r;
    }
    stats.mean_baseline += rb.baseline_reward;
    if (rb.guide_index >= 0) {
      guide_sum += rb.rewards[static_cast<std::size_t>(rb.guide_index)];
      ++guide_count;
    }
  }
  const double n_img = static_cast<double>(candidates.batches.size());
  stats.mean_reward /= n_img * candidates.per_image;
  stats.mean_baseline /= n_img;
  stats.guide_reward = guide_count ? guide_sum / guide_count : 0.0;

  const Tensor surrogate = gscst_surrogate(candidates);
  stats.surrogate = surrogate.item();
  if (!any_advantage) {
    stats.skipped = true;
    optimizer.zero_grad();
    return stats;
  }
  backward(surrogate);
  optimizer.step();
  return stats;
}

}  // namespace scdnet
