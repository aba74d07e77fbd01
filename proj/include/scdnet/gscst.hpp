// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <limits>
#include <vector>

#include "scdnet/cascade.hpp"
#include "scdnet/metrics.hpp"
#include "scdnet/teacher.hpp"

namespace scdnet {

/// Candidates for one image together with their rewards.
struct RewardBatch {
  std::vector<Sentence> sentences;  // N_y entries; guide at guide_index
  std::vector<double> rewards;
  Sentence baseline;
  double baseline_reward = 0.0;
  int guide_index = -1;             // -1 when no sentence is enforced
};

/// Candidates for a batch of images sharing one recorded graph. Row
/// b * N_y + j of `log_probs` is log p_theta of batches[b].sentences[j].
struct CandidateSet {
  std::vector<RewardBatch> batches;
  Tensor log_probs;  // (B * N_y) x 1
  int per_image = 0;
};

struct CandidateOptions {
  int num_samples = 5;        // N_y, the guide included
  double temperature = 1.0;   // 0 picks the argmax at every position
  bool enforce_guide = true;  // false gives plain SCST sampling
  TrainOptions train;         // schedule and self-conditioning protocol
};

/// Noises each guide sentence at a random time, runs the cascade once and
/// draws N_y - 1 sentences by independent per-position sampling from the
/// fused distribution; the guide itself is appended as the last entry.
/// log p of a sentence is the sum of its per-position log-probabilities.
CandidateSet sample_candidates(const CascadeModel& model, const VisualBatch& visual,
                               const std::vector<Sentence>& guides, const std::vector<Sentence>& retrieved,
                               const CandidateOptions& opts, Rng& rng, const ForwardMode& mode = {});

/// Greedy reverse chain: no noise on the reverse steps, argmax at the end,
/// starting latent drawn from a stream seeded with `seed`.
std::vector<Sentence> baseline_decode(const CascadeModel& model, const VisualBatch& visual,
                                      const std::vector<Sentence>& retrieved, const SamplerConfig& sampler,
                                      const NoiseSchedule& schedule, std::uint64_t seed);

/// -(1 / N_y) sum_j (R_j - R_baseline) log p_j, averaged over images.
/// Backpropagating it yields the guided self-critical gradient estimate.
Tensor gscst_surrogate(const CandidateSet& candidates);
/// Same quantity from plain numbers, for one image.
double gscst_surrogate_value(const std::vector<double>& rewards, double baseline_reward,
                             const std::vector<double>& log_probs);

/// Validation-CIDEr patience tracker deciding when the model has saturated.
struct SaturationState {
  int patience = 3;
  double best = -std::numeric_limits<double>::infinity();
  int epochs_without_improvement = 0;

  void update(double validation_cider);
  bool saturated() const { return epochs_without_improvement >= patience; }
};

/// Before saturation: the teacher sentence. After: whichever of the teacher
/// sentence and the model's own estimate scores the higher CIDEr-D against
/// the sample's references, the teacher sentence on ties.
const Sentence& refresh_guide(const Sentence& teacher_sentence, const Sentence& model_sentence, std::size_t sample_id,
                              const RefCorpus& corpus, const SaturationState& state);

struct GscstStepStats {
  double surrogate = 0.0;
  double mean_reward = 0.0;
  double mean_baseline = 0.0;
  double guide_reward = 0.0;
  bool skipped = false;  // every advantage was zero
};

/// Scores candidates, backpropagates the surrogate and applies the optimizer
/// unless every advantage is zero.
GscstStepStats gscst_step(const CascadeModel& model, Adam& optimizer, CandidateSet& candidates,
                          const std::vector<std::size_t>& sample_ids, const RefCorpus& corpus);

}  // namespace scdnet
