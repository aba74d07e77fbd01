// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <memory>
#include <vector>

#include "scdnet/captioner.hpp"
#include "scdnet/diffusion.hpp"
#include "scdnet/optim.hpp"

namespace scdnet {

enum class FusionMode { mean_bits, mean_prob };

const char* to_string(FusionMode mode);
FusionMode fusion_from_string(const std::string& s);

/// Fused prediction of a stage: bits and word distributions.
struct Prediction {
  Tensor bits;
  Tensor probs;
};

/// Combines a stage's output with the fused output of the stage before it.
/// mean_bits averages the bit estimates and keeps the current stage's
/// distribution; mean_prob averages the distributions and recomputes the
/// bits from them through the code table.
Prediction fuse(const Prediction& current, const Prediction& previous, FusionMode mode, const Mat& code_table);

/// One training batch: visual features plus per-image target and retrieved sentences.
struct CaptionBatch {
  VisualBatch visual;
  std::vector<Sentence> targets;    // one sentence per image
  std::vector<Sentence> retrieved;  // empty, or one per image
};

struct TrainOptions {
  double label_smoothing = 0.1;
  bool self_conditioning = true;
  double self_cond_probability = 0.5;
  NoiseSchedule schedule;
};

struct CascadeLoss {
  Tensor total;
  std::vector<StageLoss> stages;
};

struct CascadeOutputs {
  std::vector<StageOutput> raw;   // per stage
  std::vector<Prediction> fused;  // per stage; fused.back() is the model output
};

/// M Diffusion Transformers where stage i >= 2 is conditioned on the fused
/// prediction of stage i - 1.
class CascadeModel {
 public:
  CascadeModel(const StageConfig& cfg, const BitCodec& codec, int num_stages, FusionMode fusion, Rng& init_rng);

  int num_stages() const { return static_cast<int>(stages_.size()); }
  DiffusionStage& stage(int i) { return *stages_.at(static_cast<std::size_t>(i)); }
  const DiffusionStage& stage(int i) const { return *stages_.at(static_cast<std::size_t>(i)); }
  FusionMode fusion() const { return fusion_; }
  const BitCodec& codec() const { return codec_; }
  const StageConfig& config() const { return cfg_; }

  std::vector<Tensor> parameters() const;
  void freeze_stage(int i, bool frozen);
  void export_params(Checkpoint& ckpt) const;
  void import_params(const Checkpoint& ckpt);

  std::vector<Tensor> encode_visual(const VisualBatch& visual, const ForwardMode& mode = {}) const;

  /// One evaluation of every stage at a shared noisy input. Stage i >= 2
  /// receives the detached fused bits of stage i - 1.
  CascadeOutputs forward(const Mat& x_t, std::span<const double> gammas, const std::vector<Tensor>& visual_tokens,
                         const std::vector<int>& visual_lens, const std::vector<Mat>& self_conds,
                         const std::vector<Sentence>& retrieved, const ForwardMode& mode = {}) const;

  /// Sum over stages of each stage's own L_XE + L_bit on a freshly noised
  /// batch.
  CascadeLoss training_loss(const CaptionBatch& batch, const TrainOptions& opts, Rng& rng,
                            const ForwardMode& mode = {}) const;

  /// Count of single-stage evaluations performed by `forward`.
  long stage_evaluations() const { return evaluations_.load(); }

 private:
  StageConfig cfg_;
  BitCodec codec_;
  FusionMode fusion_;
  std::vector<std::unique_ptr<DiffusionStage>> stages_;
  mutable std::atomic<long> evaluations_{0};
};

/// Stacks the encoded target sentences row-wise.
Mat encode_batch(const BitCodec& codec, const std::vector<Sentence>& sentences, int length);
std::vector<Sentence> split_rows(const Sentence& flat, int batch, int length);

/// Runs the reverse chain with the cascade as denoiser; returns one sentence
/// per image (argmax of the final fused distribution).
std::vector<Sentence> cascade_sample(const CascadeModel& model, const VisualBatch& visual,
                                     const std::vector<Sentence>& retrieved, const SamplerConfig& config,
                                     const NoiseSchedule& schedule, Rng& rng, SampleResult* raw = nullptr);

/// One optimizer step on a freshly noised batch; returns per-stage loss values
/// and the total.
struct StepLosses {
  double total = 0.0;
  std::vector<double> stages;
};
StepLosses train_cascade_step(const CascadeModel& model, Adam& optimizer, const CaptionBatch& batch,
                              const TrainOptions& opts, Rng& rng, double dropout = 0.0);

}  // namespace scdnet
