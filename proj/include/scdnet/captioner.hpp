// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scdnet/bitcodec.hpp"
#include "scdnet/layers.hpp"

namespace scdnet {

/// Hyperparameters of one Diffusion Transformer stage.
struct StageConfig {
  int visual_blocks = 3;    // N_v
  int decoder_blocks = 3;   // N_t
  int semantic_blocks = 3;  // N_p
  int d_model = 128;
  int heads = 4;
  int ffn_mult = 4;
  int feature_dim = 32;     // D_v
  int vocab_size = 0;       // W
  int bits = 0;             // n
  int max_len = 12;         // N_s
  int max_retrieved = 12;   // longest retrieved token sequence
  int time_features = 16;
  double dropout = 0.1;

  void validate() const;
  int head_dim() const { return d_model / heads; }
};

/// Object features of a batch of images, stacked image after image.
struct VisualBatch {
  Mat features;           // sum(K) x D_v
  std::vector<int> lens;  // K per image

  int batch_size() const { return static_cast<int>(lens.size()); }
  static VisualBatch from(const std::vector<const Mat*>& images);
};

/// Extra inputs for one stage evaluation. Matrices are batch-stacked,
/// one row per sentence position.
struct ConditioningBundle {
  Mat self_cond;                  // previous-timestep prediction (zeros if absent)
  std::optional<Mat> prev_stage;  // previous stage's prediction; stage >= 2 only
  std::vector<Sentence> retrieved;  // per image; empty sentences disable the condition
};

struct StageOutput {
  Tensor logits;  // rows x W
  Tensor probs;   // rows x W
  Tensor bits;    // rows x n, probability-weighted code rows
};

/// One Diffusion Transformer f_i: visual encoder, semantic Transformer and
/// bidirectional sentence decoder.
class DiffusionStage {
 public:
  /// `stage_index` is 1-based; stages after the first take the previous
  /// stage's prediction as an extra input channel group.
  DiffusionStage(const StageConfig& cfg, const BitCodec& codec, int stage_index, Rng& init_rng,
                 const std::string& prefix = "stage1");

  const StageConfig& config() const { return cfg_; }
  int stage_index() const { return stage_index_; }
  ParamRegistry& params() { return params_; }
  const ParamRegistry& params() const { return params_; }

  /// sum(K) x d_model contextual visual tokens.
  Tensor encode_visual(const VisualBatch& visual, const ForwardMode& mode = {}) const;

  /// B*N_s x d_model decoder input tokens. `gammas` holds one log-SNR per image.
  Tensor condition_semantic(const Mat& x_t, const ConditioningBundle& bundle, std::span<const double> gammas,
                            const ForwardMode& mode = {}) const;

  StageOutput decode_sentence(const Tensor& h0, const Tensor& visual_tokens, const std::vector<int>& visual_lens,
                              const ForwardMode& mode = {}) const;

  /// Full stage evaluation with precomputed visual tokens.
  StageOutput forward(const Mat& x_t, std::span<const double> gammas, const Tensor& visual_tokens,
                      const std::vector<int>& visual_lens, const ConditioningBundle& bundle,
                      const ForwardMode& mode = {}) const;
  StageOutput forward(const Mat& x_t, std::span<const double> gammas, const VisualBatch& visual,
                      const ConditioningBundle& bundle, const ForwardMode& mode = {}) const;

  /// Probability-weighted average of code rows: probs (rows x W) -> rows x n.
  Tensor probs_to_bits(const Tensor& probs) const;
  const Mat& code_table() const { return code_table_; }

 private:
  Tensor time_embedding(std::span<const double> gammas) const;

  StageConfig cfg_;
  int stage_index_;
  Mat code_table_;
  ParamRegistry params_;

  Linear object_proj_;
  std::vector<EncoderBlock> visual_blocks_;
  Linear bit_proj_;
  Linear time_fc1_, time_fc2_;
  Tensor word_embedding_;   // W x d
  Tensor text_positions_;   // N_s x d
  Tensor retrieved_positions_;  // max_retrieved x d
  std::vector<EncoderBlock> semantic_blocks_;
  std::vector<DecoderBlock> decoder_blocks_;
  Linear head_;
};

/// Sinusoidal features of a log-SNR value, the input of the time MLP.
Mat gamma_features(std::span<const double> gammas, int width);

struct StageLoss {
  Tensor total;  // xe + bit
  double xe = 0.0;
  double bit = 0.0;
};

/// Label-smoothed cross-entropy of the word distributions against the target
/// words (every position, PAD included) plus the bit regression loss, with
/// unit weights. The smoothed target puts 1 - smoothing on the target word
/// and smoothing / W on every word.
StageLoss stage_loss(const StageOutput& out, const Mat& x0, std::span<const int> targets, double smoothing);

/// Smoothed cross-entropy alone, averaged over rows.
Tensor smoothed_cross_entropy(const Tensor& logits, std::span<const int> targets, double smoothing);

}  // namespace scdnet
