// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "scdnet/captioner.hpp"

namespace scdnet {

/// Autoregressive captioner with the stage's visual encoder and decoder
/// blocks, causal self-attention and word-by-word decoding. PAD doubles as
/// the end-of-sentence token.
class TeacherModel {
 public:
  TeacherModel(const StageConfig& cfg, Rng& init_rng);

  const StageConfig& config() const { return cfg_; }
  ParamRegistry& params() { return params_; }
  const ParamRegistry& params() const { return params_; }

  /// Next-word logits for every position given the shifted targets:
  /// position i sees words 0..i-1 of `prefixes` (B*N_s x W).
  Tensor logits(const Tensor& visual_tokens, const std::vector<int>& visual_lens,
                const std::vector<Sentence>& prefixes, const ForwardMode& mode = {}) const;
  Tensor encode_visual(const VisualBatch& visual, const ForwardMode& mode = {}) const;

  /// Label-smoothed cross-entropy over all N_s positions.
  Tensor training_loss(const VisualBatch& visual, const std::vector<Sentence>& targets, double smoothing,
                       const ForwardMode& mode = {}) const;

  std::vector<Sentence> greedy_decode(const VisualBatch& visual) const;
  /// Beam search per image; `width` 1 is greedy.
  std::vector<Sentence> beam_decode(const VisualBatch& visual, int width) const;

 private:
  StageConfig cfg_;
  ParamRegistry params_;
  Linear object_proj_;
  std::vector<EncoderBlock> visual_blocks_;
  Tensor word_embedding_;  // (W + 1) x d, last row is the start token
  Tensor positions_;
  std::vector<DecoderBlock> decoder_blocks_;
  Linear head_;
};

}  // namespace scdnet
