// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "scdnet/checkpoint.hpp"
#include "scdnet/ops.hpp"
#include "scdnet/rng.hpp"
#include "scdnet/tensor.hpp"

// Transformer building blocks shared by the diffusion stages and the
// autoregressive teacher. Blocks are post-norm: every sublayer output is
// added to its input and then layer-normalized.
namespace scdnet {

/// Ordered, named parameter set.
class ParamRegistry {
 public:
  Tensor add(const std::string& name, Mat init);
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<Tensor> tensors() const;
  std::size_t scalar_count() const;

  void set_trainable(bool on);
  void export_to(Checkpoint& ckpt) const;
  /// Copies values from matching names; throws on a missing or mis-shaped entry.
  void import_from(const Checkpoint& ckpt);

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

/// Dropout settings for one forward pass. Dropout is applied only while a
/// graph is being recorded and an RNG is supplied.
struct ForwardMode {
  double dropout = 0.0;
  Rng* rng = nullptr;

  Tensor apply_dropout(const Tensor& x) const;
};

Mat xavier_uniform(Eigen::Index in, Eigen::Index out, Rng& rng);

struct Linear {
  Tensor w, b;
  Linear() = default;
  Linear(ParamRegistry& reg, const std::string& name, int in, int out, Rng& rng, bool bias = true);
  Tensor operator()(const Tensor& x) const { return ops::linear(x, w, b); }
};

struct LayerNorm {
  Tensor gain, bias;
  LayerNorm() = default;
  LayerNorm(ParamRegistry& reg, const std::string& name, int width);
  Tensor operator()(const Tensor& x) const { return ops::layer_norm(x, gain, bias); }
};

struct MultiHeadAttention {
  Linear q, k, v, o;
  int heads = 1;
  MultiHeadAttention() = default;
  MultiHeadAttention(ParamRegistry& reg, const std::string& name, int width, int heads, Rng& rng);
  Tensor operator()(const Tensor& query, const Tensor& memory, const ops::AttentionLayout& layout) const;
};

/// norm(Z + FC(GELU(FC(Z))))
struct FeedForward {
  Linear fc1, fc2;
  LayerNorm norm;
  FeedForward() = default;
  FeedForward(ParamRegistry& reg, const std::string& name, int width, int inner, Rng& rng);
  Tensor operator()(const Tensor& z, const ForwardMode& mode) const;
};

/// Self-attention block: FFN(norm(X + MultiHead(X, X, X))). Used by the
/// visual encoder and the semantic Transformer.
struct EncoderBlock {
  MultiHeadAttention attn;
  LayerNorm norm;
  FeedForward ffn;
  EncoderBlock() = default;
  EncoderBlock(ParamRegistry& reg, const std::string& name, int width, int heads, int inner, Rng& rng);
  Tensor operator()(const Tensor& x, const std::vector<int>& lens, const ForwardMode& mode) const;
};

/// Self-attention, cross-attention over memory tokens, then feed-forward.
/// Self-attention is unmasked unless `causal` is set.
struct DecoderBlock {
  MultiHeadAttention self_attn;
  LayerNorm norm1;
  MultiHeadAttention cross_attn;
  LayerNorm norm2;
  FeedForward ffn;
  DecoderBlock() = default;
  DecoderBlock(ParamRegistry& reg, const std::string& name, int width, int heads, int inner, Rng& rng);
  Tensor operator()(const Tensor& h, const std::vector<int>& lens, const Tensor& memory,
                    const std::vector<int>& memory_lens, bool causal, const ForwardMode& mode) const;
};

}  // namespace scdnet
