// SPDX-License-Identifier: Apache-2.0
#include "scdnet/captioner.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "scdnet/diffusion.hpp"

namespace scdnet {

void StageConfig::validate() const {
  auto positive = [](int v, const char* what) {
    if (v < 1) throw std::invalid_argument(std::string("StageConfig: ") + what + " must be >= 1");
  };
  positive(visual_blocks, "visual_blocks");
  positive(decoder_blocks, "decoder_blocks");
  positive(semantic_blocks, "semantic_blocks");
  positive(d_model, "d_model");
  positive(heads, "heads");
  positive(ffn_mult, "ffn_mult");
  positive(feature_dim, "feature_dim");
  positive(max_len, "max_len");
  positive(time_features, "time_features");
  if (max_retrieved < 0) throw std::invalid_argument("StageConfig: max_retrieved must be >= 0");
  if (d_model % heads != 0) throw std::invalid_argument("StageConfig: d_model must be divisible by heads");
  if (time_features % 2 != 0) throw std::invalid_argument("StageConfig: time_features must be even");
  if (vocab_size < 2 || bits != bits_per_word(vocab_size)) {
    throw std::invalid_argument("StageConfig: bits must equal ceil(log2(vocab_size))");
  }
  if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("StageConfig: dropout must be in [0, 1)");
}

VisualBatch VisualBatch::from(const std::vector<const Mat*>& images) {
  VisualBatch vb;
  Eigen::Index rows = 0;
  for (const Mat* m : images) {
    if (m->rows() < 1) throw std::invalid_argument("VisualBatch: image with no objects");
    if (m->cols() != images.front()->cols()) throw ShapeError("VisualBatch: feature widths differ");
    rows += m->rows();
    vb.lens.push_back(static_cast<int>(m->rows()));
  }
  vb.features.resize(rows, images.empty() ? 0 : images.front()->cols());
  Eigen::Index off = 0;
  for (const Mat* m : images) {
    vb.features.middleRows(off, m->rows()) = *m;
    off += m->rows();
  }
  return vb;
}

Mat gamma_features(std::span<const double> gammas, int width) {
  const int half = width / 2;
  Mat f(static_cast<Eigen::Index>(gammas.size()), width);
  for (std::size_t b = 0; b < gammas.size(); ++b) {
    for (int k = 0; k < half; ++k) {
      const double freq = std::numbers::pi / 32.0 * std::pow(2.0, k * 8.0 / std::max(half, 1));
      f(static_cast<Eigen::Index>(b), k) = std::sin(freq * gammas[b]);
      f(static_cast<Eigen::Index>(b), half + k) = std::cos(freq * gammas[b]);
    }
  }
  return f;
}

namespace {

Mat small_normal(Eigen::Index rows, Eigen::Index cols, double std, Rng& rng) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std * rng.normal();
  return m;
}

}  // namespace

DiffusionStage::DiffusionStage(const StageConfig& cfg, const BitCodec& codec, int stage_index, Rng& rng,
                               const std::string& prefix)
    : cfg_(cfg), stage_index_(stage_index), code_table_(codec.table()) {
  cfg_.validate();
  if (stage_index < 1) throw std::invalid_argument("DiffusionStage: stage index is 1-based");
  if (codec.vocab_size() != cfg_.vocab_size) throw std::invalid_argument("DiffusionStage: codec/config vocabulary mismatch");
  const int d = cfg_.d_model;
  const int inner = cfg_.ffn_mult * d;
  object_proj_ = Linear(params_, prefix + ".visual.proj", cfg_.feature_dim, d, rng);
  for (int i = 0; i < cfg_.visual_blocks; ++i) {
    visual_blocks_.emplace_back(params_, prefix + ".visual.block" + std::to_string(i), d, cfg_.heads, inner, rng);
  }
  const int channel_groups = stage_index_ >= 2 ? 3 : 2;
  bit_proj_ = Linear(params_, prefix + ".semantic.bit_proj", channel_groups * cfg_.bits, d, rng);
  time_fc1_ = Linear(params_, prefix + ".semantic.time_fc1", cfg_.time_features, d, rng);
  time_fc2_ = Linear(params_, prefix + ".semantic.time_fc2", d, d, rng);
  word_embedding_ = params_.add(prefix + ".semantic.word_embedding", xavier_uniform(cfg_.vocab_size, d, rng));
  text_positions_ = params_.add(prefix + ".semantic.text_positions", small_normal(cfg_.max_len, d, 0.02, rng));
  retrieved_positions_ = params_.add(prefix + ".semantic.retrieved_positions",
                                     small_normal(std::max(cfg_.max_retrieved, 1), d, 0.02, rng));
  for (int i = 0; i < cfg_.semantic_blocks; ++i) {
    semantic_blocks_.emplace_back(params_, prefix + ".semantic.block" + std::to_string(i), d, cfg_.heads, inner, rng);
  }
  for (int i = 0; i < cfg_.decoder_blocks; ++i) {
    decoder_blocks_.emplace_back(params_, prefix + ".decoder.block" + std::to_string(i), d, cfg_.heads, inner, rng);
  }
  head_ = Linear(params_, prefix + ".decoder.head", d, cfg_.vocab_size, rng);
}

Tensor DiffusionStage::encode_visual(const VisualBatch& visual, const ForwardMode& mode) const {
  if (visual.lens.empty()) throw std::invalid_argument("encode_visual: empty batch");
  for (int k : visual.lens) {
    if (k < 1) throw std::invalid_argument("encode_visual: image with K = 0 objects");
  }
  if (visual.features.cols() != cfg_.feature_dim) {
    throw ShapeError("encode_visual: features " + shape_str(visual.features) + " but D_v = " +
                     std::to_string(cfg_.feature_dim));
  }
  Tensor v = object_proj_(Tensor::constant(visual.features));
  for (const auto& block : visual_blocks_) v = block(v, visual.lens, mode);
  return v;
}

Tensor DiffusionStage::time_embedding(std::span<const double> gammas) const {
  const Tensor f = Tensor::constant(gamma_features(gammas, cfg_.time_features));
  return time_fc2_(ops::gelu(time_fc1_(f)));
}

Tensor DiffusionStage::condition_semantic(const Mat& x_t, const ConditioningBundle& bundle,
                                          std::span<const double> gammas, const ForwardMode& mode) const {
  const int B = static_cast<int>(gammas.size());
  const int L = cfg_.max_len;
  const Eigen::Index rows = static_cast<Eigen::Index>(B) * L;
  if (B < 1) throw std::invalid_argument("condition_semantic: empty batch");
  if (x_t.rows() != rows || x_t.cols() != cfg_.bits) {
    throw ShapeError("condition_semantic: x_t " + shape_str(x_t) + ", expected (" + std::to_string(rows) + "x" +
                     std::to_string(cfg_.bits) + ")");
  }
  if (bundle.self_cond.rows() != rows || bundle.self_cond.cols() != cfg_.bits) {
    throw ShapeError("condition_semantic: self-conditioning input " + shape_str(bundle.self_cond) + " vs x_t " +
                     shape_str(x_t));
  }
  if (stage_index_ == 1 && bundle.prev_stage) {
    throw std::invalid_argument("condition_semantic: stage 1 takes no previous-stage prediction");
  }
  if (stage_index_ >= 2 && !bundle.prev_stage) {
    throw std::invalid_argument("condition_semantic: stage " + std::to_string(stage_index_) +
                                " requires the previous stage's prediction");
  }
  if (bundle.prev_stage && (bundle.prev_stage->rows() != rows || bundle.prev_stage->cols() != cfg_.bits)) {
    throw ShapeError("condition_semantic: previous-stage prediction " + shape_str(*bundle.prev_stage));
  }
  if (!bundle.retrieved.empty() && static_cast<int>(bundle.retrieved.size()) != B) {
    throw std::invalid_argument("condition_semantic: one retrieved sentence list entry per image required");
  }

  Mat channels(rows, (bundle.prev_stage ? 3 : 2) * cfg_.bits);
  channels.leftCols(cfg_.bits) = x_t;
  channels.middleCols(cfg_.bits, cfg_.bits) = bundle.self_cond;
  if (bundle.prev_stage) channels.rightCols(cfg_.bits) = *bundle.prev_stage;

  std::vector<int> sample_of_row(static_cast<std::size_t>(rows));
  std::vector<int> position_of_row(static_cast<std::size_t>(rows));
  for (int b = 0; b < B; ++b) {
    for (int i = 0; i < L; ++i) {
      sample_of_row[static_cast<std::size_t>(b * L + i)] = b;
      position_of_row[static_cast<std::size_t>(b * L + i)] = i;
    }
  }
  Tensor zx = bit_proj_(Tensor::constant(std::move(channels)));
  zx = ops::add(zx, ops::gather_rows(time_embedding(gammas), sample_of_row));
  zx = ops::add(zx, ops::gather_rows(text_positions_, position_of_row));
  zx = mode.apply_dropout(zx);

  std::vector<int> tokens, token_positions, lens(static_cast<std::size_t>(B), L);
  std::vector<int> retrieved_lens(static_cast<std::size_t>(B), 0);
  for (int b = 0; b < B && !bundle.retrieved.empty(); ++b) {
    const Sentence& s = bundle.retrieved[static_cast<std::size_t>(b)];
    const int len = std::min(static_cast<int>(s.size()), cfg_.max_retrieved);
    for (int i = 0; i < len; ++i) {
      const int w = s[static_cast<std::size_t>(i)];
      if (w < 0 || w >= cfg_.vocab_size) throw std::out_of_range("condition_semantic: retrieved word out of range");
      tokens.push_back(w);
      token_positions.push_back(i);
    }
    retrieved_lens[static_cast<std::size_t>(b)] = len;
    lens[static_cast<std::size_t>(b)] += len;
  }

  Tensor seq = zx;
  if (!tokens.empty()) {
    Tensor zr = ops::add(ops::gather_rows(word_embedding_, tokens), ops::gather_rows(retrieved_positions_, token_positions));
    zr = mode.apply_dropout(zr);
    const Tensor combined = ops::concat_rows({zx, zr});
    std::vector<int> order;
    order.reserve(static_cast<std::size_t>(combined.rows()));
    int r_off = static_cast<int>(rows);
    for (int b = 0; b < B; ++b) {
      for (int i = 0; i < L; ++i) order.push_back(b * L + i);
      for (int i = 0; i < retrieved_lens[static_cast<std::size_t>(b)]; ++i) order.push_back(r_off++);
    }
    seq = ops::gather_rows(combined, order);
  }
  for (const auto& block : semantic_blocks_) seq = block(seq, lens, mode);
  if (tokens.empty()) return seq;

  std::vector<int> keep;
  keep.reserve(static_cast<std::size_t>(rows));
  int off = 0;
  for (int b = 0; b < B; ++b) {
    for (int i = 0; i < L; ++i) keep.push_back(off + i);
    off += lens[static_cast<std::size_t>(b)];
  }
  return ops::gather_rows(seq, keep);
}

Tensor DiffusionStage::probs_to_bits(const Tensor& probs) const {
  return ops::matmul(probs, Tensor::constant(code_table_));
}

StageOutput DiffusionStage::decode_sentence(const Tensor& h0, const Tensor& visual_tokens,
                                            const std::vector<int>& visual_lens, const ForwardMode& mode) const {
  const int B = static_cast<int>(visual_lens.size());
  if (h0.rows() != static_cast<Eigen::Index>(B) * cfg_.max_len || h0.cols() != cfg_.d_model) {
    throw ShapeError("decode_sentence: tokens " + shape_str(h0.value()) + " for " + std::to_string(B) + " images");
  }
  const std::vector<int> lens(static_cast<std::size_t>(B), cfg_.max_len);
  Tensor h = h0;
  for (const auto& block : decoder_blocks_) h = block(h, lens, visual_tokens, visual_lens, false, mode);
  StageOutput out;
  out.logits = head_(h);
  out.probs = ops::softmax_rows(out.logits);
  out.bits = probs_to_bits(out.probs);
  return out;
}

StageOutput DiffusionStage::forward(const Mat& x_t, std::span<const double> gammas, const Tensor& visual_tokens,
                                    const std::vector<int>& visual_lens, const ConditioningBundle& bundle,
                                    const ForwardMode& mode) const {
  if (visual_lens.size() != gammas.size()) throw std::invalid_argument("stage forward: batch size mismatch");
  const Tensor h0 = condition_semantic(x_t, bundle, gammas, mode);
  return decode_sentence(h0, visual_tokens, visual_lens, mode);
}

StageOutput DiffusionStage::forward(const Mat& x_t, std::span<const double> gammas, const VisualBatch& visual,
                                    const ConditioningBundle& bundle, const ForwardMode& mode) const {
  return forward(x_t, gammas, encode_visual(visual, mode), visual.lens, bundle, mode);
}

Tensor smoothed_cross_entropy(const Tensor& logits, std::span<const int> targets, double smoothing) {
  if (!(smoothing >= 0.0 && smoothing < 1.0)) {
    throw std::invalid_argument("smoothed_cross_entropy: smoothing must be in [0, 1)");
  }
  const Tensor lp = ops::log_softmax_rows(logits);
  const Tensor nll = ops::scale(ops::mean(ops::pick(lp, targets)), -(1.0 - smoothing));
  if (smoothing == 0.0) return nll;
  const double w = static_cast<double>(logits.cols());
  return ops::add(nll, ops::scale(ops::mean(ops::sum_rows(lp)), -smoothing / w));
}

StageLoss stage_loss(const StageOutput& out, const Mat& x0, std::span<const int> targets, double smoothing) {
  StageLoss loss;
  const Tensor xe = smoothed_cross_entropy(out.logits, targets, smoothing);
  const Tensor bit = l_bit(out.bits, Tensor::constant(x0));
  loss.xe = xe.item();
  loss.bit = bit.item();
  loss.total = ops::add(xe, bit);
  return loss;
}

}  // namespace scdnet
