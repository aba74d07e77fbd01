// SPDX-License-Identifier: Apache-2.0
#include "scdnet/teacher.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace scdnet {

TeacherModel::TeacherModel(const StageConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const int d = cfg_.d_model;
  const int inner = cfg_.ffn_mult * d;
  object_proj_ = Linear(params_, "teacher.visual.proj", cfg_.feature_dim, d, rng);
  for (int i = 0; i < cfg_.visual_blocks; ++i) {
    visual_blocks_.emplace_back(params_, "teacher.visual.block" + std::to_string(i), d, cfg_.heads, inner, rng);
  }
  word_embedding_ = params_.add("teacher.word_embedding", xavier_uniform(cfg_.vocab_size + 1, d, rng));
  Mat pos(cfg_.max_len, d);
  for (Eigen::Index i = 0; i < pos.size(); ++i) pos.data()[i] = 0.02 * rng.normal();
  positions_ = params_.add("teacher.positions", std::move(pos));
  for (int i = 0; i < cfg_.decoder_blocks; ++i) {
    decoder_blocks_.emplace_back(params_, "teacher.decoder.block" + std::to_string(i), d, cfg_.heads, inner, rng);
  }
  head_ = Linear(params_, "teacher.head", d, cfg_.vocab_size, rng);
}

Tensor TeacherModel::encode_visual(const VisualBatch& visual, const ForwardMode& mode) const {
  Tensor v = object_proj_(Tensor::constant(visual.features));
  for (const auto& block : visual_blocks_) v = block(v, visual.lens, mode);
  return v;
}

Tensor TeacherModel::logits(const Tensor& visual_tokens, const std::vector<int>& visual_lens,
                            const std::vector<Sentence>& prefixes, const ForwardMode& mode) const {
  const int B = static_cast<int>(prefixes.size());
  const int L = cfg_.max_len;
  if (static_cast<int>(visual_lens.size()) != B) throw std::invalid_argument("teacher logits: batch size mismatch");
  std::vector<int> inputs, positions;
  inputs.reserve(static_cast<std::size_t>(B * L));
  for (const auto& s : prefixes) {
    for (int i = 0; i < L; ++i) {
      const int prev = i == 0 ? cfg_.vocab_size
                              : (i - 1 < static_cast<int>(s.size()) ? s[static_cast<std::size_t>(i - 1)] : Vocabulary::kPad);
      inputs.push_back(prev);
      positions.push_back(i);
    }
  }
  Tensor h = ops::add(ops::gather_rows(word_embedding_, inputs), ops::gather_rows(positions_, positions));
  h = mode.apply_dropout(h);
  const std::vector<int> lens(static_cast<std::size_t>(B), L);
  for (const auto& block : decoder_blocks_) h = block(h, lens, visual_tokens, visual_lens, true, mode);
  return head_(h);
}

Tensor TeacherModel::training_loss(const VisualBatch& visual, const std::vector<Sentence>& targets, double smoothing,
                                   const ForwardMode& mode) const {
  const int L = cfg_.max_len;
  Sentence flat;
  for (const auto& s : targets) {
    for (int i = 0; i < L; ++i) flat.push_back(i < static_cast<int>(s.size()) ? s[static_cast<std::size_t>(i)] : Vocabulary::kPad);
  }
  const Tensor lg = logits(encode_visual(visual, mode), visual.lens, targets, mode);
  return smoothed_cross_entropy(lg, flat, smoothing);
}

std::vector<Sentence> TeacherModel::greedy_decode(const VisualBatch& visual) const {
  NoGradGuard no_grad;
  const int B = visual.batch_size();
  const int L = cfg_.max_len;
  const Tensor tokens = encode_visual(visual);
  std::vector<Sentence> out(static_cast<std::size_t>(B), Sentence(static_cast<std::size_t>(L), Vocabulary::kPad));
  std::vector<bool> done(static_cast<std::size_t>(B), false);
  for (int i = 0; i < L; ++i) {
    const Mat lg = logits(tokens, visual.lens, out).value();
    bool all_done = true;
    for (int b = 0; b < B; ++b) {
      if (done[static_cast<std::size_t>(b)]) continue;
      Eigen::Index best;
      lg.row(b * L + i).maxCoeff(&best);
      out[static_cast<std::size_t>(b)][static_cast<std::size_t>(i)] = static_cast<int>(best);
      if (best == Vocabulary::kPad) done[static_cast<std::size_t>(b)] = true;
      all_done = all_done && done[static_cast<std::size_t>(b)];
    }
    if (all_done) break;
  }
  return out;
}

std::vector<Sentence> TeacherModel::beam_decode(const VisualBatch& visual, int width) const {
  if (width < 1) throw std::invalid_argument("beam_decode: width must be >= 1");
  if (width == 1) return greedy_decode(visual);
  NoGradGuard no_grad;
  const int L = cfg_.max_len;
  std::vector<Sentence> result;
  Eigen::Index off = 0;
  for (int img = 0; img < visual.batch_size(); ++img) {
    const int k = visual.lens[static_cast<std::size_t>(img)];
    const Mat feats = visual.features.middleRows(off, k);
    off += k;
    struct Beam {
      Sentence words;
      double score;
      bool done;
    };
    std::vector<Beam> beams{{Sentence(static_cast<std::size_t>(L), Vocabulary::kPad), 0.0, false}};
    for (int i = 0; i < L; ++i) {
      std::vector<const Mat*> imgs(beams.size(), &feats);
      const VisualBatch vb = VisualBatch::from(imgs);
      std::vector<Sentence> prefixes;
      for (const auto& b : beams) prefixes.push_back(b.words);
      const Mat lp = ops::log_softmax_rows(logits(encode_visual(vb), vb.lens, prefixes)).value();
      std::vector<Beam> next;
      for (std::size_t b = 0; b < beams.size(); ++b) {
        if (beams[b].done) {
          next.push_back(beams[b]);
          continue;
        }
        for (int w = 0; w < cfg_.vocab_size; ++w) {
          Beam nb = beams[b];
          nb.words[static_cast<std::size_t>(i)] = w;
          nb.score += lp(static_cast<Eigen::Index>(b) * L + i, w);
          nb.done = w == Vocabulary::kPad;
          next.push_back(std::move(nb));
        }
      }
      std::stable_sort(next.begin(), next.end(), [](const Beam& a, const Beam& b) { return a.score > b.score; });
      if (static_cast<int>(next.size()) > width) next.resize(static_cast<std::size_t>(width));
      beams = std::move(next);
      if (std::all_of(beams.begin(), beams.end(), [](const Beam& b) { return b.done; })) break;
    }
    result.push_back(beams.front().words);
  }
  return result;
}

}  // namespace scdnet
