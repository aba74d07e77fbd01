// SPDX-License-Identifier: Apache-2.0
#include "scdnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace scdnet {

NGramKey ngram_key(std::span<const int> tokens) {
  if (tokens.empty() || tokens.size() > kMaxNGram) throw std::invalid_argument("ngram_key: n must be in 1..4");
  NGramKey key = 0;
  for (int t : tokens) {
    if (t < 0 || t >= 0xffff) throw std::out_of_range("ngram_key: token id out of range");
    key = (key << 16) | static_cast<NGramKey>(t + 1);
  }
  return key;
}

Sentence strip_pad(std::span<const int> sentence) {
  Sentence out;
  for (int w : sentence) {
    if (w != Vocabulary::kPad) out.push_back(w);
  }
  return out;
}

std::unordered_map<NGramKey, int> ngram_counts(std::span<const int> sentence, int n) {
  std::unordered_map<NGramKey, int> counts;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= sentence.size(); ++i) {
    ++counts[ngram_key(sentence.subspan(i, static_cast<std::size_t>(n)))];
  }
  return counts;
}

RefCorpus RefCorpus::build(const std::vector<std::vector<Sentence>>& references) {
  if (references.empty()) throw std::invalid_argument("RefCorpus::build: no samples");
  RefCorpus c;
  for (const auto& refs : references) {
    if (refs.empty()) throw std::invalid_argument("RefCorpus::build: sample without references");
    std::vector<Sentence> stripped;
    for (const auto& r : refs) stripped.push_back(strip_pad(r));
    std::unordered_map<NGramKey, int> seen;
    for (const auto& r : stripped) {
      for (int n = 1; n <= kMaxNGram; ++n) {
        for (const auto& kv : ngram_counts(r, n)) seen.emplace(kv.first, 1);
      }
    }
    for (const auto& kv : seen) ++c.df_[kv.first];
    c.refs_.push_back(std::move(stripped));
  }
  c.log_corpus_size_ = std::log(static_cast<double>(c.refs_.size()));
  for (const auto& refs : c.refs_) {
    std::vector<Vector> vs;
    for (const auto& r : refs) vs.push_back(c.vectorize(r));
    c.ref_vectors_.push_back(std::move(vs));
  }
  return c;
}

int RefCorpus::document_frequency(std::span<const int> ngram) const {
  auto it = df_.find(ngram_key(ngram));
  return it == df_.end() ? 0 : it->second;
}

RefCorpus::Vector RefCorpus::vectorize(std::span<const int> sentence) const {
  const Sentence s = strip_pad(sentence);
  Vector v;
  v.length = static_cast<int>(s.size());
  for (int n = 1; n <= kMaxNGram; ++n) {
    double sq = 0.0;
    for (const auto& [key, tf] : ngram_counts(s, n)) {
      auto it = df_.find(key);
      const double df = std::log(std::max(1.0, it == df_.end() ? 0.0 : static_cast<double>(it->second)));
      const double w = static_cast<double>(tf) * (log_corpus_size_ - df);
      v.weights[static_cast<std::size_t>(n - 1)].emplace(key, w);
      sq += w * w;
    }
    v.norms[static_cast<std::size_t>(n - 1)] = std::sqrt(sq);
  }
  return v;
}

double cider_d(std::span<const int> candidate, std::size_t sample_id, const RefCorpus& corpus,
               const CiderOptions& opts) {
  if (sample_id >= corpus.size()) {
    throw std::out_of_range("cider_d: unknown sample id " + std::to_string(sample_id));
  }
  const RefCorpus::Vector hyp = corpus.vectorize(candidate);
  const auto& refs = corpus.reference_vectors(sample_id);
  double total = 0.0;
  for (const auto& ref : refs) {
    const double delta = static_cast<double>(hyp.length - ref.length);
    const double penalty = opts.length_penalty ? std::exp(-(delta * delta) / (2.0 * opts.sigma * opts.sigma)) : 1.0;
    for (std::size_t n = 0; n < kMaxNGram; ++n) {
      double val = 0.0;
      for (const auto& [key, wh] : hyp.weights[n]) {
        auto it = ref.weights[n].find(key);
        if (it == ref.weights[n].end()) continue;
        val += (opts.clip ? std::min(wh, it->second) : wh) * it->second;
      }
      if (hyp.norms[n] != 0.0 && ref.norms[n] != 0.0) val /= hyp.norms[n] * ref.norms[n];
      total += val * penalty;
    }
  }
  return opts.scale * total / (static_cast<double>(kMaxNGram) * static_cast<double>(refs.size()));
}

double corpus_cider(const std::vector<Sentence>& candidates, const RefCorpus& corpus, const CiderOptions& opts) {
  if (candidates.size() != corpus.size()) throw std::invalid_argument("corpus_cider: one candidate per sample");
  double sum = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) sum += cider_d(candidates[i], i, corpus, opts);
  return candidates.empty() ? 0.0 : sum / static_cast<double>(candidates.size());
}

std::vector<double> bleu(const std::vector<Sentence>& candidates, const std::vector<std::vector<Sentence>>& references,
                         int max_n) {
  if (candidates.empty() || candidates.size() != references.size()) {
    throw std::invalid_argument("bleu: need one reference list per candidate");
  }
  if (max_n < 1 || max_n > kMaxNGram) throw std::invalid_argument("bleu: max_n must be in 1..4");
  std::vector<double> matches(static_cast<std::size_t>(max_n), 0.0), guesses(static_cast<std::size_t>(max_n), 0.0);
  double cand_len = 0.0, ref_len = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const Sentence c = strip_pad(candidates[i]);
    std::vector<Sentence> refs;
    for (const auto& r : references[i]) refs.push_back(strip_pad(r));
    if (refs.empty()) throw std::invalid_argument("bleu: candidate without references");
    const int cl = static_cast<int>(c.size());
    int best = -1;
    for (const auto& r : refs) {
      const int rl = static_cast<int>(r.size());
      if (best < 0 || std::abs(rl - cl) < std::abs(best - cl) || (std::abs(rl - cl) == std::abs(best - cl) && rl < best)) {
        best = rl;
      }
    }
    cand_len += cl;
    ref_len += best;
    for (int n = 1; n <= max_n; ++n) {
      std::unordered_map<NGramKey, int> max_ref;
      for (const auto& r : refs) {
        for (const auto& [k, cnt] : ngram_counts(r, n)) max_ref[k] = std::max(max_ref[k], cnt);
      }
      for (const auto& [k, cnt] : ngram_counts(c, n)) {
        auto it = max_ref.find(k);
        if (it != max_ref.end()) matches[static_cast<std::size_t>(n - 1)] += std::min(cnt, it->second);
      }
      guesses[static_cast<std::size_t>(n - 1)] += std::max(cl - n + 1, 0);
    }
  }
  const double bp = cand_len == 0.0 ? 0.0 : (cand_len > ref_len ? 1.0 : std::exp(1.0 - ref_len / cand_len));
  std::vector<double> out;
  double log_sum = 0.0;
  bool zero = false;
  for (int n = 1; n <= max_n; ++n) {
    const double m = matches[static_cast<std::size_t>(n - 1)];
    const double g = guesses[static_cast<std::size_t>(n - 1)];
    if (m == 0.0 || g == 0.0) {
      zero = true;
    } else {
      log_sum += std::log(m / g);
    }
    out.push_back(zero ? 0.0 : bp * std::exp(log_sum / n));
  }
  return out;
}

}  // namespace scdnet
