// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "scdnet/bitcodec.hpp"

// Caption metrics over token-index sentences. PAD tokens are ignored
// everywhere, so fixed-length model outputs can be scored directly.
namespace scdnet {

/// Up to four token ids packed into one key (ids must be < 65535).
using NGramKey = std::uint64_t;
constexpr int kMaxNGram = 4;

NGramKey ngram_key(std::span<const int> tokens);
Sentence strip_pad(std::span<const int> sentence);
/// Counts of every n-gram of length n in the sentence.
std::unordered_map<NGramKey, int> ngram_counts(std::span<const int> sentence, int n);

struct CiderOptions {
  bool clip = true;            // CIDEr-D: clip candidate weights at the reference weights
  bool length_penalty = true;  // CIDEr-D: Gaussian penalty on length difference
  double sigma = 6.0;
  double scale = 10.0;
};

/// Reference sentences with n-gram document frequencies counted once over
/// the per-sample union of reference n-grams.
class RefCorpus {
 public:
  static RefCorpus build(const std::vector<std::vector<Sentence>>& references);

  std::size_t size() const { return refs_.size(); }
  /// Number of samples whose references contain the n-gram.
  int document_frequency(std::span<const int> ngram) const;
  const std::vector<Sentence>& references(std::size_t sample_id) const { return refs_.at(sample_id); }

  struct Vector {
    std::array<std::unordered_map<NGramKey, double>, kMaxNGram> weights;
    std::array<double, kMaxNGram> norms{};
    int length = 0;
  };
  /// TF-IDF weights of a sentence under this corpus.
  Vector vectorize(std::span<const int> sentence) const;
  const std::vector<Vector>& reference_vectors(std::size_t sample_id) const { return ref_vectors_.at(sample_id); }

 private:
  std::vector<std::vector<Sentence>> refs_;
  std::unordered_map<NGramKey, int> df_;
  double log_corpus_size_ = 0.0;
  std::vector<std::vector<Vector>> ref_vectors_;
};

/// CIDEr-D of one candidate against the references of `sample_id`.
double cider_d(std::span<const int> candidate, std::size_t sample_id, const RefCorpus& corpus,
               const CiderOptions& opts = {});
/// Mean CIDEr-D over a set of candidates (candidate i scored against sample i).
double corpus_cider(const std::vector<Sentence>& candidates, const RefCorpus& corpus, const CiderOptions& opts = {});

/// Corpus-level BLEU@1..N with clipped n-gram precision and a brevity penalty
/// against the closest reference length (shorter one on ties).
std::vector<double> bleu(const std::vector<Sentence>& candidates, const std::vector<std::vector<Sentence>>& references,
                         int max_n = 4);

}  // namespace scdnet
