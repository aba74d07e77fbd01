// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "scdnet/tensor.hpp"

namespace scdnet {

using Sentence = std::vector<int>;

/// Word <-> index table. Index 0 is PAD and index 1 is UNK.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  Vocabulary();
  /// Builds from the non-reserved words, in index order starting at 2.
  explicit Vocabulary(const std::vector<std::string>& words);

  int size() const { return static_cast<int>(words_.size()); }
  int index(const std::string& word) const;  // UNK when absent
  const std::string& word(int index) const;
  bool contains(const std::string& word) const { return lookup_.count(word) != 0; }
  int add(const std::string& word);

  /// Whitespace tokenization; unknown words map to UNK.
  Sentence tokenize(const std::string& text) const;
  /// Joins words, dropping PAD.
  std::string detokenize(std::span<const int> sentence) const;

  /// One word per line; line k holds index k + 2.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> lookup_;
};

/// Number of bits for a vocabulary of W words: ceil(log2 W). Requires W >= 2.
int bits_per_word(int vocab_size);

/// Fixed-length analog-bit code. Row c of the code table is the binary
/// expansion of c (most significant bit first) with 0 -> -scale, 1 -> +scale.
class BitCodec {
 public:
  BitCodec(int vocab_size, double scale = 1.0);

  int vocab_size() const { return vocab_size_; }
  int bits() const { return bits_; }
  double scale() const { return scale_; }
  /// W x n code table.
  const Mat& table() const { return table_; }

  /// length x n matrix, one row per position. Words beyond `length` are
  /// dropped, missing positions are PAD.
  Mat encode_sentence(std::span<const int> words, int length) const;
  /// Thresholds each row at zero; an exact code match gives that word,
  /// otherwise the Hamming-nearest code row (lowest index on ties).
  Sentence quantize_decode(const Mat& x) const;
  int decode_pattern(unsigned pattern) const;

 private:
  int vocab_size_;
  int bits_;
  double scale_;
  Mat table_;
};

}  // namespace scdnet
