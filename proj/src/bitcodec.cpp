// SPDX-License-Identifier: Apache-2.0
#include "scdnet/bitcodec.hpp"

#include <bit>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace scdnet {

Vocabulary::Vocabulary() {
  add("<pad>");
  add("<unk>");
}

Vocabulary::Vocabulary(const std::vector<std::string>& words) : Vocabulary() {
  for (const auto& w : words) add(w);
}

int Vocabulary::add(const std::string& word) {
  if (word.empty() || word.find_first_of(" \t\n") != std::string::npos) {
    throw std::invalid_argument("Vocabulary: invalid word '" + word + "'");
  }
  if (auto it = lookup_.find(word); it != lookup_.end()) return it->second;
  const int idx = size();
  words_.push_back(word);
  lookup_.emplace(word, idx);
  return idx;
}

int Vocabulary::index(const std::string& word) const {
  auto it = lookup_.find(word);
  return it == lookup_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::word(int index) const {
  if (index < 0 || index >= size()) throw std::out_of_range("Vocabulary: index " + std::to_string(index));
  return words_[static_cast<std::size_t>(index)];
}

Sentence Vocabulary::tokenize(const std::string& text) const {
  std::istringstream is(text);
  Sentence out;
  for (std::string w; is >> w;) out.push_back(index(w));
  return out;
}

std::string Vocabulary::detokenize(std::span<const int> sentence) const {
  std::string out;
  for (int w : sentence) {
    if (w == kPad) continue;
    if (!out.empty()) out += ' ';
    out += word(w);
  }
  return out;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  for (std::size_t i = 2; i < words_.size(); ++i) f << words_[i] << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  Vocabulary v;
  for (std::string line; std::getline(f, line);) {
    if (line.empty()) throw std::runtime_error(path.string() + ": empty vocabulary line");
    if (v.contains(line)) throw std::runtime_error(path.string() + ": duplicate word '" + line + "'");
    v.add(line);
  }
  return v;
}

int bits_per_word(int vocab_size) {
  if (vocab_size < 2) throw std::invalid_argument("bits_per_word: vocabulary needs at least 2 words");
  return std::bit_width(static_cast<unsigned>(vocab_size - 1));
}

BitCodec::BitCodec(int vocab_size, double scale)
    : vocab_size_(vocab_size), bits_(bits_per_word(vocab_size)), scale_(scale) {
  if (!(scale > 0.0)) throw std::invalid_argument("BitCodec: scale must be positive");
  if (bits_ > 30) throw std::invalid_argument("BitCodec: vocabulary too large");
  table_.resize(vocab_size_, bits_);
  for (int c = 0; c < vocab_size_; ++c) {
    for (int j = 0; j < bits_; ++j) {
      table_(c, j) = ((c >> (bits_ - 1 - j)) & 1) ? scale_ : -scale_;
    }
  }
  std::set<std::vector<double>> rows;
  for (int c = 0; c < vocab_size_; ++c) {
    std::vector<double> r(table_.row(c).data(), table_.row(c).data() + bits_);
    if (!rows.insert(std::move(r)).second) throw std::logic_error("BitCodec: duplicate code row");
  }
}

Mat BitCodec::encode_sentence(std::span<const int> words, int length) const {
  if (length < 0) throw std::invalid_argument("encode_sentence: negative length");
  Mat out(length, bits_);
  for (int i = 0; i < length; ++i) {
    const int w = i < static_cast<int>(words.size()) ? words[static_cast<std::size_t>(i)] : Vocabulary::kPad;
    if (w < 0 || w >= vocab_size_) {
      throw std::out_of_range("encode_sentence: word index " + std::to_string(w) + " outside vocabulary of " +
                              std::to_string(vocab_size_));
    }
    out.row(i) = table_.row(w);
  }
  return out;
}

int BitCodec::decode_pattern(unsigned pattern) const {
  if (pattern < static_cast<unsigned>(vocab_size_)) return static_cast<int>(pattern);
  int best = 0;
  int best_dist = bits_ + 1;
  for (int c = 0; c < vocab_size_; ++c) {
    const int d = std::popcount(pattern ^ static_cast<unsigned>(c));
    if (d < best_dist) {
      best_dist = d;
      best = c;
    }
  }
  return best;
}

Sentence BitCodec::quantize_decode(const Mat& x) const {
  if (x.cols() != bits_) {
    throw ShapeError("quantize_decode: expected " + std::to_string(bits_) + " columns, got " + shape_str(x));
  }
  Sentence out(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    unsigned pattern = 0;
    for (int j = 0; j < bits_; ++j) pattern = (pattern << 1) | (x(i, j) > 0.0 ? 1u : 0u);
    out[static_cast<std::size_t>(i)] = decode_pattern(pattern);
  }
  return out;
}

}  // namespace scdnet
