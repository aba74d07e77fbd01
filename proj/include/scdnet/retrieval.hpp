// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <vector>

#include "scdnet/bitcodec.hpp"
#include "scdnet/tensor.hpp"

namespace scdnet {

/// Feature-space nearest-neighbour stand-in for a cross-modal retriever:
/// object features in, training caption out.
class SentencePool {
 public:
  struct Entry {
    int sample_id;
    Sentence sentence;
  };
  struct Source {
    int sample_id;
    const Mat* features;              // K x D_v
    const std::vector<Sentence>* captions;
  };

  /// One pool entry per (sample, caption) pair.
  static SentencePool build(const std::vector<Source>& samples);

  std::size_t size() const { return entries_.size(); }
  const Entry& entry(std::size_t i) const { return entries_.at(i); }
  /// Unit-norm mean-pooled feature of entry i.
  Eigen::RowVectorXd feature(std::size_t i) const { return features_.row(static_cast<Eigen::Index>(i)); }

  /// Index of the entry with highest cosine to the mean-pooled query whose
  /// sample id differs from `exclude_sample_id` (pass -1 to keep all).
  /// Ties go to the lowest pool index.
  std::size_t retrieve_index(const Mat& query, int exclude_sample_id = -1) const;
  const Sentence& retrieve(const Mat& query, int exclude_sample_id = -1) const;

  /// Text index: one line per entry, "sample_id<TAB>hex features<TAB>tokens".
  void save(const std::filesystem::path& path) const;
  static SentencePool load(const std::filesystem::path& path);

 private:
  std::vector<Entry> entries_;
  Mat features_;  // entries x D_v, rows L2-normalized
};

/// Mean over rows, scaled to unit L2 norm (zero vector stays zero).
Eigen::RowVectorXd pooled_unit_feature(const Mat& features);

}  // namespace scdnet
