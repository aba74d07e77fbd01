// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "scdnet/training.hpp"

namespace scdnet {

struct ScoredCaption {
  int sample_id = 0;
  double cider = 0.0;
  Sentence caption;
  Sentence reference;  // first reference, for display
};

struct EvalReport {
  std::string split;
  std::size_t samples = 0;
  double cider = 0.0;               // raw CIDEr-D, 10 for a perfect match
  std::array<double, 4> bleu{};     // BLEU@1..4 in [0, 1]
  std::vector<ScoredCaption> worst; // lowest CIDEr-D first, at most 10
  std::vector<Sentence> captions;
};

/// Scores one caption per sample against the samples' references.
EvalReport score_captions(const std::vector<Sentence>& captions, const std::vector<const Sample*>& samples,
                          const std::string& split = "");

/// Samples a caption for every sample of `split` and scores them.
EvalReport evaluate_model(const CascadeModel& model, bool use_semantic, const Dataset& ds, const std::string& split,
                          const SamplerConfig& sampler, const NoiseSchedule& schedule, std::uint64_t seed);

/// Key-value lines, a metric table and the worst-10 listing.
std::string format_report(const EvalReport& r, const Vocabulary& vocab);
void write_report(const std::filesystem::path& path, const EvalReport& r, const Vocabulary& vocab);

}  // namespace scdnet
