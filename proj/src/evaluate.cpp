// SPDX-License-Identifier: Apache-2.0
#include "scdnet/evaluate.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace scdnet {

EvalReport score_captions(const std::vector<Sentence>& captions, const std::vector<const Sample*>& samples,
                          const std::string& split) {
  if (captions.size() != samples.size()) throw std::invalid_argument("score_captions: one caption per sample");
  EvalReport r;
  r.split = split;
  r.samples = samples.size();
  r.captions = captions;
  if (samples.empty()) return r;
  const RefCorpus corpus = reference_corpus(samples);
  std::vector<std::vector<Sentence>> refs;
  std::vector<ScoredCaption> scored;
  double sum = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double c = cider_d(captions[i], i, corpus);
    sum += c;
    scored.push_back({samples[i]->id, c, strip_pad(captions[i]), samples[i]->captions.front()});
    refs.push_back(samples[i]->captions);
  }
  r.cider = sum / static_cast<double>(samples.size());
  const auto b = bleu(captions, refs, 4);
  std::copy(b.begin(), b.end(), r.bleu.begin());
  std::stable_sort(scored.begin(), scored.end(),
                   [](const ScoredCaption& a, const ScoredCaption& b) { return a.cider < b.cider; });
  scored.resize(std::min<std::size_t>(scored.size(), 10));
  r.worst = std::move(scored);
  return r;
}

EvalReport evaluate_model(const CascadeModel& model, bool use_semantic, const Dataset& ds, const std::string& split,
                          const SamplerConfig& sampler, const NoiseSchedule& schedule, std::uint64_t seed) {
  const auto samples = pointers(ds.split(split));
  return score_captions(caption_samples(model, samples, use_semantic, sampler, schedule, seed), samples, split);
}

std::string format_report(const EvalReport& r, const Vocabulary& vocab) {
  std::ostringstream os;
  char buf[160];
  os << "split " << r.split << "\n";
  os << "samples " << r.samples << "\n";
  os << "cider_d " << format_number(r.cider) << "\n";
  for (int n = 0; n < 4; ++n) os << "bleu" << n + 1 << " " << format_number(r.bleu[static_cast<std::size_t>(n)]) << "\n";
  os << "\n";
  std::snprintf(buf, sizeof(buf), "%-8s %8s %8s %8s %8s %8s\n", "", "B@1", "B@2", "B@3", "B@4", "CIDEr-D");
  os << buf;
  std::snprintf(buf, sizeof(buf), "%-8s %8.2f %8.2f %8.2f %8.2f %8.2f\n", r.split.c_str(), 100 * r.bleu[0],
                100 * r.bleu[1], 100 * r.bleu[2], 100 * r.bleu[3], 100 * r.cider);
  os << buf << "\nworst captions\n";
  for (const auto& w : r.worst) {
    std::snprintf(buf, sizeof(buf), "%6d %8.4f  ", w.sample_id, w.cider);
    os << buf << vocab.detokenize(w.caption) << "  |  " << vocab.detokenize(w.reference) << "\n";
  }
  return os.str();
}

void write_report(const std::filesystem::path& path, const EvalReport& r, const Vocabulary& vocab) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << format_report(r, vocab);
}

}  // namespace scdnet
