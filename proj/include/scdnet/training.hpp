// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "scdnet/config.hpp"
#include "scdnet/teacher.hpp"

namespace scdnet {

/// Long-format curve: one "step,metric,value" row per measurement.
class CsvLog {
 public:
  void add(long step, const std::string& metric, double value);
  void write(const std::filesystem::path& path) const;
  std::string str() const;
  const std::vector<std::string>& rows() const { return rows_; }

 private:
  std::vector<std::string> rows_;
};

std::string format_number(double v);

/// Called after every optimizer step with (step, loss); may be empty.
using StepCallback = std::function<void(long step, double loss)>;

struct TrainHooks {
  CsvLog* log = nullptr;
  StepCallback on_step;
  bool verbose = false;
};

/// Batch of samples with one chosen caption each.
CaptionBatch make_batch(const std::vector<const Sample*>& samples, const std::vector<Sentence>& targets,
                        bool use_semantic);

/// Generates one caption per sample with the reverse chain, in chunks.
std::vector<Sentence> caption_samples(const CascadeModel& model, const std::vector<const Sample*>& samples,
                                      bool use_semantic, const SamplerConfig& sampler, const NoiseSchedule& schedule,
                                      std::uint64_t seed, int chunk = 64);

/// CIDEr-D references of a set of samples, padded captions stripped.
RefCorpus reference_corpus(const std::vector<const Sample*>& samples);
std::vector<const Sample*> pointers(const std::vector<Sample>& samples, int limit = 0);

/// CIDEr-D on the validation split (first `eval_limit` samples) with the
/// evaluation stream fixed by cfg.seed; the number training loops track.
double validation_cider(const CascadeModel& model, const Dataset& ds, bool use_semantic, const RunConfig& cfg);

// ---- checkpoints ---------------------------------------------------------

struct CascadeBundle {
  std::unique_ptr<CascadeModel> model;
  bool use_semantic = true;
  nlohmann::json header;
};

/// Parameters plus everything needed to rebuild the model.
Checkpoint cascade_checkpoint(const CascadeModel& model, bool use_semantic, nlohmann::json extra = {});
CascadeBundle load_cascade(const std::filesystem::path& path);
CascadeBundle cascade_from_checkpoint(const Checkpoint& ckpt);

Checkpoint teacher_checkpoint(const TeacherModel& model);
std::unique_ptr<TeacherModel> load_teacher(const std::filesystem::path& path);

// ---- training loops ------------------------------------------------------

/// Cross-entropy training of the autoregressive teacher; writes
/// teacher.ckpt and teacher.csv under `out_dir` when it is non-empty.
std::unique_ptr<TeacherModel> train_teacher(const RunConfig& cfg, const Dataset& ds,
                                            const std::filesystem::path& out_dir, const TrainHooks& hooks = {});

struct Stage1Result {
  std::unique_ptr<CascadeModel> model;  // best-validation parameters
  double best_val_cider = 0.0;
  long best_step = 0;
  long steps = 0;
};

/// L_XE + L_bit training of the cascade with validation CIDEr after every
/// epoch; the best-CIDEr parameters are kept. Writes stage1.ckpt and
/// stage1.csv under `out_dir` when it is non-empty. A NaN loss aborts.
Stage1Result train_stage1(const RunConfig& cfg, const Dataset& ds, const std::filesystem::path& out_dir,
                          const TrainHooks& hooks = {});

struct Stage2Result {
  double best_val_cider = 0.0;
  double final_val_cider = 0.0;
  int epochs_run = 0;
  long steps = 0;
  long skipped_steps = 0;
  int guides_replaced = 0;
};

/// Guided self-critical training. `guides` holds the teacher sentence of
/// every training sample (in training-split order). The model ends with the
/// best-validation parameters. After every epoch the full state goes to
/// <out_dir>/stage2_state.ckpt; `resume` restarts from such a file.
/// `max_epochs` < 0 runs cfg.stage2_epochs.
Stage2Result train_stage2(const RunConfig& cfg, const Dataset& ds, CascadeModel& model, bool use_semantic,
                          std::vector<Sentence> guides, const std::filesystem::path& out_dir,
                          const TrainHooks& hooks = {}, const std::filesystem::path& resume = {},
                          int max_epochs = -1);

/// Beam-decoded teacher sentences for the training split.
std::vector<Sentence> teacher_guides(const TeacherModel& teacher, const Dataset& ds, int beam_width);

/// Run manifest: config snapshot, dataset hash and code version.
void write_manifest(const std::filesystem::path& dir, const RunConfig& cfg, const std::string& dataset_hash,
                    const std::string& command);

extern const char* const kCodeVersion;

}  // namespace scdnet
