// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "scdnet/cascade.hpp"
#include "scdnet/dataset.hpp"
#include "scdnet/gscst.hpp"

namespace scdnet {

/// Every tunable of a run. Keys in JSON files and CLI flags use the member
/// names verbatim.
struct RunConfig {
  // data
  std::string data_dir = "data";
  std::string out_dir = "runs";
  int dataset_size = 2000;
  int num_classes = 60;
  int num_attributes = 40;
  int num_relations = 16;
  int min_objects = 2;
  int max_objects = 4;
  int min_captions = 2;
  int max_captions = 5;
  int feature_dim = 32;
  double feature_jitter = 0.05;
  double article_flip = 0.1;
  int scene_templates = 0;

  // model
  int visual_blocks = 3;
  int decoder_blocks = 3;
  int semantic_blocks = 3;
  int d_model = 128;
  int heads = 4;
  int ffn_mult = 4;
  int max_len = 12;
  int time_features = 16;
  double dropout = 0.1;
  int num_stages = 2;  // M
  std::string fusion = "mean_prob";
  bool use_semantic = true;
  double bit_scale = 1.0;

  // diffusion
  int steps = 50;  // T
  int time_difference = 0;
  double gamma_min = -13.0;
  double gamma_max = 5.0;
  bool self_conditioning = true;

  // first stage
  int batch_size = 16;
  int epochs = 30;
  double lr = 5e-4;
  std::string lr_schedule = "warmup_inv_sqrt";
  int warmup_steps = 2000;
  double clip_norm = 1.0;
  double label_smoothing = 0.1;
  std::string init_checkpoint;  // warm start for stages whose names match
  int eval_steps = 50;        // T used by periodic validation
  int eval_limit = 0;         // validation samples per check, 0 for all

  // teacher
  int teacher_epochs = 30;
  double teacher_lr = 5e-4;
  int teacher_warmup = 400;
  int beam_width = 3;

  // second stage
  int stage2_epochs = 10;
  int stage2_batch_size = 16;
  double stage2_lr = 1e-5;
  int num_samples = 5;  // N_y
  int patience = 3;
  double sample_temperature = 1.0;
  bool enforce_guide = true;

  // reproducibility
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> seeds = {1, 2, 3};

  void validate() const;

  DatasetSpec dataset_spec() const;
  StageConfig stage_config(int vocab_size) const;
  NoiseSchedule schedule() const;
  SamplerConfig sampler() const;
  SamplerConfig eval_sampler() const;
  TrainOptions train_options() const;
  AdamConfig stage1_adam() const;
  AdamConfig teacher_adam() const;
  AdamConfig stage2_adam() const;
  CandidateOptions candidate_options() const;
  FusionMode fusion_mode() const { return fusion_from_string(fusion); }
};

using RunConfigMember = std::variant<int RunConfig::*, double RunConfig::*, bool RunConfig::*,
                                     std::string RunConfig::*, std::uint64_t RunConfig::*,
                                     std::vector<std::uint64_t> RunConfig::*>;

struct RunConfigField {
  const char* name;
  const char* help;
  RunConfigMember member;
};

/// Descriptor table: one entry per RunConfig key, in declaration order.
const std::vector<RunConfigField>& run_config_fields();

nlohmann::json to_json(const RunConfig& cfg);
/// Applies the keys of `j` on top of `cfg`. Unknown keys and type
/// mismatches throw; the result is validated. On error `cfg` is left
/// unchanged.
void apply_json(RunConfig& cfg, const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});

nlohmann::json stage_config_json(const StageConfig& cfg);
StageConfig stage_config_from_json(const nlohmann::json& j);

}  // namespace scdnet
