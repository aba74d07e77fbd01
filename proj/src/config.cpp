// SPDX-License-Identifier: Apache-2.0
#include "scdnet/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace scdnet {

namespace {

bool is_non_negative_integer(const nlohmann::json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

#define SCD_FIELD(name, help) RunConfigField{#name, help, &RunConfig::name}

LrSchedule make_schedule(const std::string& kind, double lr, int warmup) {
  LrSchedule s;
  s.base_lr = lr;
  s.warmup_steps = warmup;
  if (kind == "constant") {
    s.kind = LrSchedule::Kind::constant;
  } else if (kind == "warmup_inv_sqrt") {
    s.kind = LrSchedule::Kind::warmup_inv_sqrt;
  } else {
    throw std::invalid_argument("unknown lr_schedule '" + kind + "' (expected constant or warmup_inv_sqrt)");
  }
  return s;
}

}  // namespace

const std::vector<RunConfigField>& run_config_fields() {
  static const std::vector<RunConfigField> fields = {
      SCD_FIELD(data_dir, "dataset directory"),
      SCD_FIELD(out_dir, "output directory for checkpoints, CSVs and reports"),
      SCD_FIELD(dataset_size, "number of generated scenes"),
      SCD_FIELD(num_classes, "object classes in the grammar"),
      SCD_FIELD(num_attributes, "attributes in the grammar"),
      SCD_FIELD(num_relations, "relations in the grammar"),
      SCD_FIELD(min_objects, "fewest objects per scene"),
      SCD_FIELD(max_objects, "most objects per scene"),
      SCD_FIELD(min_captions, "fewest captions per scene"),
      SCD_FIELD(max_captions, "most captions per scene"),
      SCD_FIELD(feature_dim, "object feature width D_v"),
      SCD_FIELD(feature_jitter, "Gaussian jitter on object features"),
      SCD_FIELD(article_flip, "chance an article deviates from the canonical one"),
      SCD_FIELD(scene_templates, "distinct subject-relation-object class triples, 0 for unrestricted"),
      SCD_FIELD(visual_blocks, "visual encoder blocks N_v"),
      SCD_FIELD(decoder_blocks, "sentence decoder blocks N_t"),
      SCD_FIELD(semantic_blocks, "semantic Transformer blocks N_p"),
      SCD_FIELD(d_model, "hidden width"),
      SCD_FIELD(heads, "attention heads"),
      SCD_FIELD(ffn_mult, "feed-forward width multiplier"),
      SCD_FIELD(max_len, "sentence positions N_s"),
      SCD_FIELD(time_features, "sinusoidal features of the log-SNR"),
      SCD_FIELD(dropout, "dropout probability"),
      SCD_FIELD(num_stages, "cascade stages M"),
      SCD_FIELD(fusion, "stage fusion: mean_prob or mean_bits"),
      SCD_FIELD(use_semantic, "condition on the retrieved sentence"),
      SCD_FIELD(bit_scale, "analog bit magnitude"),
      SCD_FIELD(steps, "reverse steps T"),
      SCD_FIELD(time_difference, "time difference Delta"),
      SCD_FIELD(gamma_min, "log-SNR at t'=0"),
      SCD_FIELD(gamma_max, "log-SNR at t'=1"),
      SCD_FIELD(self_conditioning, "feed the previous x0 estimate back"),
      SCD_FIELD(batch_size, "first-stage batch size"),
      SCD_FIELD(epochs, "first-stage epochs"),
      SCD_FIELD(lr, "first-stage learning rate"),
      SCD_FIELD(lr_schedule, "constant or warmup_inv_sqrt"),
      SCD_FIELD(warmup_steps, "warmup iterations"),
      SCD_FIELD(clip_norm, "global gradient-norm clip, 0 disables"),
      SCD_FIELD(label_smoothing, "label smoothing of the cross-entropy"),
      SCD_FIELD(init_checkpoint, "first-stage checkpoint to warm-start matching stages from"),
      SCD_FIELD(eval_steps, "reverse steps during validation"),
      SCD_FIELD(eval_limit, "validation samples per check, 0 for all"),
      SCD_FIELD(teacher_epochs, "teacher epochs"),
      SCD_FIELD(teacher_lr, "teacher learning rate"),
      SCD_FIELD(teacher_warmup, "teacher warmup iterations"),
      SCD_FIELD(beam_width, "teacher beam width"),
      SCD_FIELD(stage2_epochs, "second-stage epochs"),
      SCD_FIELD(stage2_batch_size, "second-stage batch size"),
      SCD_FIELD(stage2_lr, "second-stage learning rate"),
      SCD_FIELD(num_samples, "sampled sentences per image N_y, guide included"),
      SCD_FIELD(patience, "validation epochs without improvement before saturation"),
      SCD_FIELD(sample_temperature, "temperature of candidate sampling"),
      SCD_FIELD(enforce_guide, "include the guide sentence among the candidates"),
      SCD_FIELD(seed, "master seed"),
      SCD_FIELD(seeds, "seeds of the ablation grid"),
  };
  return fields;
}

#undef SCD_FIELD

void RunConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument("config: " + what);
  };
  dataset_spec().validate();
  require(dataset_size >= 64, "dataset_size must be >= 64");
  stage_config(dataset_spec().grammar_vocab_size()).validate();
  require(num_stages >= 1, "num_stages must be >= 1");
  (void)fusion_mode();
  require(bit_scale > 0.0, "bit_scale must be positive");
  sampler().validate();
  eval_sampler().validate();
  schedule().validate();
  require(batch_size >= 1 && stage2_batch_size >= 1, "batch sizes must be positive");
  require(epochs >= 0 && teacher_epochs >= 0 && stage2_epochs >= 0, "epochs must be non-negative");
  require(lr > 0.0 && teacher_lr > 0.0 && stage2_lr > 0.0, "learning rates must be positive");
  (void)make_schedule(lr_schedule, lr, warmup_steps);
  require(warmup_steps >= 1 && teacher_warmup >= 1, "warmup must be >= 1");
  require(clip_norm >= 0.0, "clip_norm must be non-negative");
  require(label_smoothing >= 0.0 && label_smoothing < 1.0, "label_smoothing must be in [0, 1)");
  require(eval_limit >= 0, "eval_limit must be non-negative");
  require(beam_width >= 1, "beam_width must be >= 1");
  require(num_samples >= 1, "num_samples must be >= 1");
  require(patience >= 1, "patience must be >= 1");
  require(sample_temperature >= 0.0, "sample_temperature must be non-negative");
  require(!seeds.empty(), "seeds must not be empty");
}

DatasetSpec RunConfig::dataset_spec() const {
  DatasetSpec s;
  s.num_classes = num_classes;
  s.num_attributes = num_attributes;
  s.num_relations = num_relations;
  s.min_objects = min_objects;
  s.max_objects = max_objects;
  s.min_captions = min_captions;
  s.max_captions = max_captions;
  s.feature_dim = feature_dim;
  s.jitter = feature_jitter;
  s.article_flip = article_flip;
  s.scene_templates = scene_templates;
  return s;
}

StageConfig RunConfig::stage_config(int vocab_size) const {
  StageConfig c;
  c.visual_blocks = visual_blocks;
  c.decoder_blocks = decoder_blocks;
  c.semantic_blocks = semantic_blocks;
  c.d_model = d_model;
  c.heads = heads;
  c.ffn_mult = ffn_mult;
  c.feature_dim = feature_dim;
  c.vocab_size = vocab_size;
  c.bits = bits_per_word(vocab_size);
  c.max_len = max_len;
  c.max_retrieved = max_len;
  c.time_features = time_features;
  c.dropout = dropout;
  return c;
}

NoiseSchedule RunConfig::schedule() const { return {gamma_min, gamma_max}; }

SamplerConfig RunConfig::sampler() const {
  SamplerConfig s;
  s.steps = steps;
  s.time_difference = time_difference;
  s.stochastic = true;
  s.self_conditioning = self_conditioning;
  return s;
}

SamplerConfig RunConfig::eval_sampler() const {
  SamplerConfig s = sampler();
  s.steps = eval_steps;
  return s;
}

TrainOptions RunConfig::train_options() const {
  TrainOptions o;
  o.label_smoothing = label_smoothing;
  o.self_conditioning = self_conditioning;
  o.schedule = schedule();
  return o;
}

AdamConfig RunConfig::stage1_adam() const {
  AdamConfig a;
  a.clip_norm = clip_norm;
  a.schedule = make_schedule(lr_schedule, lr, warmup_steps);
  return a;
}

AdamConfig RunConfig::teacher_adam() const {
  AdamConfig a;
  a.clip_norm = clip_norm;
  a.schedule = make_schedule(lr_schedule, teacher_lr, teacher_warmup);
  return a;
}

AdamConfig RunConfig::stage2_adam() const {
  AdamConfig a;
  a.clip_norm = clip_norm;
  a.schedule = make_schedule("constant", stage2_lr, 1);
  return a;
}

CandidateOptions RunConfig::candidate_options() const {
  CandidateOptions o;
  o.num_samples = num_samples;
  o.temperature = sample_temperature;
  o.enforce_guide = enforce_guide;
  o.train = train_options();
  return o;
}

nlohmann::json to_json(const RunConfig& cfg) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& f : run_config_fields()) {
    std::visit([&](auto member) { j[f.name] = cfg.*member; }, f.member);
  }
  return j;
}

void apply_json(RunConfig& target, const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("config: top level must be a JSON object");
  RunConfig cfg = target;
  const auto& fields = run_config_fields();
  for (const auto& [key, value] : j.items()) {
    auto it = std::find_if(fields.begin(), fields.end(), [&](const RunConfigField& f) { return key == f.name; });
    if (it == fields.end()) throw std::invalid_argument("config: unknown key '" + key + "'");
    auto bad_type = [&](const char* want) {
      throw std::invalid_argument("config: key '" + key + "' expects " + want + ", got " + value.dump());
    };
    std::visit(overloaded{
                   [&](int RunConfig::*m) {
                     if (!value.is_number_integer()) bad_type("an integer");
                     cfg.*m = value.get<int>();
                   },
                   [&](double RunConfig::*m) {
                     if (!value.is_number()) bad_type("a number");
                     cfg.*m = value.get<double>();
                   },
                   [&](bool RunConfig::*m) {
                     if (!value.is_boolean()) bad_type("a boolean");
                     cfg.*m = value.get<bool>();
                   },
                   [&](std::string RunConfig::*m) {
                     if (!value.is_string()) bad_type("a string");
                     cfg.*m = value.get<std::string>();
                   },
                   [&](std::uint64_t RunConfig::*m) {
                     if (!is_non_negative_integer(value)) bad_type("a non-negative integer");
                     cfg.*m = value.get<std::uint64_t>();
                   },
                   [&](std::vector<std::uint64_t> RunConfig::*m) {
                     if (!value.is_array()) bad_type("an array of non-negative integers");
                     std::vector<std::uint64_t> out;
                     for (const auto& v : value) {
                       if (!is_non_negative_integer(v)) bad_type("an array of non-negative integers");
                       out.push_back(v.get<std::uint64_t>());
                     }
                     cfg.*m = std::move(out);
                   },
               },
               it->member);
  }
  cfg.validate();
  target = std::move(cfg);
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument("config " + path.string() + ": " + e.what());
  }
  apply_json(base, j);
  return base;
}

nlohmann::json stage_config_json(const StageConfig& c) {
  return {{"visual_blocks", c.visual_blocks},   {"decoder_blocks", c.decoder_blocks},
          {"semantic_blocks", c.semantic_blocks}, {"d_model", c.d_model},
          {"heads", c.heads},                   {"ffn_mult", c.ffn_mult},
          {"feature_dim", c.feature_dim},       {"vocab_size", c.vocab_size},
          {"bits", c.bits},                     {"max_len", c.max_len},
          {"max_retrieved", c.max_retrieved},   {"time_features", c.time_features},
          {"dropout", c.dropout}};
}

StageConfig stage_config_from_json(const nlohmann::json& j) {
  StageConfig c;
  c.visual_blocks = j.at("visual_blocks");
  c.decoder_blocks = j.at("decoder_blocks");
  c.semantic_blocks = j.at("semantic_blocks");
  c.d_model = j.at("d_model");
  c.heads = j.at("heads");
  c.ffn_mult = j.at("ffn_mult");
  c.feature_dim = j.at("feature_dim");
  c.vocab_size = j.at("vocab_size");
  c.bits = j.at("bits");
  c.max_len = j.at("max_len");
  c.max_retrieved = j.at("max_retrieved");
  c.time_features = j.at("time_features");
  c.dropout = j.at("dropout");
  c.validate();
  return c;
}

}  // namespace scdnet
