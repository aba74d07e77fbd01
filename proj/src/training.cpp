// SPDX-License-Identifier: Apache-2.0
#include "scdnet/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace scdnet {

const char* const kCodeVersion = "scdnet 0.3.0";

namespace {

using nlohmann::json;

// Fixed stream tags so evaluation draws never depend on training progress.
constexpr std::uint64_t kEvalTag = 0x5eed0001;
constexpr std::uint64_t kInitTag = 0x5eed0002;
constexpr std::uint64_t kTrainTag = 0x5eed0003;

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  Rng r(seed);
  return r.fork(tag).next_u64();
}

std::vector<int> shuffled(int n, Rng& rng) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = n - 1; i > 0; --i) {
    std::swap(idx[static_cast<std::size_t>(i)], idx[rng.below(static_cast<std::uint64_t>(i + 1))]);
  }
  return idx;
}

std::vector<Mat> snapshot(const std::vector<Tensor>& params) {
  std::vector<Mat> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.value());
  return out;
}

void restore(const std::vector<Tensor>& params, const std::vector<Mat>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i];
    p.mutable_value() = values[i];
  }
}

void check_finite(double loss, const char* phase, long step) {
  if (!std::isfinite(loss)) {
    std::ostringstream os;
    os << phase << ": loss became " << loss << " at step " << step
       << "; lower the learning rate or enable clip_norm";
    throw std::runtime_error(os.str());
  }
}

double validation_cider(const CascadeModel& model, const std::vector<const Sample*>& val, const RefCorpus& corpus,
                        bool use_semantic, const RunConfig& cfg) {
  const auto caps = caption_samples(model, val, use_semantic, cfg.eval_sampler(), cfg.schedule(),
                                    derive_seed(cfg.seed, kEvalTag));
  return corpus_cider(caps, corpus);
}

}  // namespace

double validation_cider(const CascadeModel& model, const Dataset& ds, bool use_semantic, const RunConfig& cfg) {
  const auto val = pointers(ds.val, cfg.eval_limit);
  return validation_cider(model, val, reference_corpus(val), use_semantic, cfg);
}

// ---- logging ---------------------------------------------------------------

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

void CsvLog::add(long step, const std::string& metric, double value) {
  rows_.push_back(std::to_string(step) + "," + metric + "," + format_number(value));
}

std::string CsvLog::str() const {
  std::string out = "step,metric,value\n";
  for (const auto& r : rows_) out += r + "\n";
  return out;
}

void CsvLog::write(const std::filesystem::path& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << str();
}

// ---- batching --------------------------------------------------------------

CaptionBatch make_batch(const std::vector<const Sample*>& samples, const std::vector<Sentence>& targets,
                        bool use_semantic) {
  CaptionBatch b;
  std::vector<const Mat*> feats;
  for (const auto* s : samples) {
    feats.push_back(&s->features);
    if (use_semantic) b.retrieved.push_back(s->retrieved);
  }
  b.visual = VisualBatch::from(feats);
  b.targets = targets;
  return b;
}

std::vector<Sentence> caption_samples(const CascadeModel& model, const std::vector<const Sample*>& samples,
                                      bool use_semantic, const SamplerConfig& sampler, const NoiseSchedule& schedule,
                                      std::uint64_t seed, int chunk) {
  Rng rng(seed);
  std::vector<Sentence> out;
  out.reserve(samples.size());
  for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(chunk)) {
    const std::size_t end = std::min(samples.size(), start + static_cast<std::size_t>(chunk));
    const std::vector<const Sample*> part(samples.begin() + static_cast<std::ptrdiff_t>(start),
                                          samples.begin() + static_cast<std::ptrdiff_t>(end));
    const CaptionBatch b = make_batch(part, {}, use_semantic);
    auto caps = cascade_sample(model, b.visual, b.retrieved, sampler, schedule, rng);
    for (auto& c : caps) out.push_back(std::move(c));
  }
  return out;
}

RefCorpus reference_corpus(const std::vector<const Sample*>& samples) {
  std::vector<std::vector<Sentence>> refs;
  refs.reserve(samples.size());
  for (const auto* s : samples) refs.push_back(s->captions);
  return RefCorpus::build(refs);
}

std::vector<const Sample*> pointers(const std::vector<Sample>& samples, int limit) {
  std::vector<const Sample*> out;
  const std::size_t n = limit > 0 ? std::min(samples.size(), static_cast<std::size_t>(limit)) : samples.size();
  for (std::size_t i = 0; i < n; ++i) out.push_back(&samples[i]);
  return out;
}

// ---- checkpoints -----------------------------------------------------------

Checkpoint cascade_checkpoint(const CascadeModel& model, bool use_semantic, json extra) {
  Checkpoint ckpt;
  json h = extra.is_object() ? std::move(extra) : json::object();
  h["kind"] = "cascade";
  h["stage_config"] = stage_config_json(model.config());
  h["num_stages"] = model.num_stages();
  h["fusion"] = to_string(model.fusion());
  h["use_semantic"] = use_semantic;
  h["bit_scale"] = model.codec().scale();
  h["code_version"] = kCodeVersion;
  ckpt.header = h.dump();
  model.export_params(ckpt);
  return ckpt;
}

CascadeBundle cascade_from_checkpoint(const Checkpoint& ckpt) {
  CascadeBundle b;
  b.header = json::parse(ckpt.header);
  if (b.header.value("kind", "") != "cascade") throw CheckpointError("checkpoint does not hold a cascade model");
  const StageConfig sc = stage_config_from_json(b.header.at("stage_config"));
  const BitCodec codec(sc.vocab_size, b.header.at("bit_scale").get<double>());
  Rng init(0);
  b.model = std::make_unique<CascadeModel>(sc, codec, b.header.at("num_stages").get<int>(),
                                           fusion_from_string(b.header.at("fusion").get<std::string>()), init);
  b.model->import_params(ckpt);
  b.use_semantic = b.header.at("use_semantic").get<bool>();
  return b;
}

CascadeBundle load_cascade(const std::filesystem::path& path) { return cascade_from_checkpoint(read_checkpoint(path)); }

Checkpoint teacher_checkpoint(const TeacherModel& model) {
  Checkpoint ckpt;
  ckpt.header = json{{"kind", "teacher"}, {"stage_config", stage_config_json(model.config())},
                     {"code_version", kCodeVersion}}
                    .dump();
  model.params().export_to(ckpt);
  return ckpt;
}

std::unique_ptr<TeacherModel> load_teacher(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw std::runtime_error("teacher checkpoint " + path.string() + " not found");
  const Checkpoint ckpt = read_checkpoint(path);
  const json h = json::parse(ckpt.header);
  if (h.value("kind", "") != "teacher") throw CheckpointError(path.string() + " does not hold a teacher model");
  Rng init(0);
  auto model = std::make_unique<TeacherModel>(stage_config_from_json(h.at("stage_config")), init);
  model->params().import_from(ckpt);
  return model;
}

// ---- teacher ---------------------------------------------------------------

std::unique_ptr<TeacherModel> train_teacher(const RunConfig& cfg, const Dataset& ds,
                                            const std::filesystem::path& out_dir, const TrainHooks& hooks) {
  cfg.validate();
  Rng init = Rng(cfg.seed).fork(kInitTag ^ 0x7);
  auto teacher = std::make_unique<TeacherModel>(cfg.stage_config(ds.vocab.size()), init);
  Adam opt(teacher->params().tensors(), cfg.teacher_adam());
  Rng rng = Rng(cfg.seed).fork(kTrainTag ^ 0x7);
  const auto train = pointers(ds.train);
  const auto val = pointers(ds.val, cfg.eval_limit);
  const RefCorpus val_corpus = reference_corpus(val);
  CsvLog local;
  CsvLog& log = hooks.log ? *hooks.log : local;
  std::vector<Mat> best = snapshot(teacher->params().tensors());
  double best_cider = -1.0;
  long step = 0;
  for (int epoch = 0; epoch < cfg.teacher_epochs; ++epoch) {
    const auto order = shuffled(static_cast<int>(train.size()), rng);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      std::vector<const Sample*> part;
      std::vector<Sentence> targets;
      for (std::size_t i = start; i < std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size)); ++i) {
        const Sample* s = train[static_cast<std::size_t>(order[i])];
        part.push_back(s);
        targets.push_back(s->captions[rng.below(s->captions.size())]);
      }
      const CaptionBatch b = make_batch(part, targets, false);
      const ForwardMode mode{cfg.dropout, &rng};
      const Tensor loss = teacher->training_loss(b.visual, b.targets, cfg.label_smoothing, mode);
      ++step;
      check_finite(loss.item(), "train-teacher", step);
      backward(loss);
      opt.step();
      log.add(step, "loss", loss.item());
      if (hooks.on_step) hooks.on_step(step, loss.item());
    }
    std::vector<const Mat*> feats;
    for (const auto* s : val) feats.push_back(&s->features);
    const double cider = corpus_cider(teacher->greedy_decode(VisualBatch::from(feats)), val_corpus);
    log.add(step, "val_cider", cider);
    if (hooks.verbose) std::cerr << "teacher epoch " << epoch + 1 << " val CIDEr-D " << cider << "\n";
    if (cider > best_cider) {
      best_cider = cider;
      best = snapshot(teacher->params().tensors());
    }
  }
  restore(teacher->params().tensors(), best);
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    write_checkpoint(out_dir / "teacher.ckpt", teacher_checkpoint(*teacher));
    log.write(out_dir / "teacher.csv");
  }
  return teacher;
}

std::vector<Sentence> teacher_guides(const TeacherModel& teacher, const Dataset& ds, int beam_width) {
  std::vector<Sentence> guides;
  const auto train = pointers(ds.train);
  for (std::size_t start = 0; start < train.size(); start += 64) {
    std::vector<const Mat*> feats;
    for (std::size_t i = start; i < std::min(train.size(), start + 64); ++i) feats.push_back(&train[i]->features);
    for (auto& g : teacher.beam_decode(VisualBatch::from(feats), beam_width)) guides.push_back(std::move(g));
  }
  return guides;
}

// ---- first stage -------------------------------------------------------------

Stage1Result train_stage1(const RunConfig& cfg, const Dataset& ds, const std::filesystem::path& out_dir,
                          const TrainHooks& hooks) {
  cfg.validate();
  Stage1Result res;
  Rng init = Rng(cfg.seed).fork(kInitTag);
  const BitCodec codec(ds.vocab.size(), cfg.bit_scale);
  res.model = std::make_unique<CascadeModel>(cfg.stage_config(ds.vocab.size()), codec, cfg.num_stages,
                                             cfg.fusion_mode(), init);
  CascadeModel& model = *res.model;
  if (!cfg.init_checkpoint.empty()) {
    const Checkpoint warm = read_checkpoint(cfg.init_checkpoint);
    int imported = 0;
    for (int i = 0; i < model.num_stages(); ++i) {
      const auto& entries = model.stage(i).params().entries();
      if (entries.empty() || !warm.has(entries.front().first)) continue;
      model.stage(i).params().import_from(warm);
      ++imported;
    }
    if (imported == 0) throw CheckpointError(cfg.init_checkpoint + " shares no stage with this model");
  }
  Adam opt(model.parameters(), cfg.stage1_adam());
  Rng rng = Rng(cfg.seed).fork(kTrainTag);
  const TrainOptions opts = cfg.train_options();
  const auto train = pointers(ds.train);
  const auto val = pointers(ds.val, cfg.eval_limit);
  const RefCorpus val_corpus = reference_corpus(val);
  CsvLog local;
  CsvLog& log = hooks.log ? *hooks.log : local;

  std::vector<Mat> best = snapshot(model.parameters());
  res.best_val_cider = -1.0;
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = shuffled(static_cast<int>(train.size()), rng);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      std::vector<const Sample*> part;
      std::vector<Sentence> targets;
      for (std::size_t i = start; i < std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size)); ++i) {
        const Sample* s = train[static_cast<std::size_t>(order[i])];
        part.push_back(s);
        targets.push_back(s->captions[rng.below(s->captions.size())]);
      }
      const StepLosses l = train_cascade_step(model, opt, make_batch(part, targets, cfg.use_semantic), opts, rng,
                                              cfg.dropout);
      ++step;
      check_finite(l.total, "train-stage1", step);
      log.add(step, "loss", l.total);
      if (hooks.on_step) hooks.on_step(step, l.total);
    }
    const double cider = validation_cider(model, val, val_corpus, cfg.use_semantic, cfg);
    log.add(step, "val_cider", cider);
    if (hooks.verbose) std::cerr << "stage1 epoch " << epoch + 1 << " val CIDEr-D " << cider << "\n";
    if (cider > res.best_val_cider) {
      res.best_val_cider = cider;
      res.best_step = step;
      best = snapshot(model.parameters());
    }
  }
  if (cfg.epochs == 0) res.best_val_cider = validation_cider(model, val, val_corpus, cfg.use_semantic, cfg);
  restore(model.parameters(), best);
  res.steps = step;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    write_checkpoint(out_dir / "stage1.ckpt",
                     cascade_checkpoint(model, cfg.use_semantic,
                                        json{{"best_val_cider", res.best_val_cider}, {"best_step", res.best_step}}));
    log.write(out_dir / "stage1.csv");
  }
  return res;
}

// ---- second stage ------------------------------------------------------------

namespace {

struct Stage2State {
  int epoch = 0;  // completed epochs
  long step = 0;
  long skipped = 0;
  int replaced = 0;
  std::string rng_state;
  SaturationState saturation;
  double best_val = -1.0;
  double last_val = 0.0;
  std::vector<Sentence> guides;
  std::vector<Mat> best;
  std::vector<std::string> log_rows;
};

void save_stage2_state(const std::filesystem::path& path, const CascadeModel& model, bool use_semantic, Adam& opt,
                       const Stage2State& st) {
  json guides = json::array();
  for (const auto& g : st.guides) guides.push_back(g);
  json extra{{"stage2", {{"epoch", st.epoch},
                         {"step", st.step},
                         {"skipped", st.skipped},
                         {"replaced", st.replaced},
                         {"rng", st.rng_state},
                         {"saturation_best", st.saturation.best},
                         {"saturation_stale", st.saturation.epochs_without_improvement},
                         {"best_val", st.best_val},
                         {"last_val", st.last_val},
                         {"adam_step", opt.step_count()},
                         {"guides", guides},
                         {"log", st.log_rows}}}};
  Checkpoint ckpt = cascade_checkpoint(model, use_semantic, extra);
  for (std::size_t i = 0; i < st.best.size(); ++i) ckpt.entries.emplace_back("best." + std::to_string(i), st.best[i]);
  for (std::size_t i = 0; i < opt.first_moments().size(); ++i) {
    ckpt.entries.emplace_back("adam.m." + std::to_string(i), opt.first_moments()[i]);
    ckpt.entries.emplace_back("adam.v." + std::to_string(i), opt.second_moments()[i]);
  }
  write_checkpoint(path, ckpt);
}

Stage2State load_stage2_state(const std::filesystem::path& path, CascadeModel& model, Adam& opt) {
  const Checkpoint ckpt = read_checkpoint(path);
  const json h = json::parse(ckpt.header);
  if (!h.contains("stage2")) throw CheckpointError(path.string() + " is not a second-stage state file");
  const json& s = h.at("stage2");
  model.import_params(ckpt);
  Stage2State st;
  st.epoch = s.at("epoch");
  st.step = s.at("step");
  st.skipped = s.at("skipped");
  st.replaced = s.at("replaced");
  st.rng_state = s.at("rng");
  st.saturation.best = s.at("saturation_best").is_null() ? -std::numeric_limits<double>::infinity()
                                                          : s.at("saturation_best").get<double>();
  st.saturation.epochs_without_improvement = s.at("saturation_stale");
  st.best_val = s.at("best_val");
  st.last_val = s.at("last_val");
  opt.set_step_count(s.at("adam_step").get<std::int64_t>());
  for (const auto& g : s.at("guides")) st.guides.push_back(g.get<Sentence>());
  st.log_rows = s.at("log").get<std::vector<std::string>>();
  const std::size_t n = model.parameters().size();
  for (std::size_t i = 0; i < n; ++i) {
    st.best.push_back(ckpt.get("best." + std::to_string(i)));
    opt.first_moments()[i] = ckpt.get("adam.m." + std::to_string(i));
    opt.second_moments()[i] = ckpt.get("adam.v." + std::to_string(i));
  }
  return st;
}

}  // namespace

Stage2Result train_stage2(const RunConfig& cfg, const Dataset& ds, CascadeModel& model, bool use_semantic,
                          std::vector<Sentence> guides, const std::filesystem::path& out_dir, const TrainHooks& hooks,
                          const std::filesystem::path& resume, int max_epochs) {
  cfg.validate();
  const auto train = pointers(ds.train);
  if (guides.size() != train.size()) {
    throw std::invalid_argument("train_stage2: need one teacher sentence per training sample");
  }
  const auto val = pointers(ds.val, cfg.eval_limit);
  const RefCorpus val_corpus = reference_corpus(val);
  const RefCorpus train_corpus = reference_corpus(train);
  Adam opt(model.parameters(), cfg.stage2_adam());
  CandidateOptions copts = cfg.candidate_options();

  Stage2State st;
  Rng rng = Rng(cfg.seed).fork(kTrainTag ^ 0x2);
  if (!resume.empty()) {
    st = load_stage2_state(resume, model, opt);
    rng.set_state(st.rng_state);
  } else {
    st.guides = std::move(guides);
    st.best = snapshot(model.parameters());
    st.saturation.patience = cfg.patience;
    st.best_val = validation_cider(model, val, val_corpus, use_semantic, cfg);
    st.last_val = st.best_val;
    st.log_rows.push_back("0,val_cider," + format_number(st.best_val));
  }
  st.saturation.patience = cfg.patience;
  CsvLog log;
  for (const auto& r : st.log_rows) {
    const auto c1 = r.find(',');
    const auto c2 = r.find(',', c1 + 1);
    log.add(std::stol(r.substr(0, c1)), r.substr(c1 + 1, c2 - c1 - 1), std::stod(r.substr(c2 + 1)));
  }

  const int total_epochs = max_epochs >= 0 ? std::min(cfg.stage2_epochs, st.epoch + max_epochs) : cfg.stage2_epochs;
  const std::size_t bs = static_cast<std::size_t>(cfg.stage2_batch_size);
  for (int epoch = st.epoch; epoch < total_epochs; ++epoch) {
    const auto order = shuffled(static_cast<int>(train.size()), rng);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      std::vector<const Sample*> part;
      std::vector<Sentence> batch_guides;
      std::vector<std::size_t> ids;
      for (std::size_t i = start; i < std::min(order.size(), start + bs); ++i) {
        const auto k = static_cast<std::size_t>(order[i]);
        part.push_back(train[k]);
        batch_guides.push_back(st.guides[k]);
        ids.push_back(k);
      }
      const CaptionBatch b = make_batch(part, batch_guides, use_semantic);
      const auto baseline =
          baseline_decode(model, b.visual, b.retrieved, cfg.eval_sampler(), cfg.schedule(), rng.next_u64());
      CandidateSet cands = sample_candidates(model, b.visual, batch_guides, b.retrieved, copts, rng);
      for (std::size_t i = 0; i < cands.batches.size(); ++i) cands.batches[i].baseline = baseline[i];
      const GscstStepStats stats = gscst_step(model, opt, cands, ids, train_corpus);
      ++st.step;
      check_finite(stats.surrogate, "train-stage2", st.step);
      if (stats.skipped) ++st.skipped;
      log.add(st.step, "reward", stats.mean_reward);
      log.add(st.step, "baseline_reward", stats.mean_baseline);
      if (hooks.on_step) hooks.on_step(st.step, stats.surrogate);
    }
    const double cider = validation_cider(model, val, val_corpus, use_semantic, cfg);
    st.last_val = cider;
    log.add(st.step, "val_cider", cider);
    if (hooks.verbose) std::cerr << "stage2 epoch " << epoch + 1 << " val CIDEr-D " << cider << "\n";
    st.saturation.update(cider);
    if (cider > st.best_val) {
      st.best_val = cider;
      st.best = snapshot(model.parameters());
    }
    if (st.saturation.saturated()) {
      const auto estimates = caption_samples(model, train, use_semantic, cfg.eval_sampler(), cfg.schedule(),
                                             derive_seed(cfg.seed, kEvalTag ^ static_cast<std::uint64_t>(epoch)));
      for (std::size_t k = 0; k < train.size(); ++k) {
        const Sentence& chosen = refresh_guide(st.guides[k], estimates[k], k, train_corpus, st.saturation);
        if (&chosen != &st.guides[k]) {
          st.guides[k] = chosen;
          ++st.replaced;
        }
      }
      log.add(st.step, "guides_replaced", st.replaced);
    }
    st.epoch = epoch + 1;
    st.rng_state = rng.state();
    if (!out_dir.empty()) {
      std::filesystem::create_directories(out_dir);
      st.log_rows = log.rows();
      save_stage2_state(out_dir / "stage2_state.ckpt", model, use_semantic, opt, st);
    }
  }

  Stage2Result res;
  res.epochs_run = st.epoch;
  res.steps = st.step;
  res.skipped_steps = st.skipped;
  res.guides_replaced = st.replaced;
  res.final_val_cider = st.last_val;
  res.best_val_cider = st.best_val;
  if (st.epoch >= cfg.stage2_epochs) restore(model.parameters(), st.best);
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    log.write(out_dir / "stage2.csv");
    if (st.epoch >= cfg.stage2_epochs) {
      write_checkpoint(out_dir / "stage2.ckpt",
                       cascade_checkpoint(model, use_semantic, json{{"best_val_cider", st.best_val}}));
    }
  }
  return res;
}

void write_manifest(const std::filesystem::path& dir, const RunConfig& cfg, const std::string& dataset_hash,
                    const std::string& command) {
  std::filesystem::create_directories(dir);
  const json m{{"command", command},
               {"code_version", kCodeVersion},
               {"dataset_hash", dataset_hash},
               {"config", to_json(cfg)}};
  std::ofstream f(dir / "manifest.json", std::ios::binary);
  if (!f) throw std::runtime_error("cannot write manifest in " + dir.string());
  f << m.dump(2) << '\n';
}

}  // namespace scdnet
