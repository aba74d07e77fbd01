// SPDX-License-Identifier: Apache-2.0
// Command-line front end with one subcommand per pipeline phase.
#include <filesystem>
#include <iostream>
#include <variant>

#include <CLI11.hpp>

#include "scdnet/ablation.hpp"
#include "scdnet/evaluate.hpp"

namespace fs = std::filesystem;
using namespace scdnet;

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

struct Invocation {
  RunConfig cfg;
  std::string config_path;
  std::string checkpoint;
  std::string teacher;
  std::string resume;
  std::string split = "test";
  int count = 10;
};

// Registers one flag per RunConfig key on `cmd`, bound to inv.cfg.
void add_config_flags(CLI::App* cmd, Invocation& inv, bool seed_required) {
  cmd->add_option("--config", inv.config_path, "JSON file whose keys override the flags")->check(CLI::ExistingFile);
  for (const auto& f : run_config_fields()) {
    const std::string flag = std::string("--") + f.name;
    CLI::Option* opt = std::visit(
        overloaded{
            [&](int RunConfig::*m) { return cmd->add_option(flag, inv.cfg.*m, f.help); },
            [&](double RunConfig::*m) { return cmd->add_option(flag, inv.cfg.*m, f.help); },
            [&](bool RunConfig::*m) { return cmd->add_option(flag, inv.cfg.*m, f.help); },
            [&](std::string RunConfig::*m) { return cmd->add_option(flag, inv.cfg.*m, f.help); },
            [&](std::uint64_t RunConfig::*m) { return cmd->add_option(flag, inv.cfg.*m, f.help); },
            [&](std::vector<std::uint64_t> RunConfig::*m) { return cmd->add_option(flag, inv.cfg.*m, f.help); },
        },
        f.member);
    opt->capture_default_str();
    if (seed_required && std::string(f.name) == "seed") opt->required();
  }
}

RunConfig resolve(const Invocation& inv) {
  if (inv.config_path.empty()) {
    inv.cfg.validate();
    return inv.cfg;
  }
  return load_run_config(inv.config_path, inv.cfg);
}

Dataset load_data(const RunConfig& cfg) {
  if (!fs::exists(fs::path(cfg.data_dir) / "dataset.json")) {
    throw std::runtime_error("no dataset in " + cfg.data_dir + "; run gen-data first");
  }
  return read_dataset(cfg.data_dir);
}

int cmd_gen_data(const RunConfig& cfg) {
  const Dataset ds = generate_dataset(cfg.seed, cfg.dataset_size, cfg.dataset_spec());
  write_dataset(cfg.data_dir, ds);
  const std::string hash = dataset_hash(cfg.data_dir);
  write_manifest(cfg.data_dir, cfg, hash, "gen-data");
  std::cout << "wrote " << ds.train.size() << "/" << ds.val.size() << "/" << ds.test.size()
            << " train/val/test scenes, W=" << ds.vocab.size() << ", hash " << hash << " to " << cfg.data_dir << "\n";
  return 0;
}

int cmd_train_teacher(const RunConfig& cfg) {
  const Dataset ds = load_data(cfg);
  write_manifest(cfg.out_dir, cfg, dataset_hash(cfg.data_dir), "train-teacher");
  train_teacher(cfg, ds, cfg.out_dir, TrainHooks{nullptr, {}, true});
  std::cout << "teacher checkpoint: " << (fs::path(cfg.out_dir) / "teacher.ckpt").string() << "\n";
  return 0;
}

int cmd_train_stage1(const RunConfig& cfg) {
  const Dataset ds = load_data(cfg);
  write_manifest(cfg.out_dir, cfg, dataset_hash(cfg.data_dir), "train-stage1");
  const Stage1Result r = train_stage1(cfg, ds, cfg.out_dir, TrainHooks{nullptr, {}, true});
  std::cout << "best validation CIDEr-D " << r.best_val_cider << " at step " << r.best_step << " of " << r.steps
            << "\n";
  return 0;
}

int cmd_train_stage2(const RunConfig& cfg, const Invocation& inv) {
  const Dataset ds = load_data(cfg);
  const fs::path out = cfg.out_dir;
  const fs::path stage1 = inv.checkpoint.empty() ? out / "stage1.ckpt" : fs::path(inv.checkpoint);
  const fs::path teacher_path = inv.teacher.empty() ? out / "teacher.ckpt" : fs::path(inv.teacher);
  const auto teacher = load_teacher(teacher_path);
  CascadeBundle bundle = load_cascade(stage1);
  write_manifest(out, cfg, dataset_hash(cfg.data_dir), "train-stage2");
  const auto guides = teacher_guides(*teacher, ds, cfg.beam_width);
  const Stage2Result r = train_stage2(cfg, ds, *bundle.model, bundle.use_semantic, guides, out,
                                      TrainHooks{nullptr, {}, true}, inv.resume);
  std::cout << "validation CIDEr-D best " << r.best_val_cider << ", final " << r.final_val_cider << " after "
            << r.steps << " steps (" << r.skipped_steps << " skipped, " << r.guides_replaced
            << " guides replaced)\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, const Invocation& inv) {
  const Dataset ds = load_data(cfg);
  const fs::path ckpt = inv.checkpoint.empty() ? fs::path(cfg.out_dir) / "stage2.ckpt" : fs::path(inv.checkpoint);
  const CascadeBundle b = load_cascade(ckpt);
  const EvalReport r = evaluate_model(*b.model, b.use_semantic, ds, inv.split, cfg.sampler(), cfg.schedule(), cfg.seed);
  fs::create_directories(cfg.out_dir);
  write_report(fs::path(cfg.out_dir) / ("eval_" + inv.split + ".txt"), r, ds.vocab);
  std::cout << format_report(r, ds.vocab);
  return 0;
}

int cmd_sample(const RunConfig& cfg, const Invocation& inv) {
  const Dataset ds = load_data(cfg);
  const fs::path ckpt = inv.checkpoint.empty() ? fs::path(cfg.out_dir) / "stage2.ckpt" : fs::path(inv.checkpoint);
  const CascadeBundle b = load_cascade(ckpt);
  const auto samples = pointers(ds.split(inv.split), inv.count);
  const auto caps = caption_samples(*b.model, samples, b.use_semantic, cfg.sampler(), cfg.schedule(), cfg.seed);
  for (std::size_t i = 0; i < caps.size(); ++i) {
    std::cout << samples[i]->id << "\t" << ds.vocab.detokenize(caps[i]) << "\n";
  }
  return 0;
}

int cmd_ablate(const RunConfig& cfg) {
  const AblationResult r = run_ablation(cfg, cfg.out_dir, true);
  std::cout << format_ablation_table(r);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semantic-conditioned diffusion captioner on synthetic scenes"};
  app.require_subcommand(1);
  Invocation inv;

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic scene dataset");
  add_config_flags(gen, inv, false);
  auto* teacher = app.add_subcommand("train-teacher", "train the autoregressive teacher");
  add_config_flags(teacher, inv, true);
  auto* s1 = app.add_subcommand("train-stage1", "cross-entropy and bit-regression training");
  add_config_flags(s1, inv, true);
  auto* s2 = app.add_subcommand("train-stage2", "guided self-critical training");
  add_config_flags(s2, inv, true);
  s2->add_option("--checkpoint", inv.checkpoint, "first-stage checkpoint (default <out_dir>/stage1.ckpt)");
  s2->add_option("--teacher", inv.teacher, "teacher checkpoint (default <out_dir>/teacher.ckpt)");
  s2->add_option("--resume", inv.resume, "second-stage state file to continue from");
  auto* ev = app.add_subcommand("eval", "CIDEr-D and BLEU@1-4 of a checkpoint on a split");
  add_config_flags(ev, inv, false);
  ev->add_option("--checkpoint", inv.checkpoint, "cascade checkpoint (default <out_dir>/stage2.ckpt)");
  ev->add_option("--split", inv.split, "train, val or test")->capture_default_str();
  auto* sm = app.add_subcommand("sample", "print generated captions");
  add_config_flags(sm, inv, false);
  sm->add_option("--checkpoint", inv.checkpoint, "cascade checkpoint (default <out_dir>/stage2.ckpt)");
  sm->add_option("--split", inv.split, "train, val or test")->capture_default_str();
  sm->add_option("--count", inv.count, "number of samples")->capture_default_str();
  auto* ab = app.add_subcommand("ablate", "train and evaluate the four ablation arms");
  add_config_flags(ab, inv, false);

  CLI11_PARSE(app, argc, argv);
  try {
    const RunConfig cfg = resolve(inv);
    if (gen->parsed()) return cmd_gen_data(cfg);
    if (teacher->parsed()) return cmd_train_teacher(cfg);
    if (s1->parsed()) return cmd_train_stage1(cfg);
    if (s2->parsed()) return cmd_train_stage2(cfg, inv);
    if (ev->parsed()) return cmd_eval(cfg, inv);
    if (sm->parsed()) return cmd_sample(cfg, inv);
    if (ab->parsed()) return cmd_ablate(cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
