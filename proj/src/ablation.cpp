// SPDX-License-Identifier: Apache-2.0
#include "scdnet/ablation.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <stdexcept>

namespace scdnet {

namespace {

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << text;
}

std::uint64_t eval_seed(std::uint64_t seed) { return Rng(seed).fork(0xab1a7e).next_u64(); }

}  // namespace

double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of nothing");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

double AblationResult::cider_points(const std::string& arm) const {
  for (const auto& row : table) {
    if (row.arm == arm) return row.metrics[4];
  }
  throw std::invalid_argument("no ablation arm named " + arm);
}

AblationResult run_ablation(const RunConfig& cfg, const std::filesystem::path& out_dir, bool verbose) {
  cfg.validate();
  AblationResult res;
  std::vector<std::string> hashes;
  const TrainHooks hooks{nullptr, {}, verbose};
  for (const std::uint64_t seed : cfg.seeds) {
    RunConfig c = cfg;
    c.seed = seed;
    const std::filesystem::path seed_dir = out_dir / ("seed_" + std::to_string(seed));
    const Dataset generated = generate_dataset(seed, c.dataset_size, c.dataset_spec());
    write_dataset(seed_dir / "data", generated);
    const std::string hash = dataset_hash(seed_dir / "data");
    hashes.push_back(hash);
    // Every arm trains on the files just written.
    const Dataset ds = read_dataset(seed_dir / "data");
    const SamplerConfig sampler = c.sampler();
    auto evaluate = [&](const char* arm, const CascadeModel& m, bool semantic) {
      ArmRun run{arm, seed, hash, evaluate_model(m, semantic, ds, "test", sampler, c.schedule(), eval_seed(seed))};
      if (verbose) std::cerr << "seed " << seed << " " << arm << " test CIDEr-D " << run.report.cider << "\n";
      res.runs.push_back(std::move(run));
    };

    if (verbose) std::cerr << "seed " << seed << ": teacher\n";
    const auto teacher = train_teacher(c, ds, seed_dir / "teacher", hooks);
    const auto guides = teacher_guides(*teacher, ds, c.beam_width);

    RunConfig base = c;
    base.num_stages = 1;
    base.use_semantic = false;
    auto base_run = train_stage1(base, ds, seed_dir / "base", hooks);
    evaluate(kAblationArms[0], *base_run.model, false);

    RunConfig sem = c;
    sem.num_stages = 1;
    sem.use_semantic = true;
    auto sem_run = train_stage1(sem, ds, seed_dir / "semantic", hooks);
    evaluate(kAblationArms[1], *sem_run.model, true);

    train_stage2(sem, ds, *sem_run.model, true, guides, seed_dir / "gscst", hooks);
    evaluate(kAblationArms[2], *sem_run.model, true);

    RunConfig casc = c;
    casc.num_stages = std::max(2, c.num_stages);
    casc.use_semantic = true;
    // The new stage is stacked onto the trained single-stage model.
    casc.init_checkpoint = (seed_dir / "semantic" / "stage1.ckpt").string();
    auto casc_run = train_stage1(casc, ds, seed_dir / "cascade", hooks);
    train_stage2(casc, ds, *casc_run.model, true, guides, seed_dir / "cascade", hooks);
    evaluate(kAblationArms[3], *casc_run.model, true);
  }

  for (const char* arm : kAblationArms) {
    AblationRow row{arm, {}};
    for (int k = 0; k < 5; ++k) {
      std::vector<double> vals;
      for (const auto& r : res.runs) {
        if (r.arm == arm) vals.push_back(100.0 * (k < 4 ? r.report.bleu[static_cast<std::size_t>(k)] : r.report.cider));
      }
      row.metrics[static_cast<std::size_t>(k)] = median(vals);
    }
    res.table.push_back(row);
  }

  std::filesystem::create_directories(out_dir);
  write_text(out_dir / "ablation_runs.csv", ablation_runs_csv(res));
  write_text(out_dir / "ablation.csv", ablation_table_csv(res));
  write_text(out_dir / "ablation.txt", format_ablation_table(res));
  std::string joined;
  for (const auto& h : hashes) joined += (joined.empty() ? "" : ",") + h;
  write_manifest(out_dir, cfg, joined, "ablate");
  return res;
}

std::string format_ablation_table(const AblationResult& r) {
  std::string out;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-10s %7s %7s %7s %7s %8s\n", "arm", "B@1", "B@2", "B@3", "B@4", "CIDEr-D");
  out += buf;
  for (const auto& row : r.table) {
    std::snprintf(buf, sizeof(buf), "%-10s %7.2f %7.2f %7.2f %7.2f %8.2f\n", row.arm.c_str(), row.metrics[0],
                  row.metrics[1], row.metrics[2], row.metrics[3], row.metrics[4]);
    out += buf;
  }
  return out;
}

std::string ablation_runs_csv(const AblationResult& r) {
  std::string out = "arm,seed,dataset_hash,bleu1,bleu2,bleu3,bleu4,cider_d\n";
  for (const auto& run : r.runs) {
    out += run.arm + "," + std::to_string(run.seed) + "," + run.dataset_hash;
    for (double b : run.report.bleu) out += "," + format_number(b);
    out += "," + format_number(run.report.cider) + "\n";
  }
  return out;
}

std::string ablation_table_csv(const AblationResult& r) {
  std::string out = "arm,bleu1,bleu2,bleu3,bleu4,cider_d\n";
  for (const auto& row : r.table) {
    out += row.arm;
    for (double m : row.metrics) out += "," + format_number(m);
    out += "\n";
  }
  return out;
}

}  // namespace scdnet
