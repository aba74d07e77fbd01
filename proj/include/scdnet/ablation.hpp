// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "scdnet/evaluate.hpp"

namespace scdnet {

/// The four arms in table order.
inline constexpr std::array<const char*, 4> kAblationArms = {"Base", "+Semantic", "+GSCST", "+Cascade"};

struct ArmRun {
  std::string arm;
  std::uint64_t seed = 0;
  std::string dataset_hash;
  EvalReport report;
};

struct AblationRow {
  std::string arm;
  std::array<double, 5> metrics{};  // B@1..B@4, CIDEr-D; medians over seeds, x100
};

struct AblationResult {
  std::vector<ArmRun> runs;        // arm-major within each seed
  std::vector<AblationRow> table;  // one row per arm
  double cider_points(const std::string& arm) const;
};

/// Per seed: generates the dataset, trains the teacher once, then trains
/// and evaluates Base (one stage, no retrieved sentence), +Semantic,
/// +GSCST (second stage on top of +Semantic) and +Cascade (M stages, both
/// training stages) on the test split. Writes ablation_runs.csv,
/// ablation.csv, ablation.txt and a manifest under `out_dir`.
AblationResult run_ablation(const RunConfig& cfg, const std::filesystem::path& out_dir, bool verbose = false);

double median(std::vector<double> v);
std::string format_ablation_table(const AblationResult& r);
std::string ablation_runs_csv(const AblationResult& r);
std::string ablation_table_csv(const AblationResult& r);

}  // namespace scdnet
