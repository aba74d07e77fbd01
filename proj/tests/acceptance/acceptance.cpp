// SPDX-License-Identifier: Apache-2.0
// Acceptance runner: one PASS/FAIL line per criterion. Tolerances and time
// budgets are fixed below. Exit status is nonzero if any criterion fails.
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "../unit/test_support.hpp"
#include "scdnet/ablation.hpp"
#include "scdnet/config.hpp"
#include "scdnet/training.hpp"

using namespace scdnet;
using scdnet::testing::gradient_error;
using scdnet::testing::random_mat;
namespace fs = std::filesystem;

namespace {

constexpr double kIdentityTol = 1e-12;
constexpr double kVarianceTol = 1e-9;
constexpr double kGradTol = 1e-3;
constexpr double kCiderIdentityTol = 1e-9;
constexpr double kOracleTol = 1e-6;
constexpr double kOverfitTarget = 9.0;       // raw CIDEr-D, 10 is a perfect match
constexpr double kSemanticMargin = 1.0;      // CIDEr points (raw x 100)
constexpr double kGscstMargin = 2.0;         // CIDEr points

struct Outcome {
  bool pass = true;
  std::string detail;
  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

struct Criterion {
  int id;
  std::string name;
  double budget_s;
  std::function<Outcome()> run;
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

std::string sci(double v) {
  std::ostringstream os;
  os.precision(2);
  os << std::scientific << v;
  return os.str();
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << std::fixed << v;
  return os.str();
}

// ---- 1: diffusion algebra ------------------------------------------------

Outcome diffusion_algebra() {
  Outcome o;
  const NoiseSchedule s;
  Rng rng(1);
  double worst_identity = 0.0, worst_var = 0.0;
  for (int i = 0; i < 200; ++i) {
    const double t = rng.uniform();
    const Mat x = random_mat(4, 5, rng);
    const Mat y = reverse_step(x, t, t, random_mat(4, 5, rng), random_mat(4, 5, rng), s);
    worst_identity = std::max(worst_identity, (y - x).cwiseAbs().maxCoeff());
    worst_var = std::max(worst_var, std::abs(s.alpha(t) * s.alpha(t) + s.sigma(t) * s.sigma(t) - 1.0));
  }
  o.require(worst_identity <= kIdentityTol, "identity step error " + sci(worst_identity));
  o.require(worst_var <= kVarianceTol, "variance error " + sci(worst_var));
  for (int W : {4, 16, 64}) {
    const BitCodec codec(W);
    Sentence target(8);
    for (int& w : target) w = static_cast<int>(rng.below(static_cast<std::uint64_t>(W)));
    const Mat x0 = codec.encode_sentence(target, 8);
    Mat probs = Mat::Zero(8, W);
    for (int i = 0; i < 8; ++i) probs(i, target[static_cast<std::size_t>(i)]) = 1.0;
    const Denoiser oracle = [&](const Mat&, double, const Mat&) { return DenoiseOutput{x0, probs}; };
    SamplerConfig cfg;
    cfg.steps = 50;
    cfg.time_difference = 0;
    cfg.stochastic = false;
    const SampleResult r = sample(oracle, codec, 8, cfg, s, rng);
    o.require(r.bit_words == target && r.words == target, "chain failed for W=" + std::to_string(W));
  }
  o.detail = o.pass ? "identity err " + sci(worst_identity) + ", variance err " + sci(worst_var)
                    : o.detail;
  return o;
}

// ---- 2: gradients --------------------------------------------------------

Tensor probe(const Tensor& y, const Mat& w) { return ops::sum(ops::mul(y, Tensor::constant(w))); }

Outcome gradient_suite() {
  Outcome o;
  Rng rng(2);
  Tensor a = Tensor::parameter(random_mat(3, 4, rng));
  Tensor b = Tensor::parameter(random_mat(3, 4, rng));
  Tensor w = Tensor::parameter(random_mat(4, 5, rng));
  Tensor bias = Tensor::parameter(random_mat(1, 5, rng));
  Tensor row = Tensor::parameter(random_mat(1, 4, rng));
  Tensor gain = Tensor::parameter(random_mat(1, 4, rng));
  Tensor pos = Tensor::parameter((random_mat(3, 4, rng).array().abs() + 0.5).matrix());
  const Mat w34 = random_mat(3, 4, rng), w35 = random_mat(3, 5, rng), w31 = random_mat(3, 1, rng);
  const Mat w24 = random_mat(2, 4, rng), w44 = random_mat(4, 4, rng), w38 = random_mat(3, 8, rng);
  const Mat w64 = random_mat(6, 4, rng);
  const std::vector<int> lens{1, 2}, idx{2, 0, 2, 1}, cols{3, 0, 1};
  const std::vector<std::pair<std::string, std::function<double()>>> cases{
      {"matmul", [&] { return gradient_error([&] { return probe(ops::matmul(a, w), w35); }, {a, w}); }},
      {"linear", [&] { return gradient_error([&] { return probe(ops::linear(a, w, bias), w35); }, {a, w, bias}); }},
      {"add", [&] { return gradient_error([&] { return probe(ops::add(a, b), w34); }, {a, b}); }},
      {"sub", [&] { return gradient_error([&] { return probe(ops::sub(a, b), w34); }, {a, b}); }},
      {"mul", [&] { return gradient_error([&] { return probe(ops::mul(a, b), w34); }, {a, b}); }},
      {"scale", [&] { return gradient_error([&] { return probe(ops::scale(a, 1.3), w34); }, {a}); }},
      {"add_row", [&] { return gradient_error([&] { return probe(ops::add_row(a, row), w34); }, {a, row}); }},
      {"gelu", [&] { return gradient_error([&] { return probe(ops::gelu(a), w34); }, {a}); }},
      {"relu", [&] { return gradient_error([&] { return probe(ops::relu(a), w34); }, {a}); }},
      {"tanh", [&] { return gradient_error([&] { return probe(ops::tanh(a), w34); }, {a}); }},
      {"log", [&] { return gradient_error([&] { return probe(ops::log(pos), w34); }, {pos}); }},
      {"softmax", [&] { return gradient_error([&] { return probe(ops::softmax_rows(a), w34); }, {a}); }},
      {"log_softmax", [&] { return gradient_error([&] { return probe(ops::log_softmax_rows(a), w34); }, {a}); }},
      {"layer_norm",
       [&] { return gradient_error([&] { return probe(ops::layer_norm(a, gain, row), w34); }, {a, gain, row}); }},
      {"sum", [&] { return gradient_error([&] { return ops::sum(ops::mul(a, a)); }, {a}); }},
      {"mean", [&] { return gradient_error([&] { return ops::mean(ops::mul(a, b)); }, {a, b}); }},
      {"sum_rows", [&] { return gradient_error([&] { return probe(ops::sum_rows(a), w31); }, {a}); }},
      {"segment_sum", [&] { return gradient_error([&] { return probe(ops::segment_sum(a, lens), w24); }, {a}); }},
      {"mse", [&] { return gradient_error([&] { return ops::mse(a, b); }, {a, b}); }},
      {"gather_rows", [&] { return gradient_error([&] { return probe(ops::gather_rows(a, idx), w44); }, {a}); }},
      {"pick", [&] { return gradient_error([&] { return probe(ops::pick(a, cols), w31); }, {a}); }},
      {"concat_cols", [&] { return gradient_error([&] { return probe(ops::concat_cols({a, b}), w38); }, {a, b}); }},
      {"concat_rows", [&] { return gradient_error([&] { return probe(ops::concat_rows({a, b}), w64); }, {a, b}); }},
      {"slice_rows", [&] { return gradient_error([&] { return probe(ops::slice_rows(a, 1, 2), w24); }, {a}); }},
  };
  double worst = 0.0;
  for (const auto& [name, fn] : cases) {
    const double e = fn();
    worst = std::max(worst, e);
    o.require(e <= kGradTol, name + " rel err " + sci(e));
  }
  for (bool causal : {false, true}) {
    ops::AttentionLayout layout;
    layout.heads = 2;
    layout.causal = causal;
    layout.q_lens = {3, 2};
    layout.k_lens = causal ? std::vector<int>{3, 2} : std::vector<int>{4, 1};
    Tensor q = Tensor::parameter(random_mat(5, 6, rng));
    Tensor k = Tensor::parameter(random_mat(5, 6, rng));
    Tensor v = Tensor::parameter(random_mat(5, 6, rng));
    const Mat wa = random_mat(5, 6, rng);
    const double e = gradient_error([&] { return probe(ops::attention(q, k, v, layout), wa); }, {q, k, v});
    worst = std::max(worst, e);
    o.require(e <= kGradTol, std::string("attention causal=") + (causal ? "1" : "0") + " rel err " + sci(e));
  }

  // Miniature stage: two blocks everywhere, full loss, early encoder weight.
  StageConfig c;
  c.visual_blocks = c.decoder_blocks = c.semantic_blocks = 2;
  c.d_model = 8;
  c.heads = 2;
  c.ffn_mult = 2;
  c.feature_dim = 5;
  c.vocab_size = 16;
  c.bits = 4;
  c.max_len = 4;
  c.max_retrieved = 4;
  c.time_features = 4;
  c.dropout = 0.0;
  const BitCodec codec(16);
  Rng init(3);
  DiffusionStage stage(c, codec, 1, init);
  const Mat f1 = random_mat(2, 5, rng), f2 = random_mat(3, 5, rng);
  const VisualBatch vb = VisualBatch::from({&f1, &f2});
  const std::vector<Sentence> targets{{2, 5, 7, 0}, {3, 3, 0, 0}};
  const Mat x0 = encode_batch(codec, targets, 4);
  const Mat x_t = forward_diffuse_at(x0, 0.5, random_mat(8, 4, rng), NoiseSchedule{});
  const std::vector<double> g{0.3, -0.4};
  const ConditioningBundle bundle{random_mat(8, 4, rng), std::nullopt, {Sentence{4, 5}, Sentence{6}}};
  const std::vector<int> flat{2, 5, 7, 0, 3, 3, 0, 0};
  std::vector<Tensor> probed;
  for (const auto& [name, t] : stage.params().entries()) {
    if (name == "stage1.visual.block0.attn.q.w" || name == "stage1.visual.proj.w" ||
        name == "stage1.semantic.word_embedding" || name == "stage1.semantic.time_fc1.w") {
      probed.push_back(t);
    }
  }
  const double e = gradient_error([&] { return stage_loss(stage.forward(x_t, g, vb, bundle), x0, flat, 0.1).total; },
                                  probed);
  worst = std::max(worst, e);
  o.require(probed.size() == 4, "miniature parameters not found");
  o.require(e <= kGradTol, "miniature stage rel err " + sci(e));
  if (o.pass) o.detail = std::to_string(cases.size() + 3) + " checks, worst rel err " + sci(worst);
  return o;
}

// ---- 3: bit codec --------------------------------------------------------

Outcome codec_suite() {
  Outcome o;
  o.require(bits_per_word(10199) == 14, "n(10199) != 14");
  Rng rng(4);
  for (int W = 2; W <= 64; ++W) {
    const BitCodec codec(W);
    for (int trial = 0; trial < 50; ++trial) {
      Sentence s(10);
      for (int& w : s) w = static_cast<int>(rng.below(static_cast<std::uint64_t>(W)));
      const Mat x = codec.encode_sentence(s, 10);
      if (codec.quantize_decode(x) != s) o.require(false, "round trip W=" + std::to_string(W));
      for (double k : {0.9, 0.01, 5.0}) {
        if (codec.quantize_decode(k * x) != s) o.require(false, "scaled decode W=" + std::to_string(W));
      }
    }
  }
  if (o.pass) o.detail = "n(10199)=14, W=2..64 round trip and scaled decode";
  return o;
}

// ---- 4: metric oracle ----------------------------------------------------

Outcome metric_suite() {
  Outcome o;
  const RefCorpus two = RefCorpus::build({{{2, 3, 4, 5, 6}}, {{7, 8, 9, 10}}});
  const double identical = cider_d(Sentence{2, 3, 4, 5, 6}, 0, two);
  o.require(std::abs(identical - 10.0) <= kCiderIdentityTol, "identical candidate " + std::to_string(identical));

  // Same corpus as tests/oracles/metrics_oracle.py.
  Vocabulary v;
  auto tok = [&v](const std::string& text) {
    std::istringstream in(text);
    Sentence s;
    for (std::string w; in >> w;) s.push_back(v.contains(w) ? v.index(w) : v.add(w));
    return s;
  };
  const std::vector<Sentence> cands{tok("the cat sat on the mat"), tok("a dog runs fast"), tok("the bird")};
  const std::vector<std::vector<Sentence>> refs{{tok("a cat sat on the mat"), tok("the cat is on the mat")},
                                                {tok("a dog runs"), tok("the dog runs fast")},
                                                {tok("a bird flies")}};
  const RefCorpus corpus = RefCorpus::build(refs);
  const double cider_oracle[] = {6.000778224981538, 5.565665862002418, 1.6355480038805226};
  const double bleu_oracle[] = {0.8433740467435463, 0.8304973509354926, 0.8086638269035479, 0.702296836134285};
  double worst = 0.0;
  for (std::size_t i = 0; i < 3; ++i) worst = std::max(worst, std::abs(cider_d(cands[i], i, corpus) - cider_oracle[i]));
  const auto b = bleu(cands, refs);
  for (std::size_t n = 0; n < 4; ++n) worst = std::max(worst, std::abs(b[n] - bleu_oracle[n]));
  o.require(worst <= kOracleTol, "oracle deviation " + sci(worst));
  if (o.pass) o.detail = "identical=" + fmt(identical, 12) + ", max oracle deviation " + sci(worst);
  return o;
}

// ---- 5: probability-weighted bits ---------------------------------------

Outcome bits_suite() {
  Outcome o;
  StageConfig c;
  c.visual_blocks = c.decoder_blocks = c.semantic_blocks = 1;
  c.d_model = 8;
  c.heads = 2;
  c.feature_dim = 4;
  c.vocab_size = 37;
  c.bits = bits_per_word(37);
  c.time_features = 4;
  const BitCodec codec(37, 1.0);
  Rng rng(5);
  DiffusionStage stage(c, codec, 1, rng);
  const Mat eye = Mat::Identity(37, 37);
  o.require(stage.probs_to_bits(Tensor::constant(eye)).value() == codec.table(), "one-hot rows differ from codes");
  Mat p(1000, 37);
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    for (Eigen::Index k = 0; k < p.cols(); ++k) p(r, k) = -std::log(rng.uniform_open_low()) * (rng.uniform() < 0.2 ? 50 : 1);
    p.row(r) /= p.row(r).sum();
  }
  const Mat bits = stage.probs_to_bits(Tensor::constant(p)).value();
  o.require(bits.cwiseAbs().maxCoeff() <= codec.scale(), "coordinate outside the hypercube");
  if (o.pass) o.detail = "max |b| over 1000 draws " + fmt(bits.cwiseAbs().maxCoeff(), 6);
  return o;
}

// ---- 6: overfit ----------------------------------------------------------

RunConfig overfit_config() {
  RunConfig c;
  c.dataset_size = 64;
  c.num_classes = 40;
  c.num_attributes = 20;
  c.num_relations = 12;
  c.article_flip = 0.0;
  c.feature_dim = 32;
  c.visual_blocks = c.decoder_blocks = c.semantic_blocks = 1;
  c.d_model = 64;
  c.heads = 4;
  c.max_len = 8;
  c.dropout = 0.0;
  c.num_stages = 1;
  c.steps = 20;
  c.eval_steps = 10;
  c.epochs = 250;  // 500 optimizer steps
  c.batch_size = 16;
  c.lr = 3e-3;
  c.warmup_steps = 100;
  c.label_smoothing = 0.0;
  c.seed = 1;
  return c;
}

Outcome overfit(const fs::path& work) {
  Outcome o;
  const RunConfig c = overfit_config();
  Dataset ds = generate_dataset(c.seed, c.dataset_size, c.dataset_spec());
  ds.train.resize(32);
  ds.val = ds.train;  // validation CIDEr is train CIDEr
  const Stage1Result r = train_stage1(c, ds, work / "overfit");
  const double cider = validation_cider(*r.model, ds, c.use_semantic, c);
  o.require(cider >= kOverfitTarget, "train CIDEr-D " + fmt(cider));
  o.detail = "train CIDEr-D " + fmt(cider) + " (target " + fmt(kOverfitTarget, 1) + ") after " +
             std::to_string(r.steps) + " steps";
  return o;
}

// ---- 7: directional ablation --------------------------------------------

RunConfig ablation_config() {
  RunConfig c;
  c.dataset_size = 1000;
  c.num_classes = 40;
  c.num_attributes = 20;
  c.num_relations = 12;
  c.feature_dim = 32;
  c.scene_templates = 30;
  c.visual_blocks = c.decoder_blocks = c.semantic_blocks = 1;
  c.d_model = 64;
  c.heads = 4;
  c.max_len = 8;
  c.dropout = 0.0;
  c.steps = 20;
  c.eval_steps = 10;
  c.epochs = 15;
  c.lr = 1e-3;
  c.warmup_steps = 100;
  c.batch_size = 16;
  c.teacher_epochs = 20;
  c.teacher_lr = 1e-3;
  c.teacher_warmup = 100;
  c.stage2_epochs = 6;
  c.stage2_lr = 1e-4;
  c.stage2_batch_size = 16;
  c.seeds = {1, 2, 3};
  return c;
}

Outcome directional_ablation(const fs::path& work) {
  Outcome o;
  const AblationResult r = run_ablation(ablation_config(), work / "ablation");
  const double base = r.cider_points("Base"), sem = r.cider_points("+Semantic");
  const double gscst = r.cider_points("+GSCST"), cascade = r.cider_points("+Cascade");
  o.require(base < sem, "Base >= +Semantic");
  o.require(sem <= gscst, "+Semantic > +GSCST");
  o.require(gscst <= cascade, "+GSCST > +Cascade");
  o.require(sem - base >= kSemanticMargin, "+Semantic margin " + fmt(sem - base, 2));
  o.require(gscst - sem >= kGscstMargin, "+GSCST margin " + fmt(gscst - sem, 2));
  std::string table = "median CIDEr points Base " + fmt(base, 2) + ", +Semantic " + fmt(sem, 2) + ", +GSCST " +
                      fmt(gscst, 2) + ", +Cascade " + fmt(cascade, 2);
  o.detail = o.pass ? table : o.detail + " (" + table + ")";
  return o;
}

// ---- 8: guided self-critical estimator ----------------------------------

Outcome estimator_suite() {
  Outcome o;
  o.require(std::abs(gscst_surrogate_value({3.0, 1.0}, 2.0, {-1.0, -4.0}) - (-1.5)) < 1e-15, "hand value");

  StageConfig c;
  c.visual_blocks = c.decoder_blocks = c.semantic_blocks = 1;
  c.d_model = 8;
  c.heads = 2;
  c.ffn_mult = 2;
  c.feature_dim = 4;
  c.vocab_size = 12;
  c.bits = 4;
  c.max_len = 4;
  c.max_retrieved = 4;
  c.time_features = 4;
  c.dropout = 0.0;
  const BitCodec codec(12);
  Rng init(6), rng(7);
  CascadeModel model(c, codec, 2, FusionMode::mean_prob, init);
  const Mat f1 = random_mat(2, 4, rng), f2 = random_mat(3, 4, rng);
  const VisualBatch vb = VisualBatch::from({&f1, &f2});
  const std::vector<Sentence> guides{{2, 3, 4}, {5, 6}}, retrieved{{7, 8}, {9}};
  CandidateOptions opts;
  opts.num_samples = 4;
  AdamConfig acfg;
  acfg.schedule.kind = LrSchedule::Kind::constant;
  acfg.schedule.base_lr = 1e-3;

  // Zero advantage: every reward equals the baseline.
  CandidateSet zero = sample_candidates(model, vb, guides, retrieved, opts, rng);
  for (auto& rb : zero.batches) {
    rb.rewards.assign(4, 2.5);
    rb.baseline_reward = 2.5;
  }
  backward(gscst_surrogate(zero));
  bool all_zero = true;
  for (const auto& p : model.parameters()) all_zero = all_zero && (!p.has_grad() || p.grad().isZero(0.0));
  o.require(all_zero, "nonzero gradient at zero advantage");
  for (auto& p : model.parameters()) p.zero_grad();

  // One positive advantage on the guide of image 0.
  const Rng replay = rng;
  CandidateSet set = sample_candidates(model, vb, guides, retrieved, opts, rng);
  const double before = set.log_probs.value()(3, 0);
  for (auto& rb : set.batches) {
    rb.rewards.assign(4, 0.0);
    rb.baseline_reward = 0.0;
  }
  set.batches[0].rewards[3] = 1.0;
  Adam opt(model.parameters(), acfg);
  backward(gscst_surrogate(set));
  opt.step();
  Rng again = replay;
  const CandidateSet after = sample_candidates(model, vb, guides, retrieved, opts, again);
  const double after_lp = after.log_probs.value()(3, 0);
  o.require(after_lp > before, "log-probability did not rise");
  if (o.pass) o.detail = "log p " + fmt(before, 6) + " -> " + fmt(after_lp, 6);
  return o;
}

// ---- 9: reproducibility --------------------------------------------------

Outcome reproducibility(const fs::path& work, const std::string& cli) {
  Outcome o;
  if (cli.empty() || !fs::exists(cli)) {
    o.require(false, "CLI binary not found: '" + cli + "'");
    return o;
  }
  const fs::path cfg = work / "repro.json";
  std::ofstream(cfg) << R"({"dataset_size": 120, "num_classes": 12, "num_attributes": 6, "num_relations": 4,
 "scene_templates": 8, "visual_blocks": 1, "decoder_blocks": 1, "semantic_blocks": 1, "d_model": 16,
 "heads": 2, "max_len": 8, "dropout": 0.1, "steps": 5, "eval_steps": 4, "epochs": 2, "warmup_steps": 20,
 "teacher_epochs": 2, "teacher_warmup": 20, "stage2_epochs": 1, "num_samples": 3, "seeds": [4, 5]})";
  for (const char* run : {"run_a", "run_b"}) {
    const std::string cmd = "\"" + cli + "\" ablate --config \"" + cfg.string() + "\" --out_dir \"" +
                            (work / run).string() + "\" > \"" + (work / (std::string(run) + ".log")).string() +
                            "\" 2>&1";
    if (std::system(cmd.c_str()) != 0) o.require(false, std::string("ablate failed for ") + run);
  }
  if (!o.pass) return o;
  int compared = 0;
  for (const char* name : {"ablation.csv", "ablation_runs.csv"}) {
    const std::string a = slurp(work / "run_a" / name), b = slurp(work / "run_b" / name);
    o.require(!a.empty() && a == b, std::string(name) + " differs");
    ++compared;
  }
  for (const auto& entry : fs::recursive_directory_iterator(work / "run_a")) {
    if (entry.path().extension() != ".csv") continue;
    const fs::path rel = fs::relative(entry.path(), work / "run_a");
    if (slurp(entry.path()) != slurp(work / "run_b" / rel)) o.require(false, rel.string() + " differs");
    ++compared;
  }
  if (o.pass) o.detail = std::to_string(compared) + " CSV comparisons byte-identical";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string work = (fs::temp_directory_path() / "scdnet_acceptance").string();
  std::string cli;
  std::vector<int> only;
  app.add_option("--work-dir", work, "scratch directory");
  app.add_option("--cli", cli, "path of the scdnet command-line binary");
  app.add_option("--only", only, "run just these criteria");
  CLI11_PARSE(app, argc, argv);
  fs::remove_all(work);
  fs::create_directories(work);

  const std::vector<Criterion> criteria{
      {1, "diffusion algebra", 10, diffusion_algebra},
      {2, "gradient suite", 60, gradient_suite},
      {3, "bit codec", 5, codec_suite},
      {4, "metric oracle", 5, metric_suite},
      {5, "probability-weighted bits", 5, bits_suite},
      {6, "32-sample overfit", 600, [&] { return overfit(work); }},
      {7, "directional ablation", 3600, [&] { return directional_ablation(work); }},
      {8, "self-critical estimator", 30, estimator_suite},
      {9, "ablate reproducibility", 0, [&] { return reproducibility(work, cli); }},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget_s > 0 && secs >= c.budget_s) o.require(false, "over the " + fmt(c.budget_s, 0) + " s budget");
    if (!o.pass) ++failures;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << c.id << " (" << c.name << ", " << fmt(secs, 1)
              << " s): " << o.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
