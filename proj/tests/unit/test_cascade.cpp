// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "scdnet/cascade.hpp"
#include "test_support.hpp"

using namespace scdnet;
using scdnet::testing::random_mat;

namespace {

StageConfig mini(int W = 12) {
  StageConfig c;
  c.visual_blocks = 1;
  c.decoder_blocks = 1;
  c.semantic_blocks = 1;
  c.d_model = 8;
  c.heads = 2;
  c.ffn_mult = 2;
  c.feature_dim = 4;
  c.vocab_size = W;
  c.bits = bits_per_word(W);
  c.max_len = 3;
  c.max_retrieved = 3;
  c.time_features = 4;
  c.dropout = 0.0;
  return c;
}

Prediction onehot_prediction(const Mat& table, std::vector<int> words) {
  Mat p = Mat::Zero(static_cast<Eigen::Index>(words.size()), table.rows());
  for (std::size_t i = 0; i < words.size(); ++i) p(static_cast<Eigen::Index>(i), words[i]) = 1.0;
  return {Tensor::constant(p * table), Tensor::constant(p)};
}

struct Fixture {
  Rng rng{21};
  StageConfig cfg = mini();
  BitCodec codec{cfg.vocab_size};
  Mat f1 = random_mat(2, cfg.feature_dim, rng);
  Mat f2 = random_mat(3, cfg.feature_dim, rng);
  VisualBatch visual = VisualBatch::from({&f1, &f2});
  std::vector<Sentence> retrieved{{4, 5}, {6}};
  CaptionBatch batch{visual, {{2, 3, 4}, {5, 6}}, retrieved};
};

}  // namespace

TEST_CASE("fuse: idempotent, averaging rules") {
  BitCodec codec(4);
  const Mat& table = codec.table();
  const Prediction a = onehot_prediction(table, {1, 2});
  for (FusionMode m : {FusionMode::mean_bits, FusionMode::mean_prob}) {
    const Prediction f = fuse(a, a, m, table);
    CHECK(f.bits.value().isApprox(a.bits.value()));
    CHECK(f.probs.value().isApprox(a.probs.value()));
  }
  Prediction plus{Tensor::constant(Mat::Ones(1, 2)), Tensor::constant(Mat::Constant(1, 4, 0.25))};
  Prediction minus{Tensor::constant(-Mat::Ones(1, 2)), Tensor::constant(Mat::Constant(1, 4, 0.25))};
  CHECK(fuse(plus, minus, FusionMode::mean_bits, table).bits.value().isZero());

  const Prediction w1 = onehot_prediction(table, {1});
  const Prediction w2 = onehot_prediction(table, {2});
  const Prediction mixed = fuse(w1, w2, FusionMode::mean_prob, table);
  CHECK(mixed.probs.value()(0, 1) == 0.5);
  CHECK(mixed.probs.value()(0, 2) == 0.5);
  CHECK(mixed.bits.value().isApprox(0.5 * (table.row(1) + table.row(2))));
  CHECK(mixed.bits.value().isZero());  // 01 and 10 average to the origin

  CHECK(fusion_from_string("mean_bits") == FusionMode::mean_bits);
  CHECK(std::string(to_string(FusionMode::mean_prob)) == "mean_prob");
  CHECK_THROWS(fusion_from_string("max"));
  CHECK_THROWS_AS(fuse(w1, a, FusionMode::mean_bits, table), ShapeError);
}

TEST_CASE("cascade forward: one stage equals the bare stage; M stages cost M evaluations") {
  Fixture fx;
  Rng init(1);
  CascadeModel one(fx.cfg, fx.codec, 1, FusionMode::mean_prob, init);
  const Mat x_t = random_mat(6, fx.cfg.bits, fx.rng);
  const std::vector<double> g{0.5, -1.0};
  const Mat sc = random_mat(6, fx.cfg.bits, fx.rng);
  const auto outs = one.forward(x_t, g, one.encode_visual(fx.visual), fx.visual.lens, {sc}, fx.retrieved);
  const StageOutput direct = one.stage(0).forward(x_t, g, fx.visual, ConditioningBundle{sc, std::nullopt, fx.retrieved});
  CHECK(outs.fused.back().probs.value() == direct.probs.value());
  CHECK(one.stage_evaluations() == 1);

  Rng init2(1);
  CascadeModel two(fx.cfg, fx.codec, 2, FusionMode::mean_prob, init2);
  const long before = two.stage_evaluations();
  const std::vector<Mat> scs(2, sc);
  two.forward(x_t, g, two.encode_visual(fx.visual), fx.visual.lens, scs, fx.retrieved);
  CHECK(two.stage_evaluations() - before == 2);

  SamplerConfig sampler;
  sampler.steps = 7;
  Rng r(3);
  const long start = two.stage_evaluations();
  cascade_sample(two, fx.visual, fx.retrieved, sampler, NoiseSchedule{}, r);
  CHECK(two.stage_evaluations() - start == 14);
}

TEST_CASE("cascade: the second stage reads the first stage's prediction") {
  Fixture fx;
  Rng init(2);
  CascadeModel model(fx.cfg, fx.codec, 2, FusionMode::mean_bits, init);
  const Mat x_t = random_mat(6, fx.cfg.bits, fx.rng);
  const std::vector<double> g{0.0, 0.0};
  const Tensor tokens = model.stage(1).encode_visual(fx.visual);
  ConditioningBundle a{Mat::Zero(6, fx.cfg.bits), Mat::Ones(6, fx.cfg.bits), fx.retrieved};
  ConditioningBundle b = a;
  b.prev_stage = -Mat::Ones(6, fx.cfg.bits);
  const Mat pa = model.stage(1).forward(x_t, g, tokens, fx.visual.lens, a).probs.value();
  const Mat pb = model.stage(1).forward(x_t, g, tokens, fx.visual.lens, b).probs.value();
  CHECK_FALSE(pa.isApprox(pb));
}

TEST_CASE("cascade sampling: one stage matches the single-stage sampler, fixed seeds repeat") {
  Fixture fx;
  Rng init(3);
  CascadeModel model(fx.cfg, fx.codec, 1, FusionMode::mean_prob, init);
  SamplerConfig sampler;
  sampler.steps = 6;
  const NoiseSchedule schedule;

  Rng r1(5);
  SampleResult via_cascade;
  const auto words = cascade_sample(model, fx.visual, fx.retrieved, sampler, schedule, r1, &via_cascade);

  const DiffusionStage& stage = model.stage(0);
  const Tensor tokens = stage.encode_visual(fx.visual);
  Denoiser direct = [&](const Mat& x_t, double gamma, const Mat& self_cond) {
    NoGradGuard ng;
    const std::vector<double> gs(2, gamma);
    const StageOutput o = stage.forward(x_t, gs, tokens, fx.visual.lens, ConditioningBundle{self_cond, std::nullopt, fx.retrieved});
    return DenoiseOutput{o.bits.value(), o.probs.value()};
  };
  Rng r2(5);
  const SampleResult plain = sample(direct, fx.codec, 6, sampler, schedule, r2);
  CHECK(plain.words == via_cascade.words);
  CHECK(plain.probs == via_cascade.probs);

  Rng init2(4);
  CascadeModel two(fx.cfg, fx.codec, 2, FusionMode::mean_prob, init2);
  Rng a(8), b(8);
  CHECK(cascade_sample(two, fx.visual, fx.retrieved, sampler, schedule, a) ==
        cascade_sample(two, fx.visual, fx.retrieved, sampler, schedule, b));
  REQUIRE(words.size() == 2);
  CHECK(words[0].size() == 3);
}

TEST_CASE("cascade training: per-stage losses sum to the total and frozen stages stay put") {
  Fixture fx;
  Rng init(6);
  CascadeModel model(fx.cfg, fx.codec, 2, FusionMode::mean_prob, init);
  TrainOptions opts;
  Rng r(9);
  const CascadeLoss loss = model.training_loss(fx.batch, opts, r);
  REQUIRE(loss.stages.size() == 2);
  double sum = 0.0;
  for (const auto& s : loss.stages) {
    CHECK(std::isfinite(s.total.item()));
    CHECK(s.total.item() == doctest::Approx(s.xe + s.bit));
    sum += s.total.item();
  }
  CHECK(loss.total.item() == doctest::Approx(sum).epsilon(1e-12));
  backward(loss.total);
  for (int i = 0; i < 2; ++i) {
    double norm = 0.0;
    for (const auto& t : model.stage(i).params().tensors()) {
      if (t.has_grad()) norm += t.grad().squaredNorm();
    }
    CHECK(norm > 0.0);
  }
  for (auto& t : model.parameters()) t.zero_grad();

  model.freeze_stage(0, true);
  std::vector<Mat> frozen, moving;
  for (const auto& t : model.stage(0).params().tensors()) frozen.push_back(t.value());
  for (const auto& t : model.stage(1).params().tensors()) moving.push_back(t.value());
  AdamConfig acfg;
  acfg.schedule.kind = LrSchedule::Kind::constant;
  acfg.schedule.base_lr = 1e-2;
  Adam opt(model.parameters(), acfg);
  const StepLosses step = train_cascade_step(model, opt, fx.batch, opts, r);
  CHECK(step.stages.size() == 2);
  const auto p0 = model.stage(0).params().tensors();
  for (std::size_t i = 0; i < p0.size(); ++i) CHECK(p0[i].value() == frozen[i]);
  bool changed = false;
  const auto p1 = model.stage(1).params().tensors();
  for (std::size_t i = 0; i < p1.size(); ++i) changed = changed || p1[i].value() != moving[i];
  CHECK(changed);
}

TEST_CASE("cascade: checkpoint export and import by stage name") {
  Fixture fx;
  Rng a(1), b(2);
  CascadeModel m1(fx.cfg, fx.codec, 2, FusionMode::mean_prob, a);
  CascadeModel m2(fx.cfg, fx.codec, 2, FusionMode::mean_prob, b);
  Checkpoint ck;
  m1.export_params(ck);
  m2.import_params(ck);
  const auto p1 = m1.parameters(), p2 = m2.parameters();
  for (std::size_t i = 0; i < p1.size(); ++i) CHECK(p1[i].value() == p2[i].value());
  Rng c(3);
  CascadeModel three(fx.cfg, fx.codec, 3, FusionMode::mean_prob, c);
  CHECK_THROWS(three.import_params(ck));
}
