// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <limits>

#include "scdnet/checkpoint.hpp"
#include "scdnet/ops.hpp"
#include "scdnet/optim.hpp"
#include "test_support.hpp"

using namespace scdnet;

TEST_CASE("rng: same seed, same stream; state round-trips exactly") {
  Rng a(42), b(42);
  for (int i = 0; i < 10; ++i) CHECK(a.next_u64() == b.next_u64());
  a.normal();
  const std::string st = a.state();
  const double u = a.uniform(), n = a.normal();
  Rng c(0);
  c.set_state(st);
  CHECK(c.uniform() == u);
  CHECK(c.normal() == n);
  CHECK_THROWS(c.set_state("not a state"));
}

TEST_CASE("rng: uniform ranges and below() bounds") {
  Rng r(1);
  for (int i = 0; i < 2000; ++i) {
    const double u = r.uniform();
    CHECK((u >= 0.0 && u < 1.0));
    const double v = r.uniform_open_low();
    CHECK((v > 0.0 && v <= 1.0));
    CHECK(r.below(7) < 7u);
  }
  CHECK_THROWS(r.below(0));
}

TEST_CASE("rng: normal draws have unit moments") {
  Rng r(8);
  double s = 0, sq = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    s += x;
    sq += x * x;
  }
  CHECK(s / n == doctest::Approx(0.0).epsilon(0.03).scale(1.0));
  CHECK(sq / n == doctest::Approx(1.0).epsilon(0.03));
}

TEST_CASE("rng: fork is deterministic and tag-dependent") {
  Rng a(3), b(3);
  Rng fa = a.fork(1), fb = b.fork(1);
  CHECK(fa.next_u64() == fb.next_u64());
  Rng c(3);
  CHECK(c.fork(2).next_u64() != Rng(3).fork(1).next_u64());
}

TEST_CASE("checkpoint: bit-exact round trip through bytes and files") {
  Rng r(4);
  Checkpoint ck;
  ck.header = R"({"kind":"test"})";
  ck.entries.emplace_back("w", testing::random_mat(3, 5, r));
  Mat odd(2, 2);
  odd << 0.1, -0.0, 1e-310, std::numeric_limits<double>::max();
  ck.entries.emplace_back("odd", odd);
  const Checkpoint back = deserialize_checkpoint(serialize_checkpoint(ck));
  CHECK(back.header == ck.header);
  REQUIRE(back.entries.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back.entries[i].first == ck.entries[i].first);
    CHECK(std::memcmp(back.entries[i].second.data(), ck.entries[i].second.data(),
                      sizeof(double) * static_cast<std::size_t>(ck.entries[i].second.size())) == 0);
  }
  const auto path = std::filesystem::temp_directory_path() / "scdnet_ckpt_test.bin";
  write_checkpoint(path, ck);
  CHECK(serialize_checkpoint(read_checkpoint(path)) == serialize_checkpoint(ck));
  std::filesystem::remove(path);
  CHECK(back.has("w"));
  CHECK_FALSE(back.has("nope"));
  CHECK_THROWS_AS(back.get("nope"), CheckpointError);
}

TEST_CASE("checkpoint: corrupt input is rejected") {
  Checkpoint ck;
  ck.entries.emplace_back("w", Mat::Ones(2, 2));
  std::string bytes = serialize_checkpoint(ck);
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(deserialize_checkpoint(bad_magic), CheckpointError);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), CheckpointError);
}

TEST_CASE("lr schedule: linear warmup then inverse square root") {
  LrSchedule s;
  s.base_lr = 1e-3;
  s.warmup_steps = 100;
  CHECK(s.at(1) == doctest::Approx(1e-5));
  CHECK(s.at(50) == doctest::Approx(5e-4));
  CHECK(s.at(100) == doctest::Approx(1e-3));
  CHECK(s.at(400) == doctest::Approx(5e-4));
  CHECK_THROWS(s.at(0));
  s.kind = LrSchedule::Kind::constant;
  CHECK(s.at(7) == 1e-3);
}

TEST_CASE("adam: first step matches the bias-corrected update by hand") {
  // g = 0.5: m = 0.05, v = 0.005; corrected 0.5 and 0.25; step = lr * 0.5 / 0.5.
  Tensor p = Tensor::parameter(Mat::Constant(1, 1, 1.0));
  AdamConfig cfg;
  cfg.schedule.kind = LrSchedule::Kind::constant;
  cfg.schedule.base_lr = 0.1;
  Adam opt({p}, cfg);
  backward(ops::scale(p, 0.5));
  opt.step();
  CHECK(p.value()(0, 0) == doctest::Approx(0.9).epsilon(1e-9));
  CHECK_FALSE(p.has_grad());
  CHECK(opt.first_moments()[0](0, 0) == doctest::Approx(0.05));
  CHECK(opt.second_moments()[0](0, 0) == doctest::Approx(0.005));
}

TEST_CASE("adam: global norm clipping scales the gradient") {
  Tensor p = Tensor::parameter(Mat::Zero(1, 2));
  AdamConfig cfg;
  cfg.clip_norm = 1.0;
  cfg.schedule.kind = LrSchedule::Kind::constant;
  Adam opt({p}, cfg);
  Mat w(1, 2);
  w << 30.0, 40.0;  // norm 50, clipped to 1
  backward(ops::sum(ops::mul(p, Tensor::constant(w))));
  opt.step();
  CHECK(opt.first_moments()[0](0, 0) == doctest::Approx(0.1 * 0.6));
  CHECK(opt.first_moments()[0](0, 1) == doctest::Approx(0.1 * 0.8));
}

TEST_CASE("adam: frozen parameters stay put") {
  Tensor p = Tensor::parameter(Mat::Ones(1, 1));
  Tensor q = Tensor::parameter(Mat::Ones(1, 1));
  q.set_requires_grad(false);
  AdamConfig cfg;
  cfg.schedule.kind = LrSchedule::Kind::constant;
  Adam opt({p, q}, cfg);
  backward(ops::sum(ops::add(p, q)));
  opt.step();
  CHECK(q.value()(0, 0) == 1.0);
  CHECK(p.value()(0, 0) < 1.0);
}

TEST_CASE("adam: zero gradient leaves parameters alone; constant gradient moves against its sign") {
  Tensor p = Tensor::parameter(Mat::Constant(1, 3, 0.5));
  AdamConfig cfg;
  cfg.schedule.kind = LrSchedule::Kind::constant;
  cfg.schedule.base_lr = 0.01;
  Adam opt({p}, cfg);
  backward(ops::sum(ops::scale(p, 0.0)));
  opt.step();
  CHECK(p.value() == Mat::Constant(1, 3, 0.5));

  Mat g(1, 3);
  g << 2.0, -0.001, 7.0;
  Mat start = p.value();
  for (int i = 0; i < 200; ++i) {
    backward(ops::sum(ops::mul(p, Tensor::constant(g))));
    opt.step();
  }
  // Each bias-corrected step tends to lr * sign(g).
  const Mat moved = (start - p.value()) / (200 * 0.01);
  for (int j = 0; j < 3; ++j) CHECK(moved(0, j) == doctest::Approx(g(0, j) > 0 ? 1.0 : -1.0).epsilon(0.02));
}

TEST_CASE("lr schedule: warmup rises to its peak") {
  LrSchedule s;
  s.base_lr = 1e-3;
  s.warmup_steps = 50;
  CHECK(s.at(1) < s.at(50));
  for (int i = 1; i < 50; ++i) CHECK(s.at(i) < s.at(i + 1));
}
