// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "scdnet/ops.hpp"
#include "test_support.hpp"

using namespace scdnet;
using scdnet::testing::gradient_error;
using scdnet::testing::kGradTolerance;
using scdnet::testing::random_mat;

namespace {

// Weighted sum so every output entry gets a distinct upstream gradient.
Tensor probe(const Tensor& y, const Mat& w) { return ops::sum(ops::mul(y, Tensor::constant(w))); }

struct GradCase {
  Rng rng{11};
};

}  // namespace

TEST_CASE("engine: backward accumulates into leaves and releases the graph") {
  Tensor a = Tensor::parameter(Mat::Constant(2, 2, 3.0));
  Tensor y = ops::sum(ops::mul(a, a));
  backward(y);
  CHECK(a.grad().isApprox(Mat::Constant(2, 2, 6.0)));
  CHECK(y.node()->parents.empty());
  backward(ops::sum(a));
  CHECK(a.grad().isApprox(Mat::Constant(2, 2, 7.0)));
}

TEST_CASE("engine: no-grad mode records nothing") {
  Tensor a = Tensor::parameter(Mat::Ones(2, 3));
  Tensor y;
  {
    NoGradGuard ng;
    CHECK_FALSE(grad_enabled());
    y = ops::sum(ops::scale(a, 2.0));
  }
  CHECK(grad_enabled());
  CHECK_FALSE(y.requires_grad());
  CHECK(y.item() == doctest::Approx(12.0));
}

TEST_CASE("engine: backward needs a scalar") {
  Tensor a = Tensor::parameter(Mat::Ones(2, 3));
  CHECK_THROWS_AS(backward(ops::scale(a, 2.0)), ShapeError);
}

TEST_CASE("engine: shape mismatches raise") {
  Tensor a = Tensor::constant(Mat::Ones(2, 3));
  Tensor b = Tensor::constant(Mat::Ones(3, 2));
  CHECK_THROWS_AS(ops::add(a, b), ShapeError);
  CHECK_THROWS_AS(ops::matmul(a, a), ShapeError);
  CHECK_THROWS_AS(ops::mse(a, b), ShapeError);
}

TEST_CASE("engine: detach cuts the gradient path") {
  Tensor a = Tensor::parameter(Mat::Ones(1, 1));
  Tensor y = ops::add(ops::mul(a, a), ops::detach(ops::mul(a, a)));
  backward(ops::sum(y));
  CHECK(a.grad()(0, 0) == doctest::Approx(2.0));
}

TEST_CASE("gradients of elementwise and matrix ops") {
  GradCase g;
  Tensor a = Tensor::parameter(random_mat(3, 4, g.rng));
  Tensor b = Tensor::parameter(random_mat(3, 4, g.rng));
  Tensor w = Tensor::parameter(random_mat(4, 5, g.rng));
  Tensor bias = Tensor::parameter(random_mat(1, 5, g.rng));
  Tensor row = Tensor::parameter(random_mat(1, 4, g.rng));
  const Mat w35 = random_mat(3, 5, g.rng);
  const Mat w34 = random_mat(3, 4, g.rng);

  SUBCASE("matmul") { CHECK(gradient_error([&] { return probe(ops::matmul(a, w), w35); }, {a, w}) < kGradTolerance); }
  SUBCASE("linear") {
    CHECK(gradient_error([&] { return probe(ops::linear(a, w, bias), w35); }, {a, w, bias}) < kGradTolerance);
  }
  SUBCASE("linear without bias") {
    CHECK(gradient_error([&] { return probe(ops::linear(a, w, Tensor{}), w35); }, {a, w}) < kGradTolerance);
  }
  SUBCASE("add / sub / mul") {
    CHECK(gradient_error([&] { return probe(ops::add(a, b), w34); }, {a, b}) < kGradTolerance);
    CHECK(gradient_error([&] { return probe(ops::sub(a, b), w34); }, {a, b}) < kGradTolerance);
    CHECK(gradient_error([&] { return probe(ops::mul(a, b), w34); }, {a, b}) < kGradTolerance);
  }
  SUBCASE("scale and add_row") {
    CHECK(gradient_error([&] { return probe(ops::scale(a, -1.7), w34); }, {a}) < kGradTolerance);
    CHECK(gradient_error([&] { return probe(ops::add_row(a, row), w34); }, {a, row}) < kGradTolerance);
  }
  SUBCASE("pointwise nonlinearities") {
    CHECK(gradient_error([&] { return probe(ops::gelu(a), w34); }, {a}) < kGradTolerance);
    CHECK(gradient_error([&] { return probe(ops::relu(a), w34); }, {a}) < kGradTolerance);
    CHECK(gradient_error([&] { return probe(ops::tanh(a), w34); }, {a}) < kGradTolerance);
    Tensor pos = Tensor::parameter((random_mat(3, 4, g.rng).array().abs() + 0.5).matrix());
    CHECK(gradient_error([&] { return probe(ops::log(pos), w34); }, {pos}) < kGradTolerance);
  }
  SUBCASE("softmax family") {
    CHECK(gradient_error([&] { return probe(ops::softmax_rows(a), w34); }, {a}) < kGradTolerance);
    CHECK(gradient_error([&] { return probe(ops::log_softmax_rows(a), w34); }, {a}) < kGradTolerance);
  }
  SUBCASE("layer norm") {
    Tensor gain = Tensor::parameter(random_mat(1, 4, g.rng));
    Tensor shift = Tensor::parameter(random_mat(1, 4, g.rng));
    CHECK(gradient_error([&] { return probe(ops::layer_norm(a, gain, shift), w34); }, {a, gain, shift}) <
          kGradTolerance);
  }
  SUBCASE("reductions") {
    CHECK(gradient_error([&] { return ops::sum(ops::mul(a, a)); }, {a}) < kGradTolerance);
    CHECK(gradient_error([&] { return ops::mean(ops::mul(a, b)); }, {a, b}) < kGradTolerance);
    const Mat w31 = random_mat(3, 1, g.rng);
    CHECK(gradient_error([&] { return probe(ops::sum_rows(a), w31); }, {a}) < kGradTolerance);
    const std::vector<int> lens{1, 2};
    const Mat w24 = random_mat(2, 4, g.rng);
    CHECK(gradient_error([&] { return probe(ops::segment_sum(a, lens), w24); }, {a}) < kGradTolerance);
    CHECK(gradient_error([&] { return ops::mse(a, b); }, {a, b}) < kGradTolerance);
  }
  SUBCASE("indexing and reshaping") {
    const std::vector<int> idx{2, 0, 2, 1};
    const Mat w44 = random_mat(4, 4, g.rng);
    CHECK(gradient_error([&] { return probe(ops::gather_rows(a, idx), w44); }, {a}) < kGradTolerance);
    const std::vector<int> cols{3, 0, 1};
    const Mat w31 = random_mat(3, 1, g.rng);
    CHECK(gradient_error([&] { return probe(ops::pick(a, cols), w31); }, {a}) < kGradTolerance);
    const Mat w38 = random_mat(3, 8, g.rng);
    CHECK(gradient_error([&] { return probe(ops::concat_cols({a, b}), w38); }, {a, b}) < kGradTolerance);
    const Mat w64 = random_mat(6, 4, g.rng);
    CHECK(gradient_error([&] { return probe(ops::concat_rows({a, b}), w64); }, {a, b}) < kGradTolerance);
    const Mat w24 = random_mat(2, 4, g.rng);
    CHECK(gradient_error([&] { return probe(ops::slice_rows(a, 1, 2), w24); }, {a}) < kGradTolerance);
  }
}

TEST_CASE("gradients of grouped multi-head attention") {
  Rng rng(5);
  const int d = 6;
  for (bool causal : {false, true}) {
    CAPTURE(causal);
    ops::AttentionLayout layout;
    layout.heads = 2;
    layout.causal = causal;
    layout.q_lens = {3, 2};
    layout.k_lens = causal ? std::vector<int>{3, 2} : std::vector<int>{4, 1};
    const int kq = 5;
    const int kk = layout.k_lens[0] + layout.k_lens[1];
    Tensor q = Tensor::parameter(random_mat(kq, d, rng));
    Tensor k = Tensor::parameter(random_mat(kk, d, rng));
    Tensor v = Tensor::parameter(random_mat(kk, d, rng));
    const Mat w = random_mat(kq, d, rng);
    CHECK(gradient_error([&] { return probe(ops::attention(q, k, v, layout), w); }, {q, k, v}) < kGradTolerance);
  }
}

TEST_CASE("attention: groups do not see each other and causal rows ignore the future") {
  Rng rng(9);
  ops::AttentionLayout layout{{2, 2}, {2, 2}, 1, true};
  Mat q = random_mat(4, 3, rng), k = random_mat(4, 3, rng), v = random_mat(4, 3, rng);
  const Mat base = ops::attention(Tensor::constant(q), Tensor::constant(k), Tensor::constant(v), layout).value();
  // Changing the second group's last key and value leaves group one and the
  // second group's first row alone.
  k.row(3).setRandom();
  v.row(3).setRandom();
  const Mat moved = ops::attention(Tensor::constant(q), Tensor::constant(k), Tensor::constant(v), layout).value();
  CHECK(moved.topRows(3).isApprox(base.topRows(3), 1e-14));
  CHECK_FALSE(moved.row(3).isApprox(base.row(3)));
  // First causal row attends to itself only.
  CHECK(base.row(0).isApprox(v.row(0), 1e-12));
}

TEST_CASE("softmax rows are distributions even for large inputs") {
  Mat x(2, 3);
  x << 1000, 1001, 1002, -1000, 0, 1000;
  const Mat p = ops::softmax_rows(Tensor::constant(x)).value();
  CHECK(p.allFinite());
  CHECK(p.rowwise().sum().isApprox(Eigen::VectorXd::Ones(2)));
  const Mat lp = ops::log_softmax_rows(Tensor::constant(x)).value();
  CHECK(lp.array().exp().matrix().isApprox(p));
}

TEST_CASE("dropout: identity without a graph, inverted scaling with one") {
  Rng rng(3);
  Tensor a = Tensor::parameter(Mat::Ones(50, 40));
  {
    NoGradGuard ng;
    CHECK(ops::dropout(a, 0.5, rng).value().isApprox(a.value()));
  }
  const Mat y = ops::dropout(a, 0.25, rng).value();
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double v = y.data()[i];
    CHECK((v == 0.0 || std::abs(v - 1.0 / 0.75) < 1e-12));
  }
  CHECK(y.mean() == doctest::Approx(1.0).epsilon(0.05));
}
