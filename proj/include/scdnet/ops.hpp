// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "scdnet/rng.hpp"
#include "scdnet/tensor.hpp"

// Differentiable ops over 2-D tensors. Sequences are laid out row-major with
// one row per token; batched sequences are stacked group after group and the
// group lengths are passed explicitly where an op needs them.
namespace scdnet::ops {

Tensor matmul(const Tensor& a, const Tensor& b);
/// x * w + b, with b a 1 x out row broadcast over rows. `b` may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
/// a + row, row is 1 x cols.
Tensor add_row(const Tensor& a, const Tensor& row);

Tensor gelu(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);
/// Natural log, inputs clamped below at 1e-300.
Tensor log(const Tensor& a);

Tensor softmax_rows(const Tensor& a);
Tensor log_softmax_rows(const Tensor& a);
/// Row-wise normalization to zero mean and unit variance, then gain/bias
/// (each 1 x cols).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

/// out[i] = a[idx[i]]; also the embedding lookup.
Tensor gather_rows(const Tensor& a, std::span<const int> idx);
/// out[i] = a(i, idx[i]); result is rows x 1.
Tensor pick(const Tensor& a, std::span<const int> idx);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, Eigen::Index begin, Eigen::Index count);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// rows x 1 row sums.
Tensor sum_rows(const Tensor& a);
/// Sums consecutive row segments: lens.size() x cols.
Tensor segment_sum(const Tensor& a, std::span<const int> lens);
/// Mean squared error over all entries.
Tensor mse(const Tensor& a, const Tensor& b);

/// Inverted dropout; identity when p == 0.
Tensor dropout(const Tensor& a, double p, Rng& rng);
/// Value copy with no connection to the graph.
Tensor detach(const Tensor& a);

struct AttentionLayout {
  std::vector<int> q_lens;  // rows of Q per group
  std::vector<int> k_lens;  // rows of K/V per group
  int heads = 1;
  bool causal = false;      // query i sees keys <= i (requires equal lengths)
};

/// Multi-head scaled dot-product attention over grouped rows. q, k, v are
/// already projected and hold the heads side by side in their columns.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionLayout& layout);

}  // namespace scdnet::ops
