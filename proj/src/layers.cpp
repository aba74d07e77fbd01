// SPDX-License-Identifier: Apache-2.0
#include "scdnet/layers.hpp"

#include <cmath>

namespace scdnet {

Tensor ParamRegistry::add(const std::string& name, Mat init) {
  for (const auto& e : entries_) {
    if (e.first == name) throw std::logic_error("ParamRegistry: duplicate parameter " + name);
  }
  Tensor t = Tensor::parameter(std::move(init));
  entries_.emplace_back(name, t);
  return t;
}

std::vector<Tensor> ParamRegistry::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.second);
  return out;
}

std::size_t ParamRegistry::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += static_cast<std::size_t>(e.second.size());
  return n;
}

void ParamRegistry::set_trainable(bool on) {
  for (auto& e : entries_) e.second.set_requires_grad(on);
}

void ParamRegistry::export_to(Checkpoint& ckpt) const {
  for (const auto& [name, t] : entries_) ckpt.entries.emplace_back(name, t.value());
}

void ParamRegistry::import_from(const Checkpoint& ckpt) {
  for (auto& [name, t] : entries_) {
    const Mat& m = ckpt.get(name);
    if (m.rows() != t.rows() || m.cols() != t.cols()) {
      throw CheckpointError("parameter " + name + " has shape " + shape_str(m) + ", model expects " +
                            shape_str(t.value()));
    }
    t.mutable_value() = m;
  }
}

Tensor ForwardMode::apply_dropout(const Tensor& x) const {
  if (dropout <= 0.0 || rng == nullptr) return x;
  return ops::dropout(x, dropout, *rng);
}

Mat xavier_uniform(Eigen::Index in, Eigen::Index out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  Mat m(in, out);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = (2.0 * rng.uniform() - 1.0) * limit;
  return m;
}

Linear::Linear(ParamRegistry& reg, const std::string& name, int in, int out, Rng& rng, bool bias) {
  w = reg.add(name + ".w", xavier_uniform(in, out, rng));
  if (bias) b = reg.add(name + ".b", Mat::Zero(1, out));
}

LayerNorm::LayerNorm(ParamRegistry& reg, const std::string& name, int width) {
  gain = reg.add(name + ".gain", Mat::Ones(1, width));
  bias = reg.add(name + ".bias", Mat::Zero(1, width));
}

MultiHeadAttention::MultiHeadAttention(ParamRegistry& reg, const std::string& name, int width, int h, Rng& rng)
    : q(reg, name + ".q", width, width, rng),
      k(reg, name + ".k", width, width, rng),
      v(reg, name + ".v", width, width, rng),
      o(reg, name + ".o", width, width, rng),
      heads(h) {
  if (h < 1 || width % h != 0) {
    throw std::invalid_argument("MultiHeadAttention: width " + std::to_string(width) + " not divisible by " +
                                std::to_string(h) + " heads");
  }
}

Tensor MultiHeadAttention::operator()(const Tensor& query, const Tensor& memory,
                                      const ops::AttentionLayout& layout) const {
  ops::AttentionLayout l = layout;
  l.heads = heads;
  return o(ops::attention(q(query), k(memory), v(memory), l));
}

FeedForward::FeedForward(ParamRegistry& reg, const std::string& name, int width, int inner, Rng& rng)
    : fc1(reg, name + ".fc1", width, inner, rng), fc2(reg, name + ".fc2", inner, width, rng), norm(reg, name + ".norm", width) {}

Tensor FeedForward::operator()(const Tensor& z, const ForwardMode& mode) const {
  return norm(ops::add(z, mode.apply_dropout(fc2(ops::gelu(fc1(z))))));
}

EncoderBlock::EncoderBlock(ParamRegistry& reg, const std::string& name, int width, int heads, int inner, Rng& rng)
    : attn(reg, name + ".attn", width, heads, rng), norm(reg, name + ".norm", width), ffn(reg, name + ".ffn", width, inner, rng) {}

Tensor EncoderBlock::operator()(const Tensor& x, const std::vector<int>& lens, const ForwardMode& mode) const {
  const ops::AttentionLayout layout{lens, lens, attn.heads, false};
  return ffn(norm(ops::add(x, mode.apply_dropout(attn(x, x, layout)))), mode);
}

DecoderBlock::DecoderBlock(ParamRegistry& reg, const std::string& name, int width, int heads, int inner, Rng& rng)
    : self_attn(reg, name + ".self_attn", width, heads, rng),
      norm1(reg, name + ".norm1", width),
      cross_attn(reg, name + ".cross_attn", width, heads, rng),
      norm2(reg, name + ".norm2", width),
      ffn(reg, name + ".ffn", width, inner, rng) {}

Tensor DecoderBlock::operator()(const Tensor& h, const std::vector<int>& lens, const Tensor& memory,
                                const std::vector<int>& memory_lens, bool causal, const ForwardMode& mode) const {
  const ops::AttentionLayout self_layout{lens, lens, self_attn.heads, causal};
  const Tensor h1 = norm1(ops::add(h, mode.apply_dropout(self_attn(h, h, self_layout))));
  const ops::AttentionLayout cross_layout{lens, memory_lens, cross_attn.heads, false};
  const Tensor h2 = norm2(ops::add(h1, mode.apply_dropout(cross_attn(h1, memory, cross_layout))));
  return ffn(h2, mode);
}

}  // namespace scdnet
