// SPDX-License-Identifier: Apache-2.0
#include "scdnet/ops.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

namespace scdnet::ops {

namespace {

using detail::Node;

[[noreturn]] void shape_fail(const char* op, const Mat& a, const Mat& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.derived()) + " and " +
                   shape_str(b.derived()));
}

void require_same(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_fail(op, a.value(), b.value());
}

Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

int total(std::span<const int> lens) { return std::accumulate(lens.begin(), lens.end(), 0); }

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) shape_fail("matmul", a.value(), b.value());
  Mat out = a.value() * b.value();
  return Tensor::from_op(std::move(out), {a, b}, [](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (pa.requires_grad) pa.accumulate_expr(self.grad * pb.value.transpose());
    if (pb.requires_grad) pb.accumulate_expr(pa.value.transpose() * self.grad);
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.cols() != w.rows()) shape_fail("linear", x.value(), w.value());
  Mat out = x.value() * w.value();
  if (!b.defined()) {
    return Tensor::from_op(std::move(out), {x, w}, [](Node& self) {
      Node& px = parent(self, 0);
      Node& pw = parent(self, 1);
      if (px.requires_grad) px.accumulate_expr(self.grad * pw.value.transpose());
      if (pw.requires_grad) pw.accumulate_expr(px.value.transpose() * self.grad);
    });
  }
  if (b.rows() != 1 || b.cols() != w.cols()) shape_fail("linear(bias)", w.value(), b.value());
  out.rowwise() += b.value().row(0);
  return Tensor::from_op(std::move(out), {x, w, b}, [](Node& self) {
    Node& px = parent(self, 0);
    Node& pw = parent(self, 1);
    Node& pb = parent(self, 2);
    if (px.requires_grad) px.accumulate_expr(self.grad * pw.value.transpose());
    if (pw.requires_grad) pw.accumulate_expr(px.value.transpose() * self.grad);
    if (pb.requires_grad) pb.accumulate_expr(self.grad.colwise().sum());
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same("add", a, b);
  return Tensor::from_op(a.value() + b.value(), {a, b}, [](Node& self) {
    for (std::size_t i = 0; i < 2; ++i) {
      if (parent(self, i).requires_grad) parent(self, i).accumulate(self.grad);
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same("sub", a, b);
  return Tensor::from_op(a.value() - b.value(), {a, b}, [](Node& self) {
    if (parent(self, 0).requires_grad) parent(self, 0).accumulate(self.grad);
    if (parent(self, 1).requires_grad) parent(self, 1).accumulate_expr(-self.grad);
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same("mul", a, b);
  return Tensor::from_op(a.value().cwiseProduct(b.value()), {a, b}, [](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (pa.requires_grad) pa.accumulate_expr(self.grad.cwiseProduct(pb.value));
    if (pb.requires_grad) pb.accumulate_expr(self.grad.cwiseProduct(pa.value));
  });
}

Tensor scale(const Tensor& a, double s) {
  return Tensor::from_op(a.value() * s, {a}, [s](Node& self) {
    parent(self, 0).accumulate_expr(self.grad * s);
  });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) shape_fail("add_row", a.value(), row.value());
  Mat out = a.value();
  out.rowwise() += row.value().row(0);
  return Tensor::from_op(std::move(out), {a, row}, [](Node& self) {
    if (parent(self, 0).requires_grad) parent(self, 0).accumulate(self.grad);
    if (parent(self, 1).requires_grad) parent(self, 1).accumulate_expr(self.grad.colwise().sum());
  });
}

Tensor gelu(const Tensor& a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  Mat out = a.value().unaryExpr([](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); });
  return Tensor::from_op(std::move(out), {a}, [](Node& self) {
    Node& pa = parent(self, 0);
    const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    Mat d = pa.value.unaryExpr([inv_sqrt_2pi](double x) {
      return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
    });
    pa.accumulate_expr(self.grad.cwiseProduct(d));
  });
}

Tensor relu(const Tensor& a) {
  return Tensor::from_op(a.value().cwiseMax(0.0), {a}, [](Node& self) {
    Node& pa = parent(self, 0);
    pa.accumulate_expr(self.grad.cwiseProduct(
        pa.value.unaryExpr([](double x) { return x > 0.0 ? 1.0 : 0.0; })));
  });
}

Tensor tanh(const Tensor& a) {
  Mat out = a.value().array().tanh().matrix();
  return Tensor::from_op(out, {a}, [out](Node& self) {
    parent(self, 0).accumulate_expr(
        self.grad.cwiseProduct((1.0 - out.array().square()).matrix()));
  });
}

Tensor log(const Tensor& a) {
  Mat clamped = a.value().cwiseMax(1e-300);
  Mat out = clamped.array().log().matrix();
  return Tensor::from_op(std::move(out), {a}, [clamped](Node& self) {
    parent(self, 0).accumulate_expr(self.grad.cwiseQuotient(clamped));
  });
}

Tensor softmax_rows(const Tensor& a) {
  Mat out(a.rows(), a.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const double m = a.value().row(r).maxCoeff();
    out.row(r) = (a.value().row(r).array() - m).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return Tensor::from_op(out, {a}, [out](Node& self) {
    Mat g(out.rows(), out.cols());
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
      const double dot = self.grad.row(r).dot(out.row(r));
      g.row(r) = out.row(r).cwiseProduct((self.grad.row(r).array() - dot).matrix());
    }
    parent(self, 0).accumulate(g);
  });
}

Tensor log_softmax_rows(const Tensor& a) {
  Mat out(a.rows(), a.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const double m = a.value().row(r).maxCoeff();
    const double lse = m + std::log((a.value().row(r).array() - m).exp().sum());
    out.row(r) = a.value().row(r).array() - lse;
  }
  return Tensor::from_op(out, {a}, [out](Node& self) {
    Mat g(out.rows(), out.cols());
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
      const double gs = self.grad.row(r).sum();
      g.row(r) = self.grad.row(r) - (out.row(r).array().exp() * gs).matrix();
    }
    parent(self, 0).accumulate(g);
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (gain.rows() != 1 || gain.cols() != x.cols()) shape_fail("layer_norm(gain)", x.value(), gain.value());
  if (bias.rows() != 1 || bias.cols() != x.cols()) shape_fail("layer_norm(bias)", x.value(), bias.value());
  const Eigen::Index n = x.cols();
  Mat xhat(x.rows(), n);
  Vec inv_std(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mu = x.value().row(r).mean();
    const double var = (x.value().row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (x.value().row(r).array() - mu) * inv_std(r);
  }
  Mat out = xhat.array().rowwise() * gain.value().row(0).array();
  out.rowwise() += bias.value().row(0);
  return Tensor::from_op(std::move(out), {x, gain, bias}, [xhat, inv_std](Node& self) {
    Node& px = parent(self, 0);
    Node& pg = parent(self, 1);
    Node& pb = parent(self, 2);
    if (pg.requires_grad) pg.accumulate_expr(self.grad.cwiseProduct(xhat).colwise().sum());
    if (pb.requires_grad) pb.accumulate_expr(self.grad.colwise().sum());
    if (px.requires_grad) {
      Mat dxhat = self.grad.array().rowwise() * pg.value.row(0).array();
      Mat dx(dxhat.rows(), dxhat.cols());
      for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
        const double m1 = dxhat.row(r).mean();
        const double m2 = dxhat.row(r).cwiseProduct(xhat.row(r)).mean();
        dx.row(r) = inv_std(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
      }
      px.accumulate(dx);
    }
  });
}

Tensor gather_rows(const Tensor& a, std::span<const int> idx) {
  Mat out(static_cast<Eigen::Index>(idx.size()), a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= a.rows()) {
      throw ShapeError("gather_rows: index " + std::to_string(idx[i]) + " out of range for " +
                       shape_str(a.value()));
    }
    out.row(static_cast<Eigen::Index>(i)) = a.value().row(idx[i]);
  }
  std::vector<int> ids(idx.begin(), idx.end());
  return Tensor::from_op(std::move(out), {a}, [ids](Node& self) {
    Node& pa = parent(self, 0);
    if (pa.grad.size() == 0) pa.grad = Mat::Zero(pa.value.rows(), pa.value.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      pa.grad.row(ids[i]) += self.grad.row(static_cast<Eigen::Index>(i));
    }
  });
}

Tensor pick(const Tensor& a, std::span<const int> idx) {
  if (static_cast<Eigen::Index>(idx.size()) != a.rows()) {
    throw ShapeError("pick: " + std::to_string(idx.size()) + " indices for " + shape_str(a.value()));
  }
  Mat out(a.rows(), 1);
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const int c = idx[static_cast<std::size_t>(r)];
    if (c < 0 || c >= a.cols()) {
      throw ShapeError("pick: column " + std::to_string(c) + " out of range for " + shape_str(a.value()));
    }
    out(r, 0) = a.value()(r, c);
  }
  std::vector<int> ids(idx.begin(), idx.end());
  return Tensor::from_op(std::move(out), {a}, [ids](Node& self) {
    Node& pa = parent(self, 0);
    if (pa.grad.size() == 0) pa.grad = Mat::Zero(pa.value.rows(), pa.value.cols());
    for (std::size_t r = 0; r < ids.size(); ++r) {
      pa.grad(static_cast<Eigen::Index>(r), ids[r]) += self.grad(static_cast<Eigen::Index>(r), 0);
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != parts[0].rows()) shape_fail("concat_cols", parts[0].value(), p.value());
    cols += p.cols();
  }
  Mat out(parts[0].rows(), cols);
  std::vector<Eigen::Index> offsets;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    offsets.push_back(off);
    off += p.cols();
  }
  return Tensor::from_op(std::move(out), parts, [offsets](Node& self) {
    for (std::size_t i = 0; i < offsets.size(); ++i) {
      Node& p = parent(self, i);
      if (p.requires_grad) p.accumulate_expr(self.grad.middleCols(offsets[i], p.value.cols()));
    }
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != parts[0].cols()) shape_fail("concat_rows", parts[0].value(), p.value());
    rows += p.rows();
  }
  Mat out(rows, parts[0].cols());
  std::vector<Eigen::Index> offsets;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    out.middleRows(off, p.rows()) = p.value();
    offsets.push_back(off);
    off += p.rows();
  }
  return Tensor::from_op(std::move(out), parts, [offsets](Node& self) {
    for (std::size_t i = 0; i < offsets.size(); ++i) {
      Node& p = parent(self, i);
      if (p.requires_grad) p.accumulate_expr(self.grad.middleRows(offsets[i], p.value.rows()));
    }
  });
}

Tensor slice_rows(const Tensor& a, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count < 0 || begin + count > a.rows()) {
    throw ShapeError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") out of range for " + shape_str(a.value()));
  }
  return Tensor::from_op(a.value().middleRows(begin, count), {a}, [begin, count](Node& self) {
    Node& pa = parent(self, 0);
    if (pa.grad.size() == 0) pa.grad = Mat::Zero(pa.value.rows(), pa.value.cols());
    pa.grad.middleRows(begin, count) += self.grad;
  });
}

Tensor sum(const Tensor& a) {
  Mat out(1, 1);
  out(0, 0) = a.value().sum();
  return Tensor::from_op(std::move(out), {a}, [](Node& self) {
    Node& pa = parent(self, 0);
    pa.accumulate_expr(Mat::Constant(pa.value.rows(), pa.value.cols(), self.grad(0, 0)));
  });
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor sum_rows(const Tensor& a) {
  Mat out = a.value().rowwise().sum();
  return Tensor::from_op(std::move(out), {a}, [](Node& self) {
    Node& pa = parent(self, 0);
    pa.accumulate_expr(self.grad.col(0).replicate(1, pa.value.cols()));
  });
}

Tensor segment_sum(const Tensor& a, std::span<const int> lens) {
  if (total(lens) != a.rows()) {
    throw ShapeError("segment_sum: segment lengths sum to " + std::to_string(total(lens)) + " for " +
                     shape_str(a.value()));
  }
  Mat out = Mat::Zero(static_cast<Eigen::Index>(lens.size()), a.cols());
  Eigen::Index off = 0;
  for (std::size_t g = 0; g < lens.size(); ++g) {
    if (lens[g] > 0) out.row(static_cast<Eigen::Index>(g)) = a.value().middleRows(off, lens[g]).colwise().sum();
    off += lens[g];
  }
  std::vector<int> ls(lens.begin(), lens.end());
  return Tensor::from_op(std::move(out), {a}, [ls](Node& self) {
    Node& pa = parent(self, 0);
    Mat g(pa.value.rows(), pa.value.cols());
    Eigen::Index o = 0;
    for (std::size_t s = 0; s < ls.size(); ++s) {
      for (int i = 0; i < ls[s]; ++i) g.row(o + i) = self.grad.row(static_cast<Eigen::Index>(s));
      o += ls[s];
    }
    pa.accumulate(g);
  });
}

Tensor mse(const Tensor& a, const Tensor& b) {
  require_same("mse", a, b);
  const Tensor d = sub(a, b);
  return mean(mul(d, d));
}

Tensor dropout(const Tensor& a, double p, Rng& rng) {
  if (p <= 0.0 || !grad_enabled()) return a;
  if (p >= 1.0) throw std::invalid_argument("dropout: p must be in [0, 1)");
  Mat mask(a.rows(), a.cols());
  const double keep = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng.uniform() < p ? 0.0 : keep;
  return Tensor::from_op(a.value().cwiseProduct(mask), {a}, [mask](Node& self) {
    parent(self, 0).accumulate_expr(self.grad.cwiseProduct(mask));
  });
}

Tensor detach(const Tensor& a) { return Tensor::constant(a.value()); }

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionLayout& layout) {
  const auto& ql = layout.q_lens;
  const auto& kl = layout.k_lens;
  const int heads = layout.heads;
  if (ql.size() != kl.size()) throw ShapeError("attention: q and k group counts differ");
  if (total(ql) != q.rows() || total(kl) != k.rows() || k.rows() != v.rows()) {
    throw ShapeError("attention: group lengths do not match rows of q " + shape_str(q.value()) + ", k " +
                     shape_str(k.value()) + ", v " + shape_str(v.value()));
  }
  if (q.cols() != k.cols() || q.cols() != v.cols() || heads < 1 || q.cols() % heads != 0) {
    throw ShapeError("attention: widths of q " + shape_str(q.value()) + ", k " + shape_str(k.value()) +
                     ", v " + shape_str(v.value()) + " incompatible with " + std::to_string(heads) + " heads");
  }
  const Eigen::Index dh = q.cols() / heads;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(dh));

  Mat out = Mat::Zero(q.rows(), q.cols());
  std::vector<Mat> probs;  // per (group, head)
  probs.reserve(ql.size() * static_cast<std::size_t>(heads));
  Eigen::Index qo = 0, ko = 0;
  for (std::size_t g = 0; g < ql.size(); ++g) {
    const int lq = ql[g], lk = kl[g];
    if (layout.causal && lq != lk) throw ShapeError("attention: causal mask needs equal q/k lengths");
    for (int h = 0; h < heads; ++h) {
      if (lq == 0 || lk == 0) {
        probs.emplace_back();
        continue;
      }
      Mat s = q.value().block(qo, h * dh, lq, dh) * k.value().block(ko, h * dh, lk, dh).transpose();
      s *= inv_sqrt_d;
      for (int i = 0; i < lq; ++i) {
        const int visible = layout.causal ? i + 1 : lk;
        const double m = s.row(i).head(visible).maxCoeff();
        s.row(i).head(visible) = (s.row(i).head(visible).array() - m).exp().matrix();
        s.row(i).head(visible) /= s.row(i).head(visible).sum();
        if (visible < lk) s.row(i).tail(lk - visible).setZero();
      }
      out.block(qo, h * dh, lq, dh) = s * v.value().block(ko, h * dh, lk, dh);
      probs.push_back(std::move(s));
    }
    qo += lq;
    ko += lk;
  }

  return Tensor::from_op(std::move(out), {q, k, v}, [layout, probs = std::move(probs), dh, inv_sqrt_d](Node& self) {
    Node& pq = parent(self, 0);
    Node& pk = parent(self, 1);
    Node& pv = parent(self, 2);
    Mat dq = Mat::Zero(pq.value.rows(), pq.value.cols());
    Mat dk = Mat::Zero(pk.value.rows(), pk.value.cols());
    Mat dv = Mat::Zero(pv.value.rows(), pv.value.cols());
    Eigen::Index qo = 0, ko = 0;
    std::size_t pi = 0;
    for (std::size_t g = 0; g < layout.q_lens.size(); ++g) {
      const int lq = layout.q_lens[g], lk = layout.k_lens[g];
      for (int h = 0; h < layout.heads; ++h, ++pi) {
        if (lq == 0 || lk == 0) continue;
        const Mat& p = probs[pi];
        const Mat dout = self.grad.block(qo, h * dh, lq, dh);
        dv.block(ko, h * dh, lk, dh) += p.transpose() * dout;
        Mat dp = dout * pv.value.block(ko, h * dh, lk, dh).transpose();
        for (int i = 0; i < lq; ++i) {
          const double dot = dp.row(i).dot(p.row(i));
          dp.row(i) = p.row(i).cwiseProduct((dp.row(i).array() - dot).matrix());
        }
        dp *= inv_sqrt_d;
        dq.block(qo, h * dh, lq, dh) += dp * pk.value.block(ko, h * dh, lk, dh);
        dk.block(ko, h * dh, lk, dh) += dp.transpose() * pq.value.block(qo, h * dh, lq, dh);
      }
      qo += lq;
      ko += lk;
    }
    if (pq.requires_grad) pq.accumulate(dq);
    if (pk.requires_grad) pk.accumulate(dk);
    if (pv.requires_grad) pv.accumulate(dv);
  });
}

}  // namespace scdnet::ops
