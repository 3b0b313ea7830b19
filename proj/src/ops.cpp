#include "moel/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace moel::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

// Parent i of n when it wants a gradient, else null.
Node* grad_parent(Node& n, std::size_t i) {
  Node* p = n.parents[i].get();
  return (p && p->requires_grad) ? p : nullptr;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

std::size_t last_dim(const Var& x) { return x.shape().back(); }

}  // namespace

Var add(const Var& a, const Var& b) {
  const auto n = a.size();
  const auto m = b.size();
  bool suffix = b.rank() <= a.rank();
  for (std::size_t i = 0; suffix && i < b.rank(); ++i)
    suffix = b.dim(b.rank() - 1 - i) == a.dim(a.rank() - 1 - i);
  require(suffix && m > 0 && n % m == 0,
          "add: " + shape_str(b.shape()) + " does not broadcast to " + shape_str(a.shape()));
  std::vector<double> out(a.value().begin(), a.value().end());
  auto bv = b.value();
  for (std::size_t i = 0; i < n; ++i) out[i] += bv[i % m];
  return make_result(a.shape(), std::move(out), {a, b}, [n, m](Node& self) {
    if (Node* pa = grad_parent(self, 0))
      for (std::size_t i = 0; i < n; ++i) pa->grad[i] += self.grad[i];
    if (Node* pb = grad_parent(self, 1))
      for (std::size_t i = 0; i < n; ++i) pb->grad[i % m] += self.grad[i];
  });
}

Var scale(const Var& a, double s) {
  std::vector<double> out(a.value().begin(), a.value().end());
  for (auto& x : out) x *= s;
  return make_result(a.shape(), std::move(out), {a}, [s](Node& self) {
    if (Node* pa = grad_parent(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += s * self.grad[i];
  });
}

Var weighted_sum(const Var& a, double wa, const Var& b, double wb) {
  require(a.size() == 1 && b.size() == 1, "weighted_sum: operands must be scalars");
  return make_result({1}, {wa * a.item() + wb * b.item()}, {a, b}, [wa, wb](Node& self) {
    if (Node* pa = grad_parent(self, 0)) pa->grad[0] += wa * self.grad[0];
    if (Node* pb = grad_parent(self, 1)) pb->grad[0] += wb * self.grad[0];
  });
}

Var relu(const Var& x) {
  std::vector<double> out(x.value().begin(), x.value().end());
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  return make_result(x.shape(), std::move(out), {x}, [](Node& self) {
    if (Node* px = grad_parent(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        if (px->value[i] > 0.0) px->grad[i] += self.grad[i];
  });
}

Var sum_squares(const Var& x) {
  double s = 0.0;
  for (double v : x.value()) s += v * v;
  return make_result({1}, {s}, {x}, [](Node& self) {
    if (Node* px = grad_parent(self, 0))
      for (std::size_t i = 0; i < px->value.size(); ++i) px->grad[i] += 2.0 * px->value[i] * self.grad[0];
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  require(weight.rank() == 2, "linear: weight must be 2-D");
  const auto in = weight.dim(0);
  const auto outd = weight.dim(1);
  require(last_dim(x) == in, "linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(weight.shape()));
  require(!bias.defined() || bias.size() == outd, "linear: bias size");
  const auto rows = x.size() / in;

  std::vector<double> out(rows * outd);
  MatMap y(out.data(), rows, outd);
  y.noalias() = ConstMatMap(x.value().data(), rows, in) * ConstMatMap(weight.value().data(), in, outd);
  if (bias.defined()) y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.value().data(), outd);

  Shape shape = x.shape();
  shape.back() = outd;
  return make_result(std::move(shape), std::move(out), {x, weight, bias}, [rows, in, outd](Node& self) {
    ConstMatMap dy(self.grad.data(), rows, outd);
    if (Node* px = grad_parent(self, 0))
      MatMap(px->grad.data(), rows, in).noalias() += dy * ConstMatMap(self.parents[1]->value.data(), in, outd).transpose();
    if (Node* pw = grad_parent(self, 1))
      MatMap(pw->grad.data(), in, outd).noalias() += ConstMatMap(self.parents[0]->value.data(), rows, in).transpose() * dy;
    if (self.parents.size() > 2)
      if (Node* pb = grad_parent(self, 2))
        Eigen::Map<Eigen::RowVectorXd>(pb->grad.data(), outd) += dy.colwise().sum();
  });
}

Var matmul_bt(const Var& a, const Var& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(1),
          "matmul_bt: " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
  const auto n = a.dim(0), k = a.dim(1), m = b.dim(0);
  std::vector<double> out(n * m);
  MatMap(out.data(), n, m).noalias() =
      ConstMatMap(a.value().data(), n, k) * ConstMatMap(b.value().data(), m, k).transpose();
  return make_result({n, m}, std::move(out), {a, b}, [n, k, m](Node& self) {
    ConstMatMap dy(self.grad.data(), n, m);
    if (Node* pa = grad_parent(self, 0))
      MatMap(pa->grad.data(), n, k).noalias() += dy * ConstMatMap(self.parents[1]->value.data(), m, k);
    if (Node* pb = grad_parent(self, 1))
      MatMap(pb->grad.data(), m, k).noalias() += dy.transpose() * ConstMatMap(self.parents[0]->value.data(), n, k);
  });
}

Var embedding(const Var& table, std::span<const int> ids, Shape out_prefix, int frozen_row) {
  require(table.rank() == 2, "embedding: table must be 2-D");
  require(shape_size(out_prefix) == ids.size(), "embedding: id count does not match output shape");
  const auto rows = table.dim(0), d = table.dim(1);
  std::vector<double> out(ids.size() * d);
  auto tv = table.value();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= rows)
      throw std::out_of_range("embedding: id " + std::to_string(ids[i]) + " outside table of " +
                              std::to_string(rows) + " rows");
    std::copy_n(tv.begin() + ids[i] * d, d, out.begin() + i * d);
  }
  out_prefix.push_back(d);
  std::vector<int> saved(ids.begin(), ids.end());
  return make_result(std::move(out_prefix), std::move(out), {table},
                     [saved = std::move(saved), d, frozen_row](Node& self) {
                       Node* pt = grad_parent(self, 0);
                       if (!pt) return;
                       for (std::size_t i = 0; i < saved.size(); ++i) {
                         if (saved[i] == frozen_row) continue;
                         double* dst = pt->grad.data() + saved[i] * d;
                         const double* src = self.grad.data() + i * d;
                         for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
                       }
                     });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  const auto d = last_dim(x);
  require(gain.size() == d && bias.size() == d, "layer_norm: gain/bias size");
  const auto rows = x.size() / d;
  std::vector<double> out(x.size());
  std::vector<double> xhat(x.size());
  std::vector<double> rstd(rows);
  auto xv = x.value();
  auto g = gain.value();
  auto b = bias.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * d;
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += row[c];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= static_cast<double>(d);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      xhat[r * d + c] = (row[c] - mean) * rstd[r];
      out[r * d + c] = g[c] * xhat[r * d + c] + b[c];
    }
  }
  return make_result(x.shape(), std::move(out), {x, gain, bias},
                     [rows, d, xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
                       Node* px = grad_parent(self, 0);
                       Node* pg = grad_parent(self, 1);
                       Node* pb = grad_parent(self, 2);
                       const auto& g = self.parents[1]->value;
                       std::vector<double> dxhat(d);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* dy = self.grad.data() + r * d;
                         const double* xh = xhat.data() + r * d;
                         double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                         for (std::size_t c = 0; c < d; ++c) {
                           if (pg) pg->grad[c] += dy[c] * xh[c];
                           if (pb) pb->grad[c] += dy[c];
                           dxhat[c] = dy[c] * g[c];
                           mean_dxhat += dxhat[c];
                           mean_dxhat_xhat += dxhat[c] * xh[c];
                         }
                         if (!px) continue;
                         mean_dxhat /= static_cast<double>(d);
                         mean_dxhat_xhat /= static_cast<double>(d);
                         for (std::size_t c = 0; c < d; ++c)
                           px->grad[r * d + c] += rstd[r] * (dxhat[c] - mean_dxhat - xh[c] * mean_dxhat_xhat);
                       }
                     });
}

Var mask_positions(const Var& x, std::span<const std::uint8_t> keep) {
  const auto d = last_dim(x);
  require(keep.size() * d == x.size(), "mask_positions: mask size");
  std::vector<double> out(x.value().begin(), x.value().end());
  for (std::size_t r = 0; r < keep.size(); ++r)
    if (!keep[r]) std::fill_n(out.begin() + r * d, d, 0.0);
  std::vector<bool> saved(keep.begin(), keep.end());
  return make_result(x.shape(), std::move(out), {x}, [saved = std::move(saved), d](Node& self) {
    Node* px = grad_parent(self, 0);
    if (!px) return;
    for (std::size_t r = 0; r < saved.size(); ++r)
      if (saved[r])
        for (std::size_t c = 0; c < d; ++c) px->grad[r * d + c] += self.grad[r * d + c];
  });
}

Var conv1d(const Var& x, const Var& weight, const Var& bias, bool causal) {
  require(x.rank() == 3 && weight.rank() == 3, "conv1d: expects x [B,L,cin] and weight [w,cin,cout]");
  const auto batch = x.dim(0), len = x.dim(1), cin = x.dim(2);
  const auto width = weight.dim(0), cout = weight.dim(2);
  require(weight.dim(1) == cin, "conv1d: channel mismatch " + shape_str(x.shape()) + " vs " + shape_str(weight.shape()));
  require(bias.size() == cout, "conv1d: bias size");
  require(causal || width % 2 == 1, "conv1d: same padding needs an odd width");
  const long first = causal ? -static_cast<long>(width - 1) : -static_cast<long>(width / 2);

  // im2col: row (b,t) holds the width windows side by side.
  const auto rows = batch * len;
  const auto cols = width * cin;
  std::vector<double> col(rows * cols, 0.0);
  auto xv = x.value();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < len; ++t)
      for (std::size_t k = 0; k < width; ++k) {
        const long src = static_cast<long>(t) + first + static_cast<long>(k);
        if (src < 0 || src >= static_cast<long>(len)) continue;
        std::copy_n(xv.begin() + (b * len + src) * cin, cin, col.begin() + (b * len + t) * cols + k * cin);
      }

  std::vector<double> out(rows * cout);
  MatMap y(out.data(), rows, cout);
  y.noalias() = ConstMatMap(col.data(), rows, cols) * ConstMatMap(weight.value().data(), cols, cout);
  y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.value().data(), cout);

  return make_result({batch, len, cout}, std::move(out), {x, weight, bias},
                     [=, col = std::move(col)](Node& self) {
                       ConstMatMap dy(self.grad.data(), rows, cout);
                       if (Node* pw = grad_parent(self, 1))
                         MatMap(pw->grad.data(), cols, cout).noalias() += ConstMatMap(col.data(), rows, cols).transpose() * dy;
                       if (Node* pb = grad_parent(self, 2))
                         Eigen::Map<Eigen::RowVectorXd>(pb->grad.data(), cout) += dy.colwise().sum();
                       Node* px = grad_parent(self, 0);
                       if (!px) return;
                       RowMat dcol = dy * ConstMatMap(self.parents[1]->value.data(), cols, cout).transpose();
                       for (std::size_t b = 0; b < batch; ++b)
                         for (std::size_t t = 0; t < len; ++t)
                           for (std::size_t k = 0; k < width; ++k) {
                             const long src = static_cast<long>(t) + first + static_cast<long>(k);
                             if (src < 0 || src >= static_cast<long>(len)) continue;
                             double* dst = px->grad.data() + (b * len + src) * cin;
                             const double* g = dcol.data() + (b * len + t) * cols + k * cin;
                             for (std::size_t c = 0; c < cin; ++c) dst[c] += g[c];
                           }
                     });
}

Var attention(const Var& q, const Var& k, const Var& v, std::size_t heads, std::span<const std::uint8_t> key_mask,
              bool causal, AttentionWeights* record) {
  require(q.rank() == 3 && k.rank() == 3 && v.rank() == 3, "attention: expects rank-3 inputs");
  const auto batch = q.dim(0), lq = q.dim(1), width = q.dim(2), lk = k.dim(1);
  require(k.dim(0) == batch && v.dim(0) == batch && v.dim(1) == lk && k.dim(2) == width && v.dim(2) == width,
          "attention: q " + shape_str(q.shape()) + " k " + shape_str(k.shape()) + " v " + shape_str(v.shape()));
  require(heads > 0 && width % heads == 0, "attention: width not divisible by heads");
  require(key_mask.empty() || key_mask.size() == batch * lk, "attention: key mask size");
  const auto dh = width / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<double> weights(batch * heads * lq * lk, 0.0);
  std::vector<double> out(batch * lq * width, 0.0);
  auto qv = q.value(), kv = k.value(), vv = v.value();
  std::vector<double> logits(lk);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < lq; ++i) {
        const double* qi = qv.data() + (b * lq + i) * width + h * dh;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < lk; ++j) {
          const bool allowed = (key_mask.empty() || key_mask[b * lk + j]) && (!causal || j <= i);
          if (!allowed) {
            logits[j] = -std::numeric_limits<double>::infinity();
            continue;
          }
          const double* kj = kv.data() + (b * lk + j) * width + h * dh;
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
          logits[j] = s * inv_sqrt;
          mx = std::max(mx, logits[j]);
        }
        if (!std::isfinite(mx)) continue;  // no visible key: zero output
        double* w = weights.data() + ((b * heads + h) * lq + i) * lk;
        double z = 0.0;
        for (std::size_t j = 0; j < lk; ++j) {
          w[j] = std::isfinite(logits[j]) ? std::exp(logits[j] - mx) : 0.0;
          z += w[j];
        }
        double* oi = out.data() + (b * lq + i) * width + h * dh;
        for (std::size_t j = 0; j < lk; ++j) {
          w[j] /= z;
          if (w[j] == 0.0) continue;
          const double* vj = vv.data() + (b * lk + j) * width + h * dh;
          for (std::size_t c = 0; c < dh; ++c) oi[c] += w[j] * vj[c];
        }
      }
  if (record) *record = AttentionWeights{{batch, heads, lq, lk}, weights};

  return make_result(q.shape(), std::move(out), {q, k, v},
                     [=, weights = std::move(weights)](Node& self) {
                       Node* pq = grad_parent(self, 0);
                       Node* pk = grad_parent(self, 1);
                       Node* pv = grad_parent(self, 2);
                       const auto& qv = self.parents[0]->value;
                       const auto& kv = self.parents[1]->value;
                       const auto& vv = self.parents[2]->value;
                       std::vector<double> dw(lk);
                       for (std::size_t b = 0; b < batch; ++b)
                         for (std::size_t h = 0; h < heads; ++h)
                           for (std::size_t i = 0; i < lq; ++i) {
                             const double* w = weights.data() + ((b * heads + h) * lq + i) * lk;
                             const double* go = self.grad.data() + (b * lq + i) * width + h * dh;
                             double dot = 0.0;
                             for (std::size_t j = 0; j < lk; ++j) {
                               dw[j] = 0.0;
                               if (w[j] == 0.0) continue;
                               const double* vj = vv.data() + (b * lk + j) * width + h * dh;
                               for (std::size_t c = 0; c < dh; ++c) dw[j] += go[c] * vj[c];
                               dot += w[j] * dw[j];
                               if (pv) {
                                 double* gv = pv->grad.data() + (b * lk + j) * width + h * dh;
                                 for (std::size_t c = 0; c < dh; ++c) gv[c] += w[j] * go[c];
                               }
                             }
                             const double* qi = qv.data() + (b * lq + i) * width + h * dh;
                             for (std::size_t j = 0; j < lk; ++j) {
                               if (w[j] == 0.0) continue;
                               const double ds = w[j] * (dw[j] - dot) * inv_sqrt;
                               const double* kj = kv.data() + (b * lk + j) * width + h * dh;
                               if (pq) {
                                 double* gq = pq->grad.data() + (b * lq + i) * width + h * dh;
                                 for (std::size_t c = 0; c < dh; ++c) gq[c] += ds * kj[c];
                               }
                               if (pk) {
                                 double* gk = pk->grad.data() + (b * lk + j) * width + h * dh;
                                 for (std::size_t c = 0; c < dh; ++c) gk[c] += ds * qi[c];
                               }
                             }
                           }
                     });
}

Var select_position(const Var& x, std::size_t pos) {
  require(x.rank() == 3 && pos < x.dim(1), "select_position: bad position for " + shape_str(x.shape()));
  const auto batch = x.dim(0), len = x.dim(1), d = x.dim(2);
  std::vector<double> out(batch * d);
  auto xv = x.value();
  for (std::size_t b = 0; b < batch; ++b) std::copy_n(xv.begin() + (b * len + pos) * d, d, out.begin() + b * d);
  return make_result({batch, d}, std::move(out), {x}, [=](Node& self) {
    Node* px = grad_parent(self, 0);
    if (!px) return;
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t c = 0; c < d; ++c) px->grad[(b * len + pos) * d + c] += self.grad[b * d + c];
  });
}

Var softmax_rows(const Var& x) {
  const auto d = last_dim(x);
  const auto rows = d ? x.size() / d : 0;
  std::vector<double> out(x.size());
  auto xv = x.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * d;
    double mx = *std::max_element(row, row + d);
    double z = 0.0;
    for (std::size_t c = 0; c < d; ++c) z += (out[r * d + c] = std::exp(row[c] - mx));
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] /= z;
  }
  return make_result(x.shape(), std::move(out), {x}, [rows, d](Node& self) {
    Node* px = grad_parent(self, 0);
    if (!px) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * d;
      const double* dy = self.grad.data() + r * d;
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += y[c] * dy[c];
      for (std::size_t c = 0; c < d; ++c) px->grad[r * d + c] += y[c] * (dy[c] - dot);
    }
  });
}

Var override_rows(const Var& p, std::span<const std::uint8_t> replace, std::span<const int> labels) {
  require(p.rank() == 2 && replace.size() == p.dim(0) && labels.size() == p.dim(0), "override_rows: sizes");
  const auto rows = p.dim(0), n = p.dim(1);
  std::vector<double> out(p.value().begin(), p.value().end());
  for (std::size_t b = 0; b < rows; ++b) {
    if (!replace[b]) continue;
    if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= n)
      throw std::out_of_range("override_rows: label " + std::to_string(labels[b]));
    std::fill_n(out.begin() + b * n, n, 0.0);
    out[b * n + labels[b]] = 1.0;
  }
  std::vector<bool> saved(replace.begin(), replace.end());
  return make_result(p.shape(), std::move(out), {p}, [saved = std::move(saved), n](Node& self) {
    Node* pp = grad_parent(self, 0);
    if (!pp) return;
    for (std::size_t b = 0; b < saved.size(); ++b)
      if (!saved[b])
        for (std::size_t c = 0; c < n; ++c) pp->grad[b * n + c] += self.grad[b * n + c];
  });
}

Var mixture(std::span<const Var> values, const Var& p) {
  require(!values.empty(), "mixture: needs at least the shared value");
  const auto n = values.size() - 1;
  const auto& v0 = values[0];
  require(v0.rank() >= 2, "mixture: values must be [B, ...]");
  const auto batch = v0.dim(0);
  const auto per_row = v0.size() / batch;
  if (n > 0) require(p.rank() == 2 && p.dim(0) == batch && p.dim(1) == n, "mixture: p must be [B, n]");
  for (const auto& v : values) require(v.shape() == v0.shape(), "mixture: value shapes differ");

  std::vector<double> out(v0.value().begin(), v0.value().end());
  for (std::size_t i = 1; i <= n; ++i) {
    auto vi = values[i].value();
    for (std::size_t b = 0; b < batch; ++b) {
      const double w = p.value()[b * n + (i - 1)];
      for (std::size_t e = 0; e < per_row; ++e) out[b * per_row + e] += w * vi[b * per_row + e];
    }
  }
  std::vector<Var> parents(values.begin(), values.end());
  parents.push_back(n > 0 ? p : Var());
  return make_result(v0.shape(), std::move(out), std::move(parents), [n, batch, per_row](Node& self) {
    const auto& pv = self.parents[n + 1] ? self.parents[n + 1]->value : std::vector<double>{};
    Node* pp = n > 0 ? grad_parent(self, n + 1) : nullptr;
    if (Node* p0 = grad_parent(self, 0))
      for (std::size_t e = 0; e < self.grad.size(); ++e) p0->grad[e] += self.grad[e];
    for (std::size_t i = 1; i <= n; ++i) {
      Node* pi = grad_parent(self, i);
      const auto& vi = self.parents[i]->value;
      for (std::size_t b = 0; b < batch; ++b) {
        const double w = pv[b * n + (i - 1)];
        double dp = 0.0;
        for (std::size_t e = 0; e < per_row; ++e) {
          const double g = self.grad[b * per_row + e];
          if (pi) pi->grad[b * per_row + e] += w * g;
          dp += g * vi[b * per_row + e];
        }
        if (pp) pp->grad[b * n + (i - 1)] += dp;
      }
    }
  });
}

Var gold_nll(const Var& p, std::span<const int> labels, double floor, std::size_t* clamped,
             std::span<const std::uint8_t> mask) {
  const auto n = last_dim(p);
  const auto rows = n ? p.size() / n : 0;
  require(labels.size() == rows && (mask.empty() || mask.size() == rows), "gold_nll: sizes");
  std::size_t count = 0;
  double total = 0.0;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!mask.empty() && !mask[r]) continue;
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= n)
      throw std::out_of_range("gold_nll: label " + std::to_string(labels[r]) + " outside " + std::to_string(n));
    const double pv = p.value()[r * n + labels[r]];
    if (pv < floor) ++hits;
    total -= std::log(std::max(pv, floor));
    ++count;
  }
  if (count == 0) throw std::invalid_argument("gold_nll: every row is masked");
  if (clamped) *clamped = hits;
  const double inv = 1.0 / static_cast<double>(count);
  std::vector<int> saved(labels.begin(), labels.end());
  std::vector<std::uint8_t> keep(mask.begin(), mask.end());
  return make_result({1}, {total * inv}, {p},
                     [saved = std::move(saved), keep = std::move(keep), n, inv, floor](Node& self) {
                       Node* pp = grad_parent(self, 0);
                       if (!pp) return;
                       for (std::size_t r = 0; r < saved.size(); ++r) {
                         if (!keep.empty() && !keep[r]) continue;
                         const double pv = pp->value[r * n + saved[r]];
                         if (pv < floor) continue;
                         pp->grad[r * n + saved[r]] -= self.grad[0] * inv / pv;
                       }
                     });
}

Var cross_entropy(const Var& logits, std::span<const int> targets, std::span<const std::uint8_t> mask) {
  const auto vocab = last_dim(logits);
  const auto rows = logits.size() / vocab;
  require(targets.size() == rows && mask.size() == rows, "cross_entropy: target/mask size");
  std::size_t count = 0;
  for (bool m : mask) count += m;
  if (count == 0) throw std::invalid_argument("cross_entropy: every position is masked");

  auto lv = logits.value();
  std::vector<double> probs(rows * vocab, 0.0);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!mask[r]) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= vocab)
      throw std::out_of_range("cross_entropy: target " + std::to_string(targets[r]));
    const double* row = lv.data() + r * vocab;
    const double mx = *std::max_element(row, row + vocab);
    double z = 0.0;
    for (std::size_t c = 0; c < vocab; ++c) z += (probs[r * vocab + c] = std::exp(row[c] - mx));
    for (std::size_t c = 0; c < vocab; ++c) probs[r * vocab + c] /= z;
    total += std::log(z) + mx - row[targets[r]];
  }
  const double inv = 1.0 / static_cast<double>(count);
  std::vector<int> saved(targets.begin(), targets.end());
  std::vector<bool> saved_mask(mask.begin(), mask.end());
  return make_result({1}, {total * inv}, {logits},
                     [=, probs = std::move(probs), saved = std::move(saved),
                      saved_mask = std::move(saved_mask)](Node& self) {
                       Node* pl = grad_parent(self, 0);
                       if (!pl) return;
                       const double g = self.grad[0] * inv;
                       for (std::size_t r = 0; r < rows; ++r) {
                         if (!saved_mask[r]) continue;
                         for (std::size_t c = 0; c < vocab; ++c) pl->grad[r * vocab + c] += g * probs[r * vocab + c];
                         pl->grad[r * vocab + saved[r]] -= g;
                       }
                     });
}

}  // namespace moel::ops
