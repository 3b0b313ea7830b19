#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "moel/tensor.hpp"

// Differentiable kernels used by every model block. All tensors are
// row-major doubles; "[B,L,d]" means batch, position, feature.
namespace moel::ops {

// Elementwise sum. b may match a exactly or match a's trailing dimensions
// (broadcast over the leading ones, e.g. a bias or a positional table).
Var add(const Var& a, const Var& b);
Var scale(const Var& a, double s);
// Scalar combination wa*a + wb*b of two scalars.
Var weighted_sum(const Var& a, double wa, const Var& b, double wb);
Var relu(const Var& x);
Var sum_squares(const Var& x);

// x [..., in] * weight [in, out] + bias [out].
Var linear(const Var& x, const Var& weight, const Var& bias);
// a [N, k] * b[m, k]^T.
Var matmul_bt(const Var& a, const Var& b);

// Row lookup into table [V, d]. Output shape is out_prefix + {d}. No grad is
// ever accumulated into `frozen_row` (pass -1 to disable).
Var embedding(const Var& table, std::span<const int> ids, Shape out_prefix, int frozen_row);

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-6);

// Zero every position of x [B, L, d] whose keep flag (B*L entries) is false.
Var mask_positions(const Var& x, std::span<const std::uint8_t> keep);

// 1-D convolution over positions. x [B, L, cin], weight [width, cin, cout].
// Same padding centres the window (odd width); causal padding only looks back.
Var conv1d(const Var& x, const Var& weight, const Var& bias, bool causal);

struct AttentionWeights {
  Shape shape;  // [B, heads, Lq, Lk]
  std::vector<double> weights;
};

// Scaled dot-product attention over `heads` equal slices of the feature
// axis. q [B, Lq, heads*dh]; k, v [B, Lk, heads*dh]. key_mask (B*Lk, may be
// empty = all valid) excludes keys with -inf logits; causal excludes j > i.
Var attention(const Var& q, const Var& k, const Var& v, std::size_t heads,
              std::span<const std::uint8_t> key_mask, bool causal, AttentionWeights* record = nullptr);

// x [B, L, d] -> [B, d] at position `pos`.
Var select_position(const Var& x, std::size_t pos);

// Softmax over the last axis, max-subtracted.
Var softmax_rows(const Var& x);

// Rows with replace[b] become one-hot(labels[b]) constants.
Var override_rows(const Var& p, std::span<const std::uint8_t> replace, std::span<const int> labels);

// values[0] + sum_i p[:, i-1] * values[i], reduced in index order.
Var mixture(std::span<const Var> values, const Var& p);

// Mean of -log(max(p[r, labels[r]], floor)) over the rows of p (last axis is
// the distribution) that `mask` keeps (empty = all). `clamped` counts rows
// that hit the floor. Throws if every row is masked.
Var gold_nll(const Var& p, std::span<const int> labels, double floor, std::size_t* clamped = nullptr,
             std::span<const std::uint8_t> mask = {});

// Token-level softmax cross-entropy of logits [N, V] averaged over the
// positions where mask is true. Throws if no position is unmasked.
Var cross_entropy(const Var& logits, std::span<const int> targets, std::span<const std::uint8_t> mask);

}  // namespace moel::ops
