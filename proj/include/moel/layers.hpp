#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "moel/ops.hpp"
#include "moel/random.hpp"
#include "moel/tensor.hpp"

namespace moel {

// Named, ordered parameter registry. Order is construction order and is what
// checkpoints and optimizer state are keyed on.
class ParamStore {
 public:
  Var add(std::string name, Shape shape, std::vector<double> init);
  Var get(const std::string& name) const;
  bool contains(const std::string& name) const;

  const std::vector<std::pair<std::string, Var>>& entries() const { return entries_; }
  std::size_t scalar_count() const;
  // Scalars in parameters whose name starts with `prefix`.
  std::size_t scalar_count(const std::string& prefix) const;
  void zero_grad();

 private:
  std::vector<std::pair<std::string, Var>> entries_;
};

// Xavier-uniform fill for a fan_in x fan_out map.
std::vector<double> xavier_uniform(std::size_t count, std::size_t fan_in, std::size_t fan_out, Rng& rng);

struct Linear {
  Linear() = default;
  Linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng);
  Var operator()(const Var& x) const { return ops::linear(x, weight, bias); }

  Var weight;  // [in, out]
  Var bias;    // [out]
};

struct LayerNorm {
  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& name, std::size_t dim, double eps);
  Var operator()(const Var& x) const { return ops::layer_norm(x, gain, bias, eps); }

  Var gain;
  Var bias;
  double eps = 1e-6;
};

// conv(d -> filters) -> ReLU -> conv(filters -> d). Encoder blocks use
// centred windows and zero the padded positions first; decoder blocks use
// causal windows.
struct ConvFeedForward {
  ConvFeedForward() = default;
  ConvFeedForward(ParamStore& store, const std::string& name, std::size_t d_model, std::size_t filters,
                  std::size_t width, bool causal, Rng& rng);
  Var operator()(const Var& x, std::span<const std::uint8_t> keep = {}) const;

  Var w1, b1, w2, b2;
  bool causal = false;
};

// Per-head projections d_model -> head_dim, heads concatenated, then mapped
// back to d_model.
struct MultiHeadAttention {
  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore& store, const std::string& name, std::size_t d_model, std::size_t heads,
                     std::size_t head_dim, Rng& rng);
  Var operator()(const Var& query_src, const Var& kv_src, std::span<const std::uint8_t> key_mask, bool causal,
                 ops::AttentionWeights* record = nullptr) const;

  Linear q, k, v, o;
  std::size_t heads = 1;
};

struct BlockDims {
  std::size_t d_model;
  std::size_t heads;
  std::size_t head_dim;
  std::size_t filters;
  std::size_t width;
  double eps;
};

// Post-norm encoder block: self-attention, conv feed-forward.
struct EncoderLayer {
  EncoderLayer() = default;
  EncoderLayer(ParamStore& store, const std::string& name, const BlockDims& dims, Rng& rng);
  Var operator()(const Var& x, std::span<const std::uint8_t> mask, ops::AttentionWeights* record = nullptr) const;

  MultiHeadAttention self_attn;
  LayerNorm norm1;
  ConvFeedForward ff;
  LayerNorm norm2;
};

// Post-norm decoder block: causal self-attention, cross-attention over the
// encoder states, causal conv feed-forward.
struct DecoderLayer {
  DecoderLayer() = default;
  DecoderLayer(ParamStore& store, const std::string& name, const BlockDims& dims, Rng& rng);
  Var operator()(const Var& x, const Var& memory, std::span<const std::uint8_t> memory_mask,
                 ops::AttentionWeights* record = nullptr) const;

  MultiHeadAttention self_attn;
  LayerNorm norm1;
  MultiHeadAttention cross_attn;
  LayerNorm norm2;
  ConvFeedForward ff;
  LayerNorm norm3;
};

}  // namespace moel
