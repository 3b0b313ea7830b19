#include "moel/layers.hpp"

#include <cmath>

namespace moel {

Var ParamStore::add(std::string name, Shape shape, std::vector<double> init) {
  if (contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  Var p = Var::parameter(std::move(shape), std::move(init));
  entries_.emplace_back(std::move(name), p);
  return p;
}

Var ParamStore::get(const std::string& name) const {
  for (const auto& [n, v] : entries_)
    if (n == name) return v;
  throw std::out_of_range("no parameter named '" + name + "'");
}

bool ParamStore::contains(const std::string& name) const {
  for (const auto& [n, v] : entries_)
    if (n == name) return true;
  return false;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t total = 0;
  for (const auto& [n, v] : entries_) total += v.size();
  return total;
}

std::size_t ParamStore::scalar_count(const std::string& prefix) const {
  std::size_t total = 0;
  for (const auto& [n, v] : entries_)
    if (n.compare(0, prefix.size(), prefix) == 0) total += v.size();
  return total;
}

void ParamStore::zero_grad() {
  for (auto& [n, v] : entries_) v.zero_grad();
}

std::vector<double> xavier_uniform(std::size_t count, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> out(count);
  for (auto& x : out) x = rng.uniform(-limit, limit);
  return out;
}

Linear::Linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng)
    : weight(store.add(name + ".weight", {in, out}, xavier_uniform(in * out, in, out, rng))),
      bias(store.add(name + ".bias", {out}, std::vector<double>(out, 0.0))) {}

LayerNorm::LayerNorm(ParamStore& store, const std::string& name, std::size_t dim, double eps_)
    : gain(store.add(name + ".gain", {dim}, std::vector<double>(dim, 1.0))),
      bias(store.add(name + ".bias", {dim}, std::vector<double>(dim, 0.0))),
      eps(eps_) {}

ConvFeedForward::ConvFeedForward(ParamStore& store, const std::string& name, std::size_t d_model,
                                 std::size_t filters, std::size_t width, bool causal_, Rng& rng)
    : w1(store.add(name + ".conv1.weight", {width, d_model, filters},
                   xavier_uniform(width * d_model * filters, width * d_model, width * filters, rng))),
      b1(store.add(name + ".conv1.bias", {filters}, std::vector<double>(filters, 0.0))),
      w2(store.add(name + ".conv2.weight", {width, filters, d_model},
                   xavier_uniform(width * filters * d_model, width * filters, width * d_model, rng))),
      b2(store.add(name + ".conv2.bias", {d_model}, std::vector<double>(d_model, 0.0))),
      causal(causal_) {}

Var ConvFeedForward::operator()(const Var& x, std::span<const std::uint8_t> keep) const {
  Var in = keep.empty() ? x : ops::mask_positions(x, keep);
  Var hidden = ops::relu(ops::conv1d(in, w1, b1, causal));
  if (!keep.empty()) hidden = ops::mask_positions(hidden, keep);
  return ops::conv1d(hidden, w2, b2, causal);
}

MultiHeadAttention::MultiHeadAttention(ParamStore& store, const std::string& name, std::size_t d_model,
                                       std::size_t heads_, std::size_t head_dim, Rng& rng)
    : q(store, name + ".q", d_model, heads_ * head_dim, rng),
      k(store, name + ".k", d_model, heads_ * head_dim, rng),
      v(store, name + ".v", d_model, heads_ * head_dim, rng),
      o(store, name + ".o", heads_ * head_dim, d_model, rng),
      heads(heads_) {}

Var MultiHeadAttention::operator()(const Var& query_src, const Var& kv_src, std::span<const std::uint8_t> key_mask,
                                   bool causal, ops::AttentionWeights* record) const {
  Var ctx = ops::attention(q(query_src), k(kv_src), v(kv_src), heads, key_mask, causal, record);
  return o(ctx);
}

EncoderLayer::EncoderLayer(ParamStore& store, const std::string& name, const BlockDims& d, Rng& rng)
    : self_attn(store, name + ".self", d.d_model, d.heads, d.head_dim, rng),
      norm1(store, name + ".norm1", d.d_model, d.eps),
      ff(store, name + ".ff", d.d_model, d.filters, d.width, false, rng),
      norm2(store, name + ".norm2", d.d_model, d.eps) {}

Var EncoderLayer::operator()(const Var& x, std::span<const std::uint8_t> mask, ops::AttentionWeights* record) const {
  Var h = norm1(ops::add(x, self_attn(x, x, mask, false, record)));
  return norm2(ops::add(h, ff(h, mask)));
}

DecoderLayer::DecoderLayer(ParamStore& store, const std::string& name, const BlockDims& d, Rng& rng)
    : self_attn(store, name + ".self", d.d_model, d.heads, d.head_dim, rng),
      norm1(store, name + ".norm1", d.d_model, d.eps),
      cross_attn(store, name + ".cross", d.d_model, d.heads, d.head_dim, rng),
      norm2(store, name + ".norm2", d.d_model, d.eps),
      ff(store, name + ".ff", d.d_model, d.filters, d.width, true, rng),
      norm3(store, name + ".norm3", d.d_model, d.eps) {}

Var DecoderLayer::operator()(const Var& x, const Var& memory, std::span<const std::uint8_t> memory_mask,
                             ops::AttentionWeights* record) const {
  Var h = norm1(ops::add(x, self_attn(x, x, {}, true)));
  h = norm2(ops::add(h, cross_attn(h, memory, memory_mask, false, record)));
  return norm3(ops::add(h, ff(h)));
}

}  // namespace moel
