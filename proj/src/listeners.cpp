#include "moel/listeners.hpp"

#include <cmath>

#include "moel/emotion_tracker.hpp"

namespace moel {

ListenerBank::ListenerBank(ParamStore& store, const ModelConfig& config, Rng& rng) {
  const auto dims = block_dims(config);
  for (std::size_t i = 0; i <= config.n_emotions; ++i)
    decoders_.emplace_back(store, "listener." + std::to_string(i), dims, rng);
  if (config.n_emotions > 0) {
    const auto n = config.n_emotions, d = config.d_model;
    keys_ = store.add("listener.keys", {n, d}, xavier_uniform(n * d, d, n, rng));
  }
}

const DecoderLayer& ListenerBank::decoder(std::size_t i) const {
  if (i >= decoders_.size())
    throw std::out_of_range("listener index " + std::to_string(i) + " outside 0.." +
                            std::to_string(emotion_count()));
  return decoders_[i];
}

Var ListenerBank::listener_forward(std::size_t i, const Var& hidden, std::span<const std::uint8_t> ctx_mask,
                                   const Var& response) const {
  return decoder(i)(response, hidden, ctx_mask);
}

std::vector<Var> ListenerBank::all_listeners(const Var& hidden, std::span<const std::uint8_t> ctx_mask,
                                             const Var& response) const {
  std::vector<Var> out;
  out.reserve(decoders_.size());
  for (const auto& dec : decoders_) out.push_back(dec(response, hidden, ctx_mask));
  return out;
}

Var gate(const Var& query, const Var& keys) {
  for (double x : query.value())
    if (!std::isfinite(x)) throw NumericError("gate: non-finite query entry");
  return ops::softmax_rows(ops::matmul_bt(query, keys));
}

Var combine(std::span<const Var> listener_outputs, const Var& p) { return ops::mixture(listener_outputs, p); }

Var emotion_loss(const Var& p, std::span<const int> emotions, std::size_t* clamped) {
  return ops::gold_nll(p, emotions, 1e-12, clamped);
}

OracleResult apply_oracle(const Var& p, std::span<const int> emotions, double eps, Rng& rng) {
  if (eps < 0.0 || eps > 1.0) throw std::invalid_argument("apply_oracle: eps outside [0, 1]");
  OracleResult out;
  out.replaced.resize(p.dim(0));
  for (auto& r : out.replaced) r = rng.bernoulli(eps) ? 1 : 0;
  out.p = ops::override_rows(p, out.replaced, emotions);
  return out;
}

}  // namespace moel
