#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "moel/config.hpp"
#include "moel/layers.hpp"

namespace moel {

// Shared listener (index 0) plus one decoder per emotion, and the learned
// key of each emotion listener.
class ListenerBank {
 public:
  ListenerBank() = default;
  ListenerBank(ParamStore& store, const ModelConfig& config, Rng& rng);

  std::size_t emotion_count() const { return decoders_.empty() ? 0 : decoders_.size() - 1; }
  const Var& keys() const { return keys_; }  // [n, d]; undefined when n = 0
  const DecoderLayer& decoder(std::size_t i) const;

  // V_i = decoder_i(H, response embedding). Throws std::out_of_range for i > n.
  Var listener_forward(std::size_t i, const Var& hidden, std::span<const std::uint8_t> ctx_mask,
                       const Var& response) const;
  std::vector<Var> all_listeners(const Var& hidden, std::span<const std::uint8_t> ctx_mask,
                                 const Var& response) const;

 private:
  std::vector<DecoderLayer> decoders_;
  Var keys_;
};

// Row-wise softmax of q . k_i. Throws NumericError on non-finite q.
Var gate(const Var& query, const Var& keys);

// V_0 + sum_i p_i V_i, with the shared listener fixed at weight 1.
Var combine(std::span<const Var> listener_outputs, const Var& p);

// Mean of -log p[gold], clamped at 1e-12; `clamped` counts clamp hits.
Var emotion_loss(const Var& p, std::span<const int> emotions, std::size_t* clamped = nullptr);

struct OracleResult {
  Var p;                               // routed distribution
  std::vector<std::uint8_t> replaced;  // per row
};

// With probability eps per row, swap the gate row for the gold one-hot. One
// Bernoulli draw per row is consumed from rng regardless of eps.
OracleResult apply_oracle(const Var& p, std::span<const int> emotions, double eps, Rng& rng);

}  // namespace moel
