#pragma once

#include <cstdint>
#include <span>

#include "moel/config.hpp"
#include "moel/layers.hpp"

namespace moel {

// Final decoder block over the mixed listener states. Its self-attention
// runs causally over V_M itself.
class MetaListener {
 public:
  MetaListener() = default;
  MetaListener(ParamStore& store, const ModelConfig& config, Rng& rng);

  Var operator()(const Var& hidden, std::span<const std::uint8_t> ctx_mask, const Var& mixed,
                 ops::AttentionWeights* record = nullptr) const {
    return block_(mixed, hidden, ctx_mask, record);
  }

 private:
  DecoderLayer block_;
};

// Affine map d_model -> |V|, separate from the word table.
struct OutputProjection {
  OutputProjection() = default;
  OutputProjection(ParamStore& store, std::size_t d_model, std::size_t vocab_size, Rng& rng)
      : affine(store, "proj", d_model, vocab_size, rng) {}

  Var logits(const Var& o) const { return affine(o); }
  // Per-position token distribution.
  Var project(const Var& o) const { return ops::softmax_rows(logits(o)); }

  Linear affine;
};

// Token-level NLL of resp_out under dist [B, L, |V|], averaged over unmasked
// tokens. Throws if the whole batch is masked.
Var generation_loss(const Var& dist, std::span<const int> resp_out, std::span<const std::uint8_t> resp_mask);
// Same quantity from logits without forming the distribution.
Var generation_loss_from_logits(const Var& logits, std::span<const int> resp_out,
                                std::span<const std::uint8_t> resp_mask);

Var total_loss(const Var& l1, const Var& l2, double alpha, double beta);

}  // namespace moel
