#pragma once

#include <vector>

#include "moel/config.hpp"
#include "moel/corpus.hpp"
#include "moel/embedding.hpp"
#include "moel/layers.hpp"

namespace moel {

struct EncoderOutput {
  Var hidden;  // H [B, Lc, d]
  Var query;   // q = H at the QRY position, [B, d]
  std::vector<ops::AttentionWeights> attention;  // per layer, when recorded
};

BlockDims block_dims(const ModelConfig& config);

// Transformer encoder over [QRY; context].
class EmotionTracker {
 public:
  EmotionTracker() = default;
  EmotionTracker(ParamStore& store, const ModelConfig& config, Rng& rng);

  // Throws ShapeError unless position 0 of every row is QRY.
  EncoderOutput operator()(const EmbeddingTables& tables, const Batch& batch, bool record_attention = false) const;
  // Encoder stack on an already-embedded context [B, L, d].
  EncoderOutput encode_embedded(const Var& embedded, std::span<const std::uint8_t> mask,
                                bool record_attention = false) const;

  const std::vector<EncoderLayer>& layers() const { return layers_; }

 private:
  std::vector<EncoderLayer> layers_;
};

}  // namespace moel
