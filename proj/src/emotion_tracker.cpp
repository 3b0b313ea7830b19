#include "moel/emotion_tracker.hpp"

namespace moel {

BlockDims block_dims(const ModelConfig& c) {
  return {c.d_model, c.n_heads, c.head_dim, c.conv_filters, c.conv_width, c.layer_norm_eps};
}

EmotionTracker::EmotionTracker(ParamStore& store, const ModelConfig& config, Rng& rng) {
  const auto dims = block_dims(config);
  for (std::size_t l = 0; l < config.enc_layers; ++l)
    layers_.emplace_back(store, "encoder." + std::to_string(l), dims, rng);
}

EncoderOutput EmotionTracker::operator()(const EmbeddingTables& tables, const Batch& batch,
                                         bool record_attention) const {
  for (std::size_t b = 0; b < batch.size; ++b)
    if (batch.ctx_len == 0 || batch.ctx_ids[b * batch.ctx_len] != Vocab::kQry || !batch.ctx_mask[b * batch.ctx_len])
      throw ShapeError("encode: row " + std::to_string(b) + " does not start with an unmasked QRY token");
  Var x = context_embed(tables, batch.ctx_ids, batch.ctx_state_ids, batch.size, batch.ctx_len);
  return encode_embedded(x, batch.ctx_mask, record_attention);
}

EncoderOutput EmotionTracker::encode_embedded(const Var& embedded, std::span<const std::uint8_t> mask,
                                              bool record_attention) const {
  EncoderOutput out;
  Var x = embedded;
  for (const auto& layer : layers_) {
    ops::AttentionWeights weights;
    x = layer(x, mask, record_attention ? &weights : nullptr);
    if (record_attention) out.attention.push_back(std::move(weights));
  }
  out.hidden = x;
  out.query = ops::select_position(x, 0);
  return out;
}

}  // namespace moel
