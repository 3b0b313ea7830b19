#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "moel/config.hpp"
#include "moel/corpus.hpp"
#include "moel/embedding.hpp"
#include "moel/emotion_tracker.hpp"
#include "moel/listeners.hpp"
#include "moel/meta_listener.hpp"

namespace moel {

struct ForwardOptions {
  double oracle_eps = 0.0;
  Rng* rng = nullptr;  // needed when oracle_eps > 0
  // Row-major [B, n] distribution used instead of the gate (hard routing
  // and listener forcing). Empty = use the gate.
  std::span<const double> routing_override;
  bool record_attention = false;
};

struct ForwardResult {
  Var loss;
  Var l1;      // emotion loss; constant 0 for TRS and MoEL with n = 0
  Var l2;      // generation loss
  Var gate;    // MoEL: pre-oracle p; Multi-TRS: classifier softmax; TRS: undefined
  Var routed;  // distribution fed to the mixture (MoEL only)
  Var logits;  // [B, Lr, |V|]
  std::vector<std::uint8_t> oracle_replaced;
  std::size_t l1_clamped = 0;
  EncoderOutput encoder;
};

// One of the three architectures. All share the embedding, encoder and
// decoder-block implementations; only the decoding path and losses differ.
//   TRS:       encoder -> decoder stack -> projection; loss = beta*L2
//   MULTI_TRS: TRS + affine emotion classifier on q; alpha*L1' + beta*L2
//   MOEL:      encoder -> gate -> n+1 listeners -> mix -> meta -> projection
class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t seed);

  ModelKind kind() const { return config_.kind; }
  const ModelConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  EmbeddingTables& embeddings() { return embed_; }
  const EmbeddingTables& embeddings() const { return embed_; }
  const EmotionTracker& tracker() const { return tracker_; }
  const ListenerBank& listeners() const;
  const MetaListener& meta() const;
  const OutputProjection& projection() const { return proj_; }

  EncoderOutput encode(const Batch& batch, bool record_attention = false) const;

  // Emotion distribution for a query batch; nullopt for TRS.
  std::optional<Var> emotion_distribution(const Var& query) const;

  // Response logits [B, Lr, |V|] for teacher-forced inputs resp_in laid out
  // [batch, len]. `routed` is the mixture distribution (MoEL only).
  Var decode_logits(const EncoderOutput& enc, std::span<const std::uint8_t> ctx_mask, std::span<const int> resp_in,
                    std::size_t batch, std::size_t len, const Var& routed) const;

  ForwardResult forward(const Batch& batch, const ForwardOptions& options = {}) const;

 private:
  ModelConfig config_;
  ParamStore params_;
  EmbeddingTables embed_;
  EmotionTracker tracker_;
  std::vector<DecoderLayer> decoder_;  // TRS / MULTI_TRS
  Linear classifier_;                  // MULTI_TRS
  std::optional<ListenerBank> listeners_;
  std::optional<MetaListener> meta_;
  OutputProjection proj_;
};

Model build_model(ModelKind kind, ModelConfig config, std::uint64_t seed);

struct ParamReport {
  std::vector<std::pair<std::string, std::size_t>> components;  // fixed display order
  std::size_t total = 0;

  std::string table() const;
};

std::size_t count_params(const Model& model);
ParamReport param_report(const Model& model);

}  // namespace moel
