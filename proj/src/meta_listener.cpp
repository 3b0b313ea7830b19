#include "moel/meta_listener.hpp"

#include "moel/emotion_tracker.hpp"

namespace moel {

MetaListener::MetaListener(ParamStore& store, const ModelConfig& config, Rng& rng)
    : block_(store, "meta", block_dims(config), rng) {}

Var generation_loss(const Var& dist, std::span<const int> resp_out, std::span<const std::uint8_t> resp_mask) {
  return ops::gold_nll(dist, resp_out, 1e-300, nullptr, resp_mask);
}

Var generation_loss_from_logits(const Var& logits, std::span<const int> resp_out,
                                std::span<const std::uint8_t> resp_mask) {
  return ops::cross_entropy(logits, resp_out, resp_mask);
}

Var total_loss(const Var& l1, const Var& l2, double alpha, double beta) {
  if (alpha < 0.0 || beta < 0.0) throw std::invalid_argument("total_loss: weights must be non-negative");
  return ops::weighted_sum(l1, alpha, l2, beta);
}

}  // namespace moel
