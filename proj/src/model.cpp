#include "moel/model.hpp"

#include <iomanip>
#include <map>
#include <sstream>

namespace moel {

Model::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  embed_ = EmbeddingTables(params_, config_.vocab_size, config_.d_model, config_.embedding_init_std,
                           config_.scale_embedding, rng);
  tracker_ = EmotionTracker(params_, config_, rng);
  switch (config_.kind) {
    case ModelKind::kTrs:
    case ModelKind::kMultiTrs:
      for (std::size_t l = 0; l < config_.trs_dec_layers; ++l)
        decoder_.emplace_back(params_, "decoder." + std::to_string(l), block_dims(config_), rng);
      if (config_.kind == ModelKind::kMultiTrs)
        classifier_ = Linear(params_, "classifier", config_.d_model, config_.n_emotions, rng);
      break;
    case ModelKind::kMoel:
      listeners_.emplace(params_, config_, rng);
      meta_.emplace(params_, config_, rng);
      break;
  }
  proj_ = OutputProjection(params_, config_.d_model, config_.vocab_size, rng);
}

const ListenerBank& Model::listeners() const {
  if (!listeners_) throw std::logic_error(model_kind_name(kind()) + " model has no listener bank");
  return *listeners_;
}

const MetaListener& Model::meta() const {
  if (!meta_) throw std::logic_error(model_kind_name(kind()) + " model has no meta listener");
  return *meta_;
}

EncoderOutput Model::encode(const Batch& batch, bool record_attention) const {
  return tracker_(embed_, batch, record_attention);
}

std::optional<Var> Model::emotion_distribution(const Var& query) const {
  switch (config_.kind) {
    case ModelKind::kTrs: return std::nullopt;
    case ModelKind::kMultiTrs: return ops::softmax_rows(classifier_(query));
    case ModelKind::kMoel:
      if (config_.n_emotions == 0) return std::nullopt;
      return gate(query, listeners_->keys());
  }
  return std::nullopt;
}

Var Model::decode_logits(const EncoderOutput& enc, std::span<const std::uint8_t> ctx_mask,
                         std::span<const int> resp_in, std::size_t batch, std::size_t len, const Var& routed) const {
  Var response = response_embed(embed_, resp_in, batch, len);
  Var o;
  if (config_.kind == ModelKind::kMoel) {
    auto values = listeners_->all_listeners(enc.hidden, ctx_mask, response);
    Var mixed = combine(values, routed);
    o = (*meta_)(enc.hidden, ctx_mask, mixed);
  } else {
    o = response;
    for (const auto& layer : decoder_) o = layer(o, enc.hidden, ctx_mask);
  }
  return proj_.logits(o);
}

ForwardResult Model::forward(const Batch& batch, const ForwardOptions& options) const {
  ForwardResult out;
  out.encoder = encode(batch, options.record_attention);
  const auto n = config_.n_emotions;

  Var l1 = Var::zeros({1});
  switch (config_.kind) {
    case ModelKind::kTrs:
      break;
    case ModelKind::kMultiTrs: {
      Var cls_logits = classifier_(out.encoder.query);
      std::vector<std::uint8_t> all(batch.size, 1);
      l1 = ops::cross_entropy(cls_logits, batch.emotions, all);
      out.gate = ops::softmax_rows(cls_logits);
      break;
    }
    case ModelKind::kMoel: {
      if (n == 0) break;
      out.gate = gate(out.encoder.query, listeners_->keys());
      l1 = emotion_loss(out.gate, batch.emotions, &out.l1_clamped);
      if (!options.routing_override.empty()) {
        if (options.routing_override.size() != batch.size * n)
          throw ShapeError("routing override must hold B*n = " + std::to_string(batch.size * n) + " values");
        out.routed = Var::constant({batch.size, n},
                                   {options.routing_override.begin(), options.routing_override.end()});
      } else if (options.oracle_eps > 0.0) {
        if (!options.rng) throw std::invalid_argument("forward: oracle replacement needs an rng");
        auto oracle = apply_oracle(out.gate, batch.emotions, options.oracle_eps, *options.rng);
        out.routed = oracle.p;
        out.oracle_replaced = std::move(oracle.replaced);
      } else {
        out.routed = out.gate;
      }
      break;
    }
  }

  out.logits = decode_logits(out.encoder, batch.ctx_mask, batch.resp_in, batch.size, batch.resp_len, out.routed);
  out.l2 = generation_loss_from_logits(out.logits, batch.resp_out, batch.resp_mask);
  out.l1 = l1;
  const double alpha = config_.kind == ModelKind::kTrs ? 0.0 : config_.alpha;
  out.loss = total_loss(out.l1, out.l2, alpha, config_.beta);
  return out;
}

Model build_model(ModelKind kind, ModelConfig config, std::uint64_t seed) {
  config.kind = kind;
  return Model(config, seed);
}

namespace {

std::string component_of(const std::string& name) {
  auto starts = [&](const char* p) { return name.rfind(p, 0) == 0; };
  if (starts("embed.word")) return "word embedding";
  if (starts("embed.state")) return "dialogue-state embedding";
  if (starts("encoder.")) return "emotion tracker";
  if (starts("decoder.")) return "decoder stack";
  if (starts("classifier.")) return "emotion classifier";
  if (starts("listener.keys")) return "listener keys";
  if (starts("listener.0.")) return "shared listener";
  if (starts("listener.")) return "emotion listeners";
  if (starts("meta.")) return "meta listener";
  if (starts("proj.")) return "output projection";
  return "other";
}

}  // namespace

std::size_t count_params(const Model& model) { return model.params().scalar_count(); }

ParamReport param_report(const Model& model) {
  ParamReport report;
  std::map<std::string, std::size_t> index;
  for (const auto& [name, v] : model.params().entries()) {
    const auto comp = component_of(name);
    auto [it, inserted] = index.try_emplace(comp, report.components.size());
    if (inserted) report.components.emplace_back(comp, 0);
    report.components[it->second].second += v.size();
    report.total += v.size();
  }
  return report;
}

std::string ParamReport::table() const {
  std::ostringstream os;
  std::size_t width = 5;
  for (const auto& [name, count] : components) width = std::max(width, name.size());
  for (const auto& [name, count] : components)
    os << std::left << std::setw(static_cast<int>(width)) << name << "  " << std::right << std::setw(12) << count
       << '\n';
  os << std::left << std::setw(static_cast<int>(width)) << "total" << "  " << std::right << std::setw(12) << total
     << '\n';
  return os.str();
}

}  // namespace moel
