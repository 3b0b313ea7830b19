#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace moel {

enum class ModelKind { kTrs, kMultiTrs, kMoel };

std::string model_kind_name(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);

// Architecture and loss scalars. Defaults are the full-size setting.
struct ModelConfig {
  ModelKind kind = ModelKind::kMoel;
  std::size_t n_emotions = 32;
  std::size_t vocab_size = 0;  // filled from the vocabulary
  std::size_t d_model = 300;
  std::size_t n_heads = 2;
  std::size_t head_dim = 40;
  std::size_t enc_layers = 2;
  std::size_t trs_dec_layers = 2;
  std::size_t conv_filters = 50;
  std::size_t conv_width = 3;
  double alpha = 1.0;
  double beta = 1.0;
  double gamma = 1e-3;
  double t_thd = 1e4;
  std::size_t max_ctx = 128;
  std::size_t max_resp = 32;
  bool scale_embedding = false;
  double embedding_init_std = 0.02;
  double layer_norm_eps = 1e-6;

  // Throws ConfigError naming the first offending field.
  void validate() const;
};

struct TrainConfig {
  std::uint64_t seed = 1;
  std::size_t batch_size = 16;
  std::size_t steps = 10000;
  std::size_t warmup = 8000;
  double lr_factor = 1.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double adam_eps = 1e-9;
  double clip_norm = 1.0;  // <= 0 disables clipping
  int min_freq = 1;
  std::size_t max_decode_len = 30;
  std::string data;        // dataset directory (train/valid/test.jsonl) or file
  std::string out_dir = "moel_run";
  std::string pretrained;  // optional word-vector file
};

struct Config {
  ModelConfig model;
  TrainConfig train;
  std::vector<std::string> emotions;  // label names, index = emotion id

  // Flat "key = value" lines; '#' starts a comment. Unknown keys throw.
  static Config parse(const std::string& text);
  static Config load(const std::filesystem::path& file);
  // Canonical text form; parse(to_text()) reproduces the config.
  std::string to_text() const;
};

}  // namespace moel
