#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <string>
#include <vector>

#include <unistd.h>

#include "moel/config.hpp"
#include "moel/corpus.hpp"
#include "moel/model.hpp"
#include "moel/random.hpp"

namespace moel::test {

// d=8, head_dim=4, n=3, |V|=20.
inline ModelConfig tiny_config(ModelKind kind = ModelKind::kMoel) {
  ModelConfig c;
  c.kind = kind;
  c.n_emotions = 3;
  c.vocab_size = 20;
  c.d_model = 8;
  c.n_heads = 2;
  c.head_dim = 4;
  c.enc_layers = 1;
  c.trs_dec_layers = 2;
  c.conv_filters = 6;
  c.conv_width = 3;
  c.max_ctx = 8;
  c.max_resp = 8;
  c.embedding_init_std = 0.5;
  return c;
}

// Random rows with ragged lengths: contexts up to 6 tokens (QRY first),
// responses up to 6 positions.
inline std::vector<EncodedSample> random_samples(std::size_t count, const ModelConfig& c, std::uint64_t seed,
                                                 std::size_t max_ctx = 6, std::size_t max_resp = 6) {
  Rng rng(seed);
  const auto word = [&] { return static_cast<int>(Vocab::kReserved + rng.below(c.vocab_size - Vocab::kReserved)); };
  std::vector<EncodedSample> out(count);
  for (auto& s : out) {
    const auto lc = 2 + rng.below(max_ctx - 1);
    s.ctx_ids = {Vocab::kQry};
    s.ctx_state_ids = {kQueryState};
    for (std::size_t i = 1; i < lc; ++i) {
      s.ctx_ids.push_back(word());
      s.ctx_state_ids.push_back(static_cast<int>(rng.below(2)));
    }
    const auto lr = 1 + rng.below(max_resp - 1);
    s.resp_in = {Vocab::kSos};
    for (std::size_t i = 0; i < lr; ++i) s.resp_in.push_back(word());
    s.resp_out.assign(s.resp_in.begin() + 1, s.resp_in.end());
    s.resp_out.push_back(Vocab::kEos);
    s.emotion = c.n_emotions > 0 ? static_cast<int>(rng.below(c.n_emotions)) : 0;
  }
  return out;
}

inline Batch random_batch(std::size_t count, const ModelConfig& c, std::uint64_t seed) {
  return collate(random_samples(count, c, seed));
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// |a - n| / max(|a|, |n|, floor).
inline double relative_error(double analytic, double numeric, double floor = 1e-5) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Central difference of `loss` with respect to one scalar of `param`.
inline double numeric_grad(Var param, std::size_t index, const std::function<double()>& loss, double h = 1e-5) {
  auto v = param.mutable_value();
  const double saved = v[index];
  v[index] = saved + h;
  const double up = loss();
  v[index] = saved - h;
  const double down = loss();
  v[index] = saved;
  return (up - down) / (2.0 * h);
}

// Hand-derived parameter counts per block.
struct ParamFormula {
  std::size_t d, h, dh, f, w, n, vocab, enc_layers, trs_layers;

  explicit ParamFormula(const ModelConfig& c)
      : d(c.d_model), h(c.n_heads), dh(c.head_dim), f(c.conv_filters), w(c.conv_width), n(c.n_emotions),
        vocab(c.vocab_size), enc_layers(c.enc_layers), trs_layers(c.trs_dec_layers) {}

  std::size_t attention() const { return 3 * (d * h * dh + h * dh) + h * dh * d + d; }
  std::size_t feed_forward() const { return w * d * f + f + w * f * d + d; }
  std::size_t norm() const { return 2 * d; }
  std::size_t encoder_block() const { return attention() + feed_forward() + 2 * norm(); }
  std::size_t decoder_block() const { return 2 * attention() + feed_forward() + 3 * norm(); }
  std::size_t shared() const { return vocab * d + 3 * d + enc_layers * encoder_block() + d * vocab + vocab; }

  std::size_t total(ModelKind kind) const {
    switch (kind) {
      case ModelKind::kTrs: return shared() + trs_layers * decoder_block();
      case ModelKind::kMultiTrs: return shared() + trs_layers * decoder_block() + d * n + n;
      case ModelKind::kMoel: return shared() + (n + 2) * decoder_block() + n * d;
    }
    return 0;
  }
};

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() / ("moel_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace moel::test
