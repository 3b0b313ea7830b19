#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "moel/corpus.hpp"
#include "moel/layers.hpp"

namespace moel {

// Sinusoidal table [length, dim]: (pos, 2i) = sin(pos / 10000^(2i/dim)),
// (pos, 2i+1) = cos of the same angle. Throws ConfigError for odd dim.
std::vector<double> positional_encoding(std::size_t length, std::size_t dim);

// Word table shared by context and response sides, plus the dialogue-state
// table. The PAD word row starts at zero and never receives gradient.
struct EmbeddingTables {
  EmbeddingTables() = default;
  EmbeddingTables(ParamStore& store, std::size_t vocab_size, std::size_t d_model, double init_std,
                  bool scale_words, Rng& rng);

  Var word;   // [|V|, d]
  Var state;  // [3, d]
  bool scale_words = false;

  std::size_t dim() const { return word.dim(1); }
};

// word + positional + dialogue state, ids laid out [batch, len].
Var context_embed(const EmbeddingTables& tables, std::span<const int> ids, std::span<const int> state_ids,
                  std::size_t batch, std::size_t len);
// word + positional; responses carry no dialogue-state term.
Var response_embed(const EmbeddingTables& tables, std::span<const int> ids, std::size_t batch, std::size_t len);

// Overwrite word rows from a "token v1 ... vd" text file. Returns how many
// vocabulary tokens were found; the rest keep their random init.
std::size_t load_pretrained_vectors(EmbeddingTables& tables, const Vocab& vocab, const std::filesystem::path& file);

}  // namespace moel
