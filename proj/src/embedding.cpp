#include "moel/embedding.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace moel {

std::vector<double> positional_encoding(std::size_t length, std::size_t dim) {
  if (dim % 2 != 0) throw ConfigError("positional encoding needs an even dimension, got " + std::to_string(dim));
  std::vector<double> table(length * dim);
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < dim / 2; ++i) {
      const double angle =
          static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(dim));
      table[pos * dim + 2 * i] = std::sin(angle);
      table[pos * dim + 2 * i + 1] = std::cos(angle);
    }
  }
  return table;
}

EmbeddingTables::EmbeddingTables(ParamStore& store, std::size_t vocab_size, std::size_t d_model, double init_std,
                                 bool scale, Rng& rng)
    : scale_words(scale) {
  std::vector<double> words(vocab_size * d_model);
  for (auto& w : words) w = rng.normal(0.0, init_std);
  std::fill_n(words.begin() + Vocab::kPad * static_cast<long>(d_model), d_model, 0.0);
  word = store.add("embed.word", {vocab_size, d_model}, std::move(words));

  std::vector<double> states(kDialogueStates * d_model);
  for (auto& s : states) s = rng.normal(0.0, init_std);
  state = store.add("embed.state", {static_cast<std::size_t>(kDialogueStates), d_model}, std::move(states));
}

namespace {

Var word_plus_position(const EmbeddingTables& tables, std::span<const int> ids, std::size_t batch,
                       std::size_t len) {
  const auto d = tables.dim();
  Var words = ops::embedding(tables.word, ids, {batch, len}, Vocab::kPad);
  if (tables.scale_words) words = ops::scale(words, std::sqrt(static_cast<double>(d)));
  return ops::add(words, Var::constant({len, d}, positional_encoding(len, d)));
}

}  // namespace

Var context_embed(const EmbeddingTables& tables, std::span<const int> ids, std::span<const int> state_ids,
                  std::size_t batch, std::size_t len) {
  Var states = ops::embedding(tables.state, state_ids, {batch, len}, -1);
  return ops::add(word_plus_position(tables, ids, batch, len), states);
}

Var response_embed(const EmbeddingTables& tables, std::span<const int> ids, std::size_t batch, std::size_t len) {
  return word_plus_position(tables, ids, batch, len);
}

std::size_t load_pretrained_vectors(EmbeddingTables& tables, const Vocab& vocab, const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open pretrained vectors " + file.string());
  const auto d = tables.dim();
  auto table = tables.word.mutable_value();
  std::size_t found = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string token;
    if (!(ls >> token)) continue;
    std::vector<double> vec;
    double x;
    while (ls >> x) vec.push_back(x);
    if (vec.size() != d)
      throw SchemaError(file.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(d) +
                        " values, got " + std::to_string(vec.size()));
    const int id = vocab.id(token);
    if (id < Vocab::kReserved || vocab.token(id) != token) continue;
    std::copy(vec.begin(), vec.end(), table.begin() + static_cast<long>(id) * static_cast<long>(d));
    ++found;
  }
  return found;
}

}  // namespace moel
