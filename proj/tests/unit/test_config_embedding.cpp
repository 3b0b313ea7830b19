#include <doctest.h>

#include <cmath>
#include <fstream>

#include "moel/config.hpp"
#include "moel/embedding.hpp"
#include "support.hpp"

using namespace moel;

TEST_CASE("config parses key=value text and round trips") {
  const Config c = Config::parse(
      "# comment\n"
      "model = multi_trs\n"
      "n_emotions = 4\n"
      "d_model = 64   # trailing\n"
      "gamma = 0.25\n"
      "seed = 99\n"
      "data = /tmp/x\n");
  CHECK(c.model.kind == ModelKind::kMultiTrs);
  CHECK(c.model.d_model == 64);
  CHECK(c.model.gamma == 0.25);
  CHECK(c.train.seed == 99);
  CHECK(c.emotions == emotion_labels(4));
  const Config again = Config::parse(c.to_text());
  CHECK(again.to_text() == c.to_text());
  CHECK(again.model.gamma == c.model.gamma);
}

TEST_CASE("config defaults and rejections") {
  const Config d = Config::parse("");
  CHECK(d.model.n_emotions == 32);
  CHECK(d.model.d_model == 300);
  CHECK(d.model.alpha == 1.0);
  CHECK(d.model.beta == 1.0);
  CHECK(d.model.gamma == 1e-3);
  CHECK(d.model.t_thd == 1e4);
  CHECK_THROWS_AS(Config::parse("bogus = 1\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse("d_model = ten\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse("model = rnn\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse("n_emotions = 3\nemotions = a,b\n"), ConfigError);
  ModelConfig m = test::tiny_config();
  m.conv_width = 2;
  CHECK_THROWS_AS(m.validate(), ConfigError);
  m = test::tiny_config();
  m.gamma = 1.0;
  CHECK_THROWS_AS(m.validate(), ConfigError);
}

TEST_CASE("positional encoding values") {
  const auto pe = positional_encoding(3, 4);
  CHECK(pe[0] == 0.0);
  CHECK(pe[1] == 1.0);
  CHECK(pe[4 + 0] == doctest::Approx(std::sin(1.0)).epsilon(1e-15));
  CHECK(pe[4 + 1] == doctest::Approx(std::cos(1.0)).epsilon(1e-15));
  CHECK(pe[4 + 0] == doctest::Approx(0.84147).epsilon(1e-5));
  CHECK(pe[4 + 1] == doctest::Approx(0.54030).epsilon(1e-5));
  CHECK(pe[8 + 2] == doctest::Approx(std::sin(2.0 / 100.0)).epsilon(1e-15));
  CHECK_THROWS_AS(positional_encoding(3, 5), ConfigError);
}

TEST_CASE("embedding tables keep the pad row at zero") {
  ParamStore store;
  Rng rng(1);
  EmbeddingTables t(store, 10, 4, 0.5, false, rng);
  CHECK(t.word.shape() == Shape{10, 4});
  CHECK(t.state.shape() == Shape{3, 4});
  for (std::size_t i = 0; i < 4; ++i) CHECK(t.word.value()[i] == 0.0);
  std::vector<int> ids{Vocab::kPad, 6, 7, Vocab::kPad};
  std::vector<int> states{2, 0, 1, 0};
  Var e = context_embed(t, ids, states, 2, 2);
  backward(ops::sum_squares(ops::add(e, Var::constant({4}, {1, 2, 3, 4}))));
  for (std::size_t i = 0; i < 4; ++i) CHECK(t.word.grad()[i] == 0.0);
  CHECK(t.state.grad()[2 * 4] != 0.0);
  Var r = response_embed(t, ids, 2, 2);
  const auto pe = positional_encoding(2, 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(r.value()[i] == pe[i]);
}

TEST_CASE("pretrained vectors overwrite known rows") {
  ParamStore store;
  Rng rng(2);
  EmbeddingTables t(store, 7, 2, 0.1, false, rng);
  Vocab v;
  v.add("cat");
  v.add("dog");
  test::TempDir dir("pre");
  {
    std::ofstream os(dir.path / "vec.txt");
    os << "dog 1.5 -2\nfish 3 3\n";
  }
  CHECK(load_pretrained_vectors(t, v, dir.path / "vec.txt") == 1);
  CHECK(t.word.value()[static_cast<std::size_t>(v.id("dog")) * 2] == 1.5);
  CHECK(t.word.value()[static_cast<std::size_t>(v.id("dog")) * 2 + 1] == -2.0);
}
