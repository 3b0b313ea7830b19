#include <doctest.h>

#include <cmath>
#include <sstream>

#include "moel/evaluation.hpp"
#include "support.hpp"

using namespace moel;

namespace {

std::vector<std::vector<std::string>> split_all(const std::vector<std::string>& lines) {
  std::vector<std::vector<std::string>> out;
  for (const auto& l : lines) out.push_back(tokenize(l));
  return out;
}

struct TinySetup {
  Vocab vocab;
  std::vector<std::string> names = emotion_labels(3);
  Model model;

  TinySetup() : vocab(make_vocab()), model(config(vocab), 4) {}

  static Vocab make_vocab() {
    Vocab v;
    for (const char* t : {"hello", "there", "i", "am", "sad", "oh", "no", "style_afraid", "style_angry"}) v.add(t);
    return v;
  }
  static ModelConfig config(const Vocab& v) {
    auto c = test::tiny_config();
    c.vocab_size = v.size();
    return c;
  }
  DecodeContext ctx() const { return {model, vocab, names}; }
};

}  // namespace

TEST_CASE("top-k accuracy ranks ties by index and grows with k") {
  std::vector<EmotionPrediction> rows{{{0.1, 0.6, 0.3}, 2}, {{0.5, 0.5, 0.0}, 1}, {{0.2, 0.3, 0.5}, 2}};
  CHECK(topk_accuracy(rows, 1) == doctest::Approx(1.0 / 3.0));
  CHECK(topk_accuracy(rows, 2) == doctest::Approx(1.0));
  CHECK_THROWS(topk_accuracy(rows, 4));
  CHECK_THROWS(topk_accuracy(std::vector<EmotionPrediction>{}, 1));

  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<EmotionPrediction> r(50);
    for (auto& row : r) {
      row.p.resize(8);
      double s = 0.0;
      for (auto& x : row.p) s += (x = rng.uniform());
      for (auto& x : row.p) x /= s;
      row.gold = static_cast<int>(rng.below(8));
    }
    double prev = 0.0;
    for (std::size_t k = 1; k <= 8; ++k) {
      const double a = topk_accuracy(r, k);
      CHECK(a >= prev);
      prev = a;
    }
    CHECK(prev == 1.0);
  }
}

TEST_CASE("bleu against hand-computed values") {
  const auto self = split_all({"the cat sat on the mat", "a b c d e"});
  CHECK(corpus_bleu(self, self) == 100.0);

  const auto h = split_all({"the cat sat on the mat"});
  const auto r = split_all({"the cat is on the mat"});
  // p1 = 5/6, p2 = (3+1)/(5+1), p3 = (1+1)/(4+1), p4 = (0+1)/(3+1), no brevity penalty.
  const double expect = 100.0 * std::pow(5.0 / 6.0 * 4.0 / 6.0 * 2.0 / 5.0 * 1.0 / 4.0, 0.25);
  CHECK(corpus_bleu(h, r) == doctest::Approx(expect).epsilon(1e-12));

  // Two-token hypothesis against a four-token reference: all precisions 1,
  // brevity penalty exp(1 - 4/2).
  CHECK(corpus_bleu(split_all({"the cat"}), split_all({"the cat sat down"})) ==
        doctest::Approx(100.0 * std::exp(-1.0)).epsilon(1e-12));
  CHECK(corpus_bleu(split_all({"x y"}), split_all({"a b"})) == 0.0);
  CHECK_THROWS(corpus_bleu(h, split_all({"a", "b"})));
}

TEST_CASE("bleu is invariant to pair order") {
  const auto hyps = split_all({"oh no that is sad", "wow , that is great", "i see"});
  const auto refs = split_all({"oh no that is bad", "wow that is great !", "i see you"});
  const double base = corpus_bleu(hyps, refs);
  std::vector<std::size_t> order{2, 0, 1};
  std::vector<std::vector<std::string>> h2, r2;
  for (auto i : order) {
    h2.push_back(hyps[i]);
    r2.push_back(refs[i]);
  }
  CHECK(corpus_bleu(h2, r2) == doctest::Approx(base).epsilon(1e-14));
}

TEST_CASE("greedy decoding is deterministic and bounded") {
  TinySetup s;
  std::vector<Turn> turns{{Role::kSpeaker, "hello there i am sad"}};
  const auto a = greedy_decode(s.ctx(), turns, 5, true);
  const auto b = greedy_decode(s.ctx(), turns, 5, true);
  CHECK(a.tokens == b.tokens);
  CHECK(a.tokens.size() <= 5);
  CHECK(a.trace.p.size() == 3);
  CHECK(std::accumulate(a.trace.p.begin(), a.trace.p.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(a.trace.encoder_attention.size() == 1);
  CHECK_THROWS(greedy_decode(s.ctx(), std::vector<Turn>{}, 5));
}

TEST_CASE("listener forcing validates its input") {
  TinySetup s;
  std::vector<Turn> turns{{Role::kSpeaker, "i am sad"}};
  const auto forced = force_listener(s.ctx(), turns, 2, 4);
  CHECK(forced.trace.p == std::vector<double>{0.0, 0.0, 1.0});
  std::vector<double> mix{0.5, 0.5, 0.0};
  CHECK(force_listener(s.ctx(), turns, mix, 4).trace.p == mix);
  CHECK_THROWS_AS(force_listener(s.ctx(), turns, 3, 4), std::out_of_range);
  std::vector<double> bad{0.5, 0.6, 0.0};
  CHECK_THROWS(force_listener(s.ctx(), turns, bad, 4));
  std::vector<double> mix1{0.0, 1.0, 0.0};
  CHECK(force_listener(s.ctx(), turns, mix1, 4).tokens == force_listener(s.ctx(), turns, 1, 4).tokens);
}

TEST_CASE("trace files round trip and list every emotion") {
  test::TempDir dir("trace");
  AttentionTrace t;
  t.context = "i lost my dog";
  t.response = "oh no";
  t.emotion_names = emotion_labels(32);
  t.p.assign(32, 1.0 / 32.0);
  t.p[3] = 0.1;
  export_trace(t, dir.path / "t.txt");
  const auto back = read_trace(dir.path / "t.txt");
  CHECK(back.context == t.context);
  CHECK(back.response == t.response);
  CHECK(back.emotion_names == t.emotion_names);
  CHECK(back.p == t.p);

  std::ifstream is(dir.path / "t.txt");
  std::string line;
  std::size_t prob_lines = 0;
  while (std::getline(is, line))
    if (line.find(", ") != std::string::npos) ++prob_lines;
  CHECK(prob_lines == 32);
}

TEST_CASE("evaluate reports accuracy and perplexity") {
  TinySetup s;
  const auto samples = test::random_samples(7, s.model.config(), 5);
  std::vector<std::size_t> turns{1, 1, 3, 1, 3, 3, 1};
  const auto rep = evaluate(s.model, samples, 3, turns);
  CHECK(rep.samples == 7);
  CHECK(rep.predictions.size() == 7);
  CHECK(rep.top1 <= rep.top3);
  CHECK(rep.top3 == 1.0);
  CHECK(rep.perplexity == doctest::Approx(std::exp(rep.l2)));
  CHECK(rep.accuracy_by_turns.at(1).first == 4);
  CHECK(rep.accuracy_by_turns.at(3).first == 3);
  const auto one = evaluate(s.model, samples, 1, turns);
  CHECK(one.l2 == doctest::Approx(rep.l2).epsilon(1e-12));
}

TEST_CASE("chat commands") {
  TinySetup s;
  test::TempDir dir("chat");
  const auto trace = (dir.path / "chat.txt").string();
  std::istringstream in("hello there\n/force angry\ni am sad\n/trace " + trace +
                        "\n/force joyful\n/force off\n/what\n/reset\n/quit\nnever read\n");
  std::ostringstream out;
  ChatOptions opts;
  opts.max_len = 4;
  run_chat(s.ctx(), in, out, opts);
  const auto text = out.str();
  CHECK(text.find("(forcing listener angry)") != std::string::npos);
  CHECK(text.find("(unknown emotion 'joyful')") != std::string::npos);
  CHECK(text.find("(routing from the gate)") != std::string::npos);
  CHECK(text.find("commands:") != std::string::npos);
  CHECK(text.find("(history cleared)") != std::string::npos);
  CHECK(text.find("[angry 1.000, afraid 0.000, annoyed 0.000]") != std::string::npos);
  const auto t = read_trace(trace);
  CHECK(t.p == std::vector<double>{0.0, 1.0, 0.0});
  CHECK(t.context.rfind("hello there | ", 0) == 0);
}
