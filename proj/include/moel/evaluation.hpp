#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "moel/corpus.hpp"
#include "moel/model.hpp"

namespace moel {

// Emotion distribution for one context plus its gold label.
struct EmotionPrediction {
  std::vector<double> p;
  int gold = 0;
};

// Fraction of rows whose gold label ranks within the k largest entries;
// equal probabilities rank the lower index first. Throws on empty input or
// k > n.
double topk_accuracy(std::span<const EmotionPrediction> rows, std::size_t k);

// Corpus BLEU-4 in [0, 100]: clipped n-gram precisions pooled over the
// corpus, geometric mean, brevity penalty. Precisions for n >= 2 are
// add-one smoothed, (matches + 1) / (total + 1); unigrams are not.
double corpus_bleu(const std::vector<std::vector<std::string>>& hypotheses,
                   const std::vector<std::vector<std::string>>& references);

struct AttentionTrace {
  std::string context;
  std::string response;
  std::vector<std::string> emotion_names;
  std::vector<double> p;  // emotion distribution used for the response
  std::vector<ops::AttentionWeights> encoder_attention;  // optional
};

struct Decoded {
  std::vector<int> tokens;  // without SOS/EOS
  std::vector<std::string> words;
  AttentionTrace trace;
};

// Everything decoding needs besides the parameters.
struct DecodeContext {
  const Model& model;
  const Vocab& vocab;
  const std::vector<std::string>& emotion_names;
};

// Greedy argmax decoding from SOS until EOS or max_len tokens. The encoder
// and the gate run once per context.
Decoded greedy_decode(const DecodeContext& ctx, std::span<const Turn> turns, std::size_t max_len,
                      bool record_attention = false);

// Greedy decoding with the listener distribution replaced: one-hot at
// `listener` or the given mixture (must sum to 1). MoEL only.
Decoded force_listener(const DecodeContext& ctx, std::span<const Turn> turns, std::size_t listener,
                       std::size_t max_len);
Decoded force_listener(const DecodeContext& ctx, std::span<const Turn> turns, std::span<const double> mixture,
                       std::size_t max_len);

// Text file: "context: ...", "response: ...", then "name, probability"
// per emotion in label order.
void export_trace(const AttentionTrace& trace, const std::filesystem::path& file);
AttentionTrace read_trace(const std::filesystem::path& file);

struct EvalReport {
  std::size_t samples = 0;
  double top1 = 0.0;
  double top3 = 0.0;
  double top5 = 0.0;
  double l2 = 0.0;  // mean token NLL
  double perplexity = 0.0;
  // Top-1 accuracy keyed by number of context turns.
  std::map<std::size_t, std::pair<std::size_t, double>> accuracy_by_turns;
  std::vector<EmotionPrediction> predictions;
};

// Teacher-forced pass over encoded samples (no oracle). `turn_counts`, if
// given, feeds accuracy_by_turns.
EvalReport evaluate(const Model& model, std::span<const EncodedSample> samples, std::size_t batch_size,
                    std::span<const std::size_t> turn_counts = {});

struct GenerationReport {
  double bleu = 0.0;
  double marker_rate = 0.0;  // responses containing the gold style marker
  std::vector<std::vector<std::string>> hypotheses;
};

// Greedy generation over samples; marker_rate is only meaningful on the
// synthetic corpus.
GenerationReport generate_all(const DecodeContext& ctx, std::span<const DialogueSample> samples,
                              std::size_t max_len);

struct ChatOptions {
  std::size_t max_len = 30;
  std::string prompt = "> ";
};

// Line-oriented REPL. Plain lines are speaker turns; commands are /reset,
// /force <emotion>|off, /trace <path>, /quit.
void run_chat(const DecodeContext& ctx, std::istream& in, std::ostream& out, const ChatOptions& options = {});

}  // namespace moel
