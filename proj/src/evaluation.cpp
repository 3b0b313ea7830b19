#include "moel/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

namespace moel {

double topk_accuracy(std::span<const EmotionPrediction> rows, std::size_t k) {
  if (rows.empty()) throw std::invalid_argument("topk_accuracy: no rows");
  std::size_t hits = 0;
  for (const auto& row : rows) {
    const auto n = row.p.size();
    if (k == 0 || k > n) throw std::invalid_argument("topk_accuracy: k must be in [1, n]");
    if (row.gold < 0 || static_cast<std::size_t>(row.gold) >= n)
      throw std::out_of_range("topk_accuracy: gold label out of range");
    const double g = row.p[static_cast<std::size_t>(row.gold)];
    // Rank of gold: entries strictly larger, plus equal entries at lower index.
    std::size_t ahead = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (row.p[i] > g || (row.p[i] == g && i < static_cast<std::size_t>(row.gold))) ++ahead;
    if (ahead < k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(rows.size());
}

double corpus_bleu(const std::vector<std::vector<std::string>>& hypotheses,
                   const std::vector<std::vector<std::string>>& references) {
  if (hypotheses.size() != references.size()) throw std::invalid_argument("corpus_bleu: size mismatch");
  if (hypotheses.empty()) throw std::invalid_argument("corpus_bleu: empty corpus");
  std::array<double, 4> match{};
  std::array<double, 4> total{};
  double hyp_len = 0.0;
  double ref_len = 0.0;
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    const auto& h = hypotheses[s];
    const auto& r = references[s];
    hyp_len += static_cast<double>(h.size());
    ref_len += static_cast<double>(r.size());
    for (std::size_t n = 1; n <= 4; ++n) {
      std::map<std::vector<std::string>, std::size_t> ref_counts;
      for (std::size_t i = 0; i + n <= r.size(); ++i) ++ref_counts[{r.begin() + i, r.begin() + i + n}];
      std::map<std::vector<std::string>, std::size_t> hyp_counts;
      for (std::size_t i = 0; i + n <= h.size(); ++i) ++hyp_counts[{h.begin() + i, h.begin() + i + n}];
      for (const auto& [gram, c] : hyp_counts) {
        auto it = ref_counts.find(gram);
        match[n - 1] += static_cast<double>(std::min(c, it == ref_counts.end() ? 0 : it->second));
        total[n - 1] += static_cast<double>(c);
      }
    }
  }
  if (total[0] == 0.0 || match[0] == 0.0) return 0.0;
  double log_sum = std::log(match[0] / total[0]);
  for (std::size_t n = 1; n < 4; ++n) log_sum += std::log((match[n] + 1.0) / (total[n] + 1.0));
  const double bp = hyp_len >= ref_len ? 1.0 : std::exp(1.0 - ref_len / hyp_len);
  return 100.0 * bp * std::exp(log_sum / 4.0);
}

namespace {

std::string context_text(std::span<const Turn> turns) {
  std::string out;
  for (const auto& t : turns) {
    if (!out.empty()) out += " | ";
    out += t.utterance;
  }
  return out;
}

Batch context_batch(const Model& model, const Vocab& vocab, std::span<const Turn> turns) {
  if (turns.empty()) throw std::invalid_argument("decode: empty context");
  DialogueSample sample;
  sample.turns.assign(turns.begin(), turns.end());
  const auto& mc = model.config();
  std::vector<EncodedSample> rows{encode_sample(sample, vocab, mc.max_ctx, mc.max_resp)};
  return collate(rows);
}

std::size_t argmax_last(const Var& logits, std::size_t pos) {
  const auto v = logits.dim(2);
  const auto row = logits.value().subspan(pos * v, v);
  std::size_t best = 0;
  for (std::size_t i = 1; i < v; ++i)
    if (row[i] > row[best]) best = i;
  return best;
}

Decoded run_decode(const DecodeContext& ctx, std::span<const Turn> turns, std::size_t max_len, bool record,
                   std::optional<std::vector<double>> forced) {
  NoGradGuard guard;
  const Model& model = ctx.model;
  const Batch batch = context_batch(model, ctx.vocab, turns);
  const EncoderOutput enc = model.encode(batch, record);

  Decoded out;
  out.trace.context = context_text(turns);
  out.trace.emotion_names = ctx.emotion_names;
  if (record) out.trace.encoder_attention = enc.attention;

  Var routed;
  if (forced) {
    if (model.kind() != ModelKind::kMoel) throw std::logic_error("listener forcing needs a MoEL model");
    const auto n = model.config().n_emotions;
    if (forced->size() != n) throw std::invalid_argument("forced mixture must have n entries");
    const double sum = std::accumulate(forced->begin(), forced->end(), 0.0);
    if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("forced mixture must sum to 1");
    for (double x : *forced)
      if (x < 0.0) throw std::invalid_argument("forced mixture must be non-negative");
    routed = Var::constant({1, n}, *forced);
    out.trace.p = *forced;
  } else if (auto p = model.emotion_distribution(enc.query)) {
    if (model.kind() == ModelKind::kMoel) routed = *p;
    out.trace.p.assign(p->value().begin(), p->value().end());
  }

  std::vector<int> prefix{Vocab::kSos};
  for (std::size_t step = 0; step < max_len; ++step) {
    const Var logits = model.decode_logits(enc, batch.ctx_mask, prefix, 1, prefix.size(), routed);
    const int next = static_cast<int>(argmax_last(logits, prefix.size() - 1));
    if (next == Vocab::kEos) break;
    out.tokens.push_back(next);
    prefix.push_back(next);
  }
  out.words = ctx.vocab.decode(out.tokens);
  out.trace.response = join_tokens(out.words);
  return out;
}

}  // namespace

Decoded greedy_decode(const DecodeContext& ctx, std::span<const Turn> turns, std::size_t max_len,
                      bool record_attention) {
  return run_decode(ctx, turns, max_len, record_attention, std::nullopt);
}

Decoded force_listener(const DecodeContext& ctx, std::span<const Turn> turns, std::size_t listener,
                       std::size_t max_len) {
  const auto n = ctx.model.config().n_emotions;
  if (listener >= n) throw std::out_of_range("force_listener: listener index out of range");
  std::vector<double> onehot(n, 0.0);
  onehot[listener] = 1.0;
  return run_decode(ctx, turns, max_len, false, std::move(onehot));
}

Decoded force_listener(const DecodeContext& ctx, std::span<const Turn> turns, std::span<const double> mixture,
                       std::size_t max_len) {
  return run_decode(ctx, turns, max_len, false, std::vector<double>(mixture.begin(), mixture.end()));
}

void export_trace(const AttentionTrace& trace, const std::filesystem::path& file) {
  std::ofstream os(file);
  if (!os) throw IoError("cannot write trace " + file.string());
  os << "context: " << trace.context << '\n';
  os << "response: " << trace.response << '\n';
  os << std::setprecision(17);
  for (std::size_t i = 0; i < trace.p.size(); ++i)
    os << (i < trace.emotion_names.size() ? trace.emotion_names[i] : std::to_string(i)) << ", " << trace.p[i]
       << '\n';
  for (std::size_t l = 0; l < trace.encoder_attention.size(); ++l) {
    const auto& a = trace.encoder_attention[l];
    os << "attention " << l << ' ' << shape_str(a.shape) << ':';
    for (double w : a.weights) os << ' ' << w;
    os << '\n';
  }
}

AttentionTrace read_trace(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) throw IoError("cannot open trace " + file.string());
  AttentionTrace trace;
  std::string line;
  auto expect = [&](const std::string& prefix) {
    if (!std::getline(is, line) || line.rfind(prefix, 0) != 0)
      throw SchemaError("trace " + file.string() + ": expected '" + prefix + "'");
    return line.substr(prefix.size());
  };
  trace.context = expect("context: ");
  trace.response = expect("response: ");
  while (std::getline(is, line)) {
    if (line.rfind("attention ", 0) == 0) continue;
    const auto comma = line.rfind(", ");
    if (comma == std::string::npos) throw SchemaError("trace " + file.string() + ": bad line '" + line + "'");
    trace.emotion_names.push_back(line.substr(0, comma));
    trace.p.push_back(std::stod(line.substr(comma + 2)));
  }
  return trace;
}

EvalReport evaluate(const Model& model, std::span<const EncodedSample> samples, std::size_t batch_size,
                    std::span<const std::size_t> turn_counts) {
  if (samples.empty()) throw std::invalid_argument("evaluate: no samples");
  if (!turn_counts.empty() && turn_counts.size() != samples.size())
    throw std::invalid_argument("evaluate: turn_counts size mismatch");
  NoGradGuard guard;
  const auto bs = std::max<std::size_t>(1, batch_size);
  EvalReport report;
  report.samples = samples.size();
  double nll_sum = 0.0;
  double tokens = 0.0;
  for (std::size_t start = 0; start < samples.size(); start += bs) {
    const auto end = std::min(samples.size(), start + bs);
    const Batch batch = collate(samples.subspan(start, end - start));
    const ForwardResult fr = model.forward(batch);
    const double t = static_cast<double>(std::count(batch.resp_mask.begin(), batch.resp_mask.end(), 1));
    nll_sum += fr.l2.item() * t;
    tokens += t;
    if (fr.gate.defined()) {
      const auto n = fr.gate.dim(1);
      for (std::size_t b = 0; b < batch.size; ++b) {
        EmotionPrediction row;
        row.p.assign(fr.gate.value().begin() + static_cast<long>(b * n),
                     fr.gate.value().begin() + static_cast<long>((b + 1) * n));
        row.gold = batch.emotions[b];
        report.predictions.push_back(std::move(row));
      }
    }
  }
  report.l2 = nll_sum / tokens;
  report.perplexity = std::exp(report.l2);
  if (!report.predictions.empty()) {
    const auto n = report.predictions.front().p.size();
    report.top1 = topk_accuracy(report.predictions, 1);
    report.top3 = topk_accuracy(report.predictions, std::min<std::size_t>(3, n));
    report.top5 = topk_accuracy(report.predictions, std::min<std::size_t>(5, n));
    if (!turn_counts.empty()) {
      std::map<std::size_t, std::vector<EmotionPrediction>> groups;
      for (std::size_t i = 0; i < report.predictions.size(); ++i)
        groups[turn_counts[i]].push_back(report.predictions[i]);
      for (const auto& [turns, rows] : groups) report.accuracy_by_turns[turns] = {rows.size(), topk_accuracy(rows, 1)};
    }
  }
  return report;
}

GenerationReport generate_all(const DecodeContext& ctx, std::span<const DialogueSample> samples,
                              std::size_t max_len) {
  GenerationReport report;
  std::vector<std::vector<std::string>> refs;
  std::size_t marked = 0;
  for (const auto& s : samples) {
    Decoded d = greedy_decode(ctx, s.turns, max_len);
    const auto idx = static_cast<std::size_t>(s.emotion);
    if (idx < ctx.emotion_names.size()) {
      const auto marker = style_marker(ctx.emotion_names[idx]);
      if (std::find(d.words.begin(), d.words.end(), marker) != d.words.end()) ++marked;
    }
    refs.push_back(tokenize(s.target));
    report.hypotheses.push_back(std::move(d.words));
  }
  if (!samples.empty()) {
    report.bleu = corpus_bleu(report.hypotheses, refs);
    report.marker_rate = static_cast<double>(marked) / static_cast<double>(samples.size());
  }
  return report;
}

namespace {

void chat_help(std::ostream& out) {
  out << "commands: /reset, /force <emotion>|off, /trace <path>, /quit\n";
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void run_chat(const DecodeContext& ctx, std::istream& in, std::ostream& out, const ChatOptions& options) {
  std::vector<Turn> history;
  std::optional<std::size_t> forced;
  std::optional<AttentionTrace> last;
  std::string line;
  out << options.prompt << std::flush;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty()) {
      out << options.prompt << std::flush;
      continue;
    }
    if (line[0] == '/') {
      std::istringstream cmd(line);
      std::string name, arg;
      cmd >> name >> arg;
      if (name == "/quit") break;
      if (name == "/reset") {
        history.clear();
        out << "(history cleared)\n";
      } else if (name == "/force") {
        if (arg == "off") {
          forced.reset();
          out << "(routing from the gate)\n";
        } else if (ctx.model.kind() != ModelKind::kMoel) {
          out << "(forcing needs a moel checkpoint)\n";
        } else {
          auto it = std::find(ctx.emotion_names.begin(), ctx.emotion_names.end(), arg);
          if (it == ctx.emotion_names.end()) {
            out << "(unknown emotion '" << arg << "')\n";
          } else {
            forced = static_cast<std::size_t>(it - ctx.emotion_names.begin());
            out << "(forcing listener " << arg << ")\n";
          }
        }
      } else if (name == "/trace") {
        if (!last) {
          out << "(nothing to trace yet)\n";
        } else if (arg.empty()) {
          out << "(usage: /trace <path>)\n";
        } else {
          export_trace(*last, arg);
          out << "(trace written to " << arg << ")\n";
        }
      } else {
        chat_help(out);
      }
      out << options.prompt << std::flush;
      continue;
    }
    history.push_back({Role::kSpeaker, line});
    Decoded d = forced ? force_listener(ctx, history, *forced, options.max_len)
                       : greedy_decode(ctx, history, options.max_len, true);
    out << d.trace.response << '\n';
    if (!d.trace.p.empty()) {
      const auto& p = d.trace.p;
      std::vector<std::size_t> order(p.size());
      std::iota(order.begin(), order.end(), 0);
      const std::size_t shown = std::min<std::size_t>(3, order.size());
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(shown), order.end(),
                        [&](std::size_t a, std::size_t b) { return p[a] > p[b] || (p[a] == p[b] && a < b); });
      out << "  [";
      for (std::size_t r = 0; r < shown; ++r) {
        const auto i = order[r];
        out << (r ? ", " : "") << (i < ctx.emotion_names.size() ? ctx.emotion_names[i] : std::to_string(i)) << ' '
            << std::fixed << std::setprecision(3) << p[i] << std::defaultfloat;
      }
      out << "]\n";
    }
    history.push_back({Role::kListener, d.trace.response});
    last = std::move(d.trace);
    out << options.prompt << std::flush;
  }
}

}  // namespace moel
