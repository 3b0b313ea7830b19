#include "moel/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "moel/random.hpp"

namespace moel {

std::string_view split_name(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kValid: return "valid";
    case Split::kTest: return "test";
  }
  return "train";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "valid" || name == "validation" || name == "dev") return Split::kValid;
  if (name == "test") return Split::kTest;
  throw std::invalid_argument("unknown split '" + std::string(name) + "'");
}

const std::vector<std::string>& default_emotion_labels() {
  static const std::vector<std::string> labels = {
      "afraid",     "angry",     "annoyed",   "anticipating", "anxious",     "apprehensive", "ashamed",
      "caring",     "confident", "content",   "devastated",   "disappointed", "disgusted",   "embarrassed",
      "excited",    "faithful",  "furious",   "grateful",     "guilty",       "hopeful",     "impressed",
      "jealous",    "joyful",    "lonely",    "nostalgic",    "prepared",     "proud",       "sad",
      "sentimental", "surprised", "terrified", "trusting"};
  return labels;
}

std::vector<std::string> emotion_labels(std::size_t n) {
  const auto& base = default_emotion_labels();
  std::vector<std::string> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) out.push_back(k < base.size() ? base[k] : "emotion_" + std::to_string(k));
  return out;
}

std::vector<std::string> tokenize(std::string_view text) {
  static constexpr std::string_view kComma = "_comma_";
  std::vector<std::string> out;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) out.push_back(std::move(current));
    current.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (text.substr(i, kComma.size()) == kComma) {
      flush();
      out.emplace_back(",");
      i += kComma.size() - 1;
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else {
      current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  flush();
  return out;
}

std::string join_tokens(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

std::vector<DialogueSample> derive_samples(const Conversation& conversation) {
  std::vector<DialogueSample> out;
  for (std::size_t j = 1; j < conversation.turns.size(); ++j) {
    const auto& turn = conversation.turns[j];
    if (turn.role != Role::kListener || tokenize(turn.utterance).empty()) continue;
    DialogueSample s;
    s.turns.assign(conversation.turns.begin(), conversation.turns.begin() + static_cast<long>(j));
    s.emotion = conversation.emotion;
    s.target = turn.utterance;
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

struct Record {
  long turn_index;
  Turn turn;
};

Role parse_role(std::string role, std::size_t line_no) {
  std::transform(role.begin(), role.end(), role.begin(), [](unsigned char c) { return std::tolower(c); });
  if (role == "speaker") return Role::kSpeaker;
  if (role == "listener") return Role::kListener;
  throw SchemaError("line " + std::to_string(line_no) + ": unknown role '" + role + "'");
}

}  // namespace

LoadResult load_dataset(const std::filesystem::path& path, Split split, std::span<const std::string> labels) {
  std::filesystem::path file = path;
  if (std::filesystem::is_directory(path)) file = path / (std::string(split_name(split)) + ".jsonl");
  std::ifstream in(file);
  if (!in) throw IoError("cannot open dataset file " + file.string());

  std::map<std::string, int> label_index;
  for (std::size_t k = 0; k < labels.size(); ++k) label_index[labels[k]] = static_cast<int>(k);

  std::vector<std::string> order;
  std::map<std::string, std::pair<int, std::vector<Record>>> grouped;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError("line " + std::to_string(line_no) + ": " + e.what());
    }
    for (const char* key : {"conv_id", "turn_index", "role", "utterance", "emotion_label"})
      if (!rec.contains(key))
        throw SchemaError("line " + std::to_string(line_no) + ": missing field '" + key + "'");

    const std::string label = rec["emotion_label"].get<std::string>();
    auto it = label_index.find(label);
    if (it == label_index.end())
      throw SchemaError("line " + std::to_string(line_no) + ": unknown emotion label '" + label + "'");
    std::string conv_id =
        rec["conv_id"].is_string() ? rec["conv_id"].get<std::string>() : rec["conv_id"].dump();

    auto [slot, inserted] = grouped.try_emplace(conv_id, it->second, std::vector<Record>{});
    if (inserted) order.push_back(conv_id);
    slot->second.second.push_back(
        {rec["turn_index"].get<long>(),
         Turn{parse_role(rec["role"].get<std::string>(), line_no), rec["utterance"].get<std::string>()}});
  }

  LoadResult result;
  for (const auto& id : order) {
    auto& [emotion, records] = grouped[id];
    std::stable_sort(records.begin(), records.end(),
                     [](const Record& a, const Record& b) { return a.turn_index < b.turn_index; });
    Conversation conv{id, emotion, {}};
    for (auto& r : records) conv.turns.push_back(std::move(r.turn));
    if (conv.turns.front().role != Role::kSpeaker)
      throw SchemaError("conversation '" + id + "' does not open with a speaker turn");
    auto samples = derive_samples(conv);
    if (samples.empty()) {
      ++result.skipped_conversations;
      continue;
    }
    for (auto& s : samples) result.samples.push_back(std::move(s));
  }
  return result;
}

void write_dataset(const std::filesystem::path& file, std::span<const Conversation> conversations,
                   std::span<const std::string> labels) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write dataset file " + file.string());
  for (const auto& conv : conversations) {
    for (std::size_t t = 0; t < conv.turns.size(); ++t) {
      nlohmann::ordered_json rec;
      rec["conv_id"] = conv.id;
      rec["turn_index"] = t;
      rec["role"] = conv.turns[t].role == Role::kSpeaker ? "speaker" : "listener";
      rec["utterance"] = conv.turns[t].utterance;
      rec["emotion_label"] = labels[static_cast<std::size_t>(conv.emotion)];
      out << rec.dump() << '\n';
    }
  }
  if (!out) throw IoError("write failed for " + file.string());
}

// ---------------------------------------------------------------- Vocab

Vocab::Vocab() {
  for (const char* t : {"<pad>", "<unk>", "<sos>", "<eos>", "<qry>"}) add(t);
}

int Vocab::add(const std::string& token) {
  auto it = index_.find(token);
  if (it != index_.end()) return it->second;
  const int id = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
  index_.emplace(token, id);
  return id;
}

int Vocab::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw std::out_of_range("vocab id " + std::to_string(id));
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocab::encode(std::span<const std::string> tokens) const {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

std::vector<std::string> Vocab::decode(std::span<const int> ids) const {
  std::vector<std::string> out;
  for (int id : ids) {
    if (id == kEos) break;
    if (id == kPad || id == kSos) continue;
    out.push_back(token(id));
  }
  return out;
}

void Vocab::save(const std::filesystem::path& file) const {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write vocab " + file.string());
  for (const auto& t : tokens_) out << t << '\n';
}

Vocab Vocab::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open vocab " + file.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) tokens.push_back(line);
  return from_tokens(std::move(tokens));
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  Vocab v;
  if (tokens.size() < kReserved || !std::equal(v.tokens_.begin(), v.tokens_.end(), tokens.begin()))
    throw SchemaError("vocab does not start with the reserved tokens");
  for (std::size_t i = kReserved; i < tokens.size(); ++i) {
    if (v.contains(tokens[i])) throw SchemaError("duplicate vocab token '" + tokens[i] + "'");
    v.add(tokens[i]);
  }
  return v;
}

Vocab build_vocab(std::span<const DialogueSample> samples, int min_freq) {
  if (min_freq < 1) throw std::invalid_argument("build_vocab: min_freq must be >= 1");
  std::map<std::string, std::size_t> freq;
  for (const auto& s : samples) {
    for (const auto& turn : s.turns)
      for (auto& t : tokenize(turn.utterance)) ++freq[t];
    for (auto& t : tokenize(s.target)) ++freq[t];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocab vocab;
  for (const auto& [token, count] : ranked)
    if (count >= static_cast<std::size_t>(min_freq)) vocab.add(token);
  return vocab;
}

// ---------------------------------------------------------------- encoding

EncodedSample encode_sample(const DialogueSample& sample, const Vocab& vocab, std::size_t max_ctx,
                            std::size_t max_resp, std::size_t* truncations) {
  if (max_ctx < 2) throw std::invalid_argument("encode_sample: max_ctx must be >= 2");
  if (max_resp < 1) throw std::invalid_argument("encode_sample: max_resp must be >= 1");
  EncodedSample enc;
  enc.emotion = sample.emotion;

  std::vector<int> ids, states;
  for (const auto& turn : sample.turns) {
    const int state = turn.role == Role::kSpeaker ? kSpeakerState : kListenerState;
    for (const auto& t : tokenize(turn.utterance)) {
      ids.push_back(vocab.id(t));
      states.push_back(state);
    }
  }
  const std::size_t budget = max_ctx - 1;
  std::size_t drop = 0;
  if (ids.size() > budget) {
    drop = ids.size() - budget;
    if (truncations) ++*truncations;
  }
  enc.ctx_ids.push_back(Vocab::kQry);
  enc.ctx_state_ids.push_back(kQueryState);
  enc.ctx_ids.insert(enc.ctx_ids.end(), ids.begin() + static_cast<long>(drop), ids.end());
  enc.ctx_state_ids.insert(enc.ctx_state_ids.end(), states.begin() + static_cast<long>(drop), states.end());

  auto target = vocab.encode(tokenize(sample.target));
  if (target.size() > max_resp - 1) {
    target.resize(max_resp - 1);
    if (truncations) ++*truncations;
  }
  enc.resp_in.push_back(Vocab::kSos);
  enc.resp_in.insert(enc.resp_in.end(), target.begin(), target.end());
  enc.resp_out = target;
  enc.resp_out.push_back(Vocab::kEos);
  return enc;
}

Batch collate(std::span<const EncodedSample> samples) {
  Batch b;
  b.size = samples.size();
  for (const auto& s : samples) {
    b.ctx_len = std::max(b.ctx_len, s.ctx_ids.size());
    b.resp_len = std::max(b.resp_len, s.resp_in.size());
  }
  b.ctx_ids.assign(b.size * b.ctx_len, Vocab::kPad);
  b.ctx_state_ids.assign(b.size * b.ctx_len, kSpeakerState);
  b.ctx_mask.assign(b.size * b.ctx_len, 0);
  b.resp_in.assign(b.size * b.resp_len, Vocab::kPad);
  b.resp_out.assign(b.size * b.resp_len, Vocab::kPad);
  b.resp_mask.assign(b.size * b.resp_len, 0);
  for (std::size_t r = 0; r < b.size; ++r) {
    const auto& s = samples[r];
    for (std::size_t t = 0; t < s.ctx_ids.size(); ++t) {
      b.ctx_ids[r * b.ctx_len + t] = s.ctx_ids[t];
      b.ctx_state_ids[r * b.ctx_len + t] = s.ctx_state_ids[t];
      b.ctx_mask[r * b.ctx_len + t] = 1;
    }
    for (std::size_t t = 0; t < s.resp_in.size(); ++t) {
      b.resp_in[r * b.resp_len + t] = s.resp_in[t];
      b.resp_out[r * b.resp_len + t] = s.resp_out[t];
      b.resp_mask[r * b.resp_len + t] = 1;
    }
    b.emotions.push_back(s.emotion);
  }
  return b;
}

// ---------------------------------------------------------------- synthetic

std::string style_marker(std::string_view emotion_name) { return "style_" + std::string(emotion_name); }

namespace {

constexpr std::size_t kCuesPerEmotion = 6;
// Share of conversations whose speaker cues belong to another emotion.
constexpr double kMismatchRate = 0.03;

const std::vector<std::string>& neutral_words() {
  static const std::vector<std::string> words = {"i",    "was",   "so",  "today", "my",   "friend", "the",
                                                 "at",   "work",  "it", "really", "felt", "when",   "we",
                                                 "home", "after", "a",  "long",   "day",  "about"};
  return words;
}

std::string cue_word(const std::string& emotion, std::size_t j) { return "cue_" + emotion + "_" + std::to_string(j); }

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

std::string speaker_utterance(const std::string& emotion, Rng& rng) {
  const auto& neutral = neutral_words();
  std::vector<std::string> words;
  const std::size_t cues = 2 + rng.below(2);
  std::vector<std::size_t> pick(kCuesPerEmotion);
  for (std::size_t j = 0; j < pick.size(); ++j) pick[j] = j;
  shuffle(pick, rng);
  for (std::size_t c = 0; c < cues; ++c) words.push_back(cue_word(emotion, pick[c]));
  const std::size_t filler = 3 + rng.below(4);
  for (std::size_t f = 0; f < filler; ++f) words.push_back(neutral[rng.below(neutral.size())]);
  shuffle(words, rng);
  return join_tokens(words);
}

std::string listener_utterance(const std::string& emotion, Rng& rng) {
  static const std::vector<std::string> openers = {"oh", "wow", "well", "hmm"};
  static const std::vector<std::string> endings = {".", "!"};
  std::vector<std::string> words = {openers[rng.below(openers.size())], ",", "that", "is", style_marker(emotion),
                                    endings[rng.below(endings.size())]};
  return join_tokens(words);
}

}  // namespace

std::vector<Conversation> gen_synthetic_conversations(std::size_t n_emotions, std::size_t n_samples,
                                                      std::uint64_t seed) {
  if (n_emotions < 2) throw std::invalid_argument("gen_synthetic: need at least 2 emotions");
  const auto labels = emotion_labels(n_emotions);
  Rng rng(seed);
  std::vector<Conversation> out;
  std::size_t produced = 0;
  while (produced < n_samples) {
    Conversation conv;
    conv.id = "synth:" + std::to_string(out.size());
    conv.emotion = static_cast<int>(rng.below(n_emotions));
    const auto& name = labels[static_cast<std::size_t>(conv.emotion)];
    std::string cue_owner = name;
    if (rng.bernoulli(kMismatchRate))
      cue_owner = labels[(static_cast<std::size_t>(conv.emotion) + 1 + rng.below(n_emotions - 1)) % n_emotions];
    const std::size_t exchanges = (n_samples - produced >= 2 && rng.bernoulli(0.5)) ? 2 : 1;
    for (std::size_t e = 0; e < exchanges; ++e) {
      conv.turns.push_back({Role::kSpeaker, speaker_utterance(cue_owner, rng)});
      conv.turns.push_back({Role::kListener, listener_utterance(name, rng)});
    }
    produced += exchanges;
    out.push_back(std::move(conv));
  }
  return out;
}

std::vector<DialogueSample> gen_synthetic(std::size_t n_emotions, std::size_t n_samples, std::uint64_t seed) {
  std::vector<DialogueSample> out;
  for (const auto& conv : gen_synthetic_conversations(n_emotions, n_samples, seed))
    for (auto& s : derive_samples(conv)) out.push_back(std::move(s));
  return out;
}

}  // namespace moel
