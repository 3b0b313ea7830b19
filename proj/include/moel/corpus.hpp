#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace moel {

struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Role { kSpeaker, kListener };

struct Turn {
  Role role = Role::kSpeaker;
  std::string utterance;

  bool operator==(const Turn&) const = default;
};

// A context (oldest turn first) and the listener reply to generate.
struct DialogueSample {
  std::vector<Turn> turns;
  int emotion = 0;
  std::string target;

  bool operator==(const DialogueSample&) const = default;
};

struct Conversation {
  std::string id;
  int emotion = 0;
  std::vector<Turn> turns;
};

enum class Split { kTrain, kValid, kTest };

std::string_view split_name(Split split);
Split parse_split(std::string_view name);

// The 32 situation labels of the empathetic-dialogues corpus, in its
// alphabetical order.
const std::vector<std::string>& default_emotion_labels();
// First n default labels, or "emotion_<k>" names past 32.
std::vector<std::string> emotion_labels(std::size_t n);

// Lowercased whitespace tokens. Each "_comma_" escape, glued to a word or
// not, becomes its own "," token.
std::vector<std::string> tokenize(std::string_view text);
std::string join_tokens(std::span<const std::string> tokens);

struct LoadResult {
  std::vector<DialogueSample> samples;
  std::size_t skipped_conversations = 0;  // no listener turn
};

// Reads line-delimited JSON records {conv_id, turn_index, role, utterance,
// emotion_label}. A directory path resolves to "<dir>/<split>.jsonl"; a file
// path is read as-is.
LoadResult load_dataset(const std::filesystem::path& path, Split split, std::span<const std::string> labels);

// One sample per listener turn: the context is every earlier turn.
std::vector<DialogueSample> derive_samples(const Conversation& conversation);

void write_dataset(const std::filesystem::path& file, std::span<const Conversation> conversations,
                   std::span<const std::string> labels);

class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kSos = 2;
  static constexpr int kEos = 3;
  static constexpr int kQry = 4;
  static constexpr int kReserved = 5;

  Vocab();

  int add(const std::string& token);
  int id(const std::string& token) const;
  const std::string& token(int id) const;
  bool contains(const std::string& token) const { return index_.count(token) > 0; }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<int> encode(std::span<const std::string> tokens) const;
  // Stops at EOS and drops PAD/SOS.
  std::vector<std::string> decode(std::span<const int> ids) const;

  void save(const std::filesystem::path& file) const;
  static Vocab load(const std::filesystem::path& file);
  static Vocab from_tokens(std::vector<std::string> tokens);

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// Tokens with frequency >= min_freq, most frequent first (ties by token).
Vocab build_vocab(std::span<const DialogueSample> samples, int min_freq);

enum DialogueState : int { kSpeakerState = 0, kListenerState = 1, kQueryState = 2 };
inline constexpr int kDialogueStates = 3;

struct EncodedSample {
  std::vector<int> ctx_ids;        // QRY first
  std::vector<int> ctx_state_ids;  // DialogueState per position
  std::vector<int> resp_in;        // SOS + target
  std::vector<int> resp_out;       // target + EOS
  int emotion = 0;
};

// Contexts keep their newest tokens (QRY stays at 0); responses keep their
// first tokens. Each truncation bumps *truncations when given.
EncodedSample encode_sample(const DialogueSample& sample, const Vocab& vocab, std::size_t max_ctx,
                            std::size_t max_resp, std::size_t* truncations = nullptr);

// Padded, row-major batch. Masks are true on real tokens.
struct Batch {
  std::size_t size = 0;
  std::size_t ctx_len = 0;
  std::size_t resp_len = 0;
  std::vector<int> ctx_ids;
  std::vector<int> ctx_state_ids;
  std::vector<std::uint8_t> ctx_mask;
  std::vector<int> resp_in;
  std::vector<int> resp_out;
  std::vector<std::uint8_t> resp_mask;
  std::vector<int> emotions;
};

Batch collate(std::span<const EncodedSample> samples);

// Synthetic empathetic corpus. Speaker turns mix neutral filler with cue
// words owned by the conversation's emotion, except in a few percent of
// conversations where the cues belong to a different emotion; every
// listener turn carries the labelled emotion's style marker. Conversations are 2 or 4 turns and together
// yield exactly n_samples samples.
std::vector<Conversation> gen_synthetic_conversations(std::size_t n_emotions, std::size_t n_samples,
                                                      std::uint64_t seed);
std::vector<DialogueSample> gen_synthetic(std::size_t n_emotions, std::size_t n_samples, std::uint64_t seed);
std::string style_marker(std::string_view emotion_name);

}  // namespace moel
