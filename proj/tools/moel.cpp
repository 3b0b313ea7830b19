#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "moel/config.hpp"
#include "moel/corpus.hpp"
#include "moel/evaluation.hpp"
#include "moel/model.hpp"
#include "moel/training.hpp"

namespace fs = std::filesystem;
using namespace moel;

namespace {

// A directory holds train/valid/test.jsonl; a single file is split by
// position into 80/10/10.
DataSplits load_splits(const Config& config, std::size_t* skipped) {
  const fs::path data = config.train.data;
  if (data.empty()) throw ConfigError("config key 'data' is required for training");
  auto load = [&](Split s) {
    auto r = load_dataset(data, s, config.emotions);
    *skipped += r.skipped_conversations;
    return std::move(r.samples);
  };
  if (fs::is_directory(data)) {
    DataSplits out;
    out.train = load(Split::kTrain);
    if (fs::exists(data / "valid.jsonl")) out.valid = load(Split::kValid);
    if (fs::exists(data / "test.jsonl")) out.test = load(Split::kTest);
    return out;
  }
  return split_samples(load(Split::kTrain), 0.1, 0.1);
}

std::vector<DialogueSample> load_eval_samples(const fs::path& data, const std::vector<std::string>& labels) {
  auto r = load_dataset(data, Split::kTest, labels);
  if (r.skipped_conversations > 0)
    std::cerr << "skipped " << r.skipped_conversations << " malformed conversations\n";
  return std::move(r.samples);
}

int cmd_train(const std::string& config_path, bool quiet) {
  const Config config = Config::load(config_path);
  std::size_t skipped = 0;
  const DataSplits splits = load_splits(config, &skipped);
  if (skipped > 0) std::cerr << "skipped " << skipped << " malformed conversations\n";
  std::cout << "samples: train " << splits.train.size() << ", valid " << splits.valid.size() << ", test "
            << splits.test.size() << '\n';
  FitOptions options;
  options.log = quiet ? nullptr : &std::cout;
  const FitResult result = fit(config, splits, options);
  std::cout << "best checkpoint: " << result.best_checkpoint.string() << '\n';
  if (result.test_accuracy)
    std::cout << "test top1 " << *result.test_accuracy << " L2 " << *result.test_l2 << '\n';
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data, std::size_t max_len, bool generate) {
  const Checkpoint ck = load_checkpoint(ckpt_path);
  const auto samples = load_eval_samples(data, ck.config.emotions);
  if (samples.empty()) throw SchemaError("no samples in " + data);
  std::vector<EncodedSample> encoded;
  std::vector<std::size_t> turns;
  for (const auto& s : samples) {
    encoded.push_back(encode_sample(s, ck.vocab, ck.model.config().max_ctx, ck.model.config().max_resp));
    turns.push_back(s.turns.size());
  }
  const EvalReport rep = evaluate(ck.model, encoded, ck.config.train.batch_size, turns);
  std::cout << std::setprecision(6) << "samples     " << rep.samples << '\n';
  if (!rep.predictions.empty()) {
    std::cout << "top1        " << rep.top1 << "\ntop3        " << rep.top3 << "\ntop5        " << rep.top5 << '\n';
    for (const auto& [t, acc] : rep.accuracy_by_turns)
      std::cout << "top1 @ " << t << " turns (" << acc.first << ")  " << acc.second << '\n';
  }
  std::cout << "L2          " << rep.l2 << "\nperplexity  " << rep.perplexity << '\n';
  if (generate) {
    const DecodeContext ctx{ck.model, ck.vocab, ck.config.emotions};
    const GenerationReport gen = generate_all(ctx, samples, max_len);
    std::cout << "bleu        " << gen.bleu << "\nmarker rate " << gen.marker_rate << '\n';
  }
  return 0;
}

int cmd_chat(const std::string& ckpt_path, std::size_t max_len) {
  const Checkpoint ck = load_checkpoint(ckpt_path);
  const DecodeContext ctx{ck.model, ck.vocab, ck.config.emotions};
  ChatOptions options;
  options.max_len = max_len;
  run_chat(ctx, std::cin, std::cout, options);
  return 0;
}

int cmd_trace(const std::string& ckpt_path, const std::string& data, const std::string& out_dir, std::size_t limit,
              std::size_t max_len) {
  const Checkpoint ck = load_checkpoint(ckpt_path);
  const auto samples = load_eval_samples(data, ck.config.emotions);
  const DecodeContext ctx{ck.model, ck.vocab, ck.config.emotions};
  fs::create_directories(out_dir);
  const auto count = std::min(limit, samples.size());
  for (std::size_t i = 0; i < count; ++i) {
    const Decoded d = greedy_decode(ctx, samples[i].turns, max_len, true);
    std::ostringstream name;
    name << "trace_" << std::setw(5) << std::setfill('0') << i << ".txt";
    export_trace(d.trace, fs::path(out_dir) / name.str());
  }
  std::cout << "wrote " << count << " traces to " << out_dir << '\n';
  return 0;
}

int cmd_synth(const std::string& out, std::size_t emotions, std::size_t samples, std::uint64_t seed) {
  const auto labels = emotion_labels(emotions);
  const auto convs = gen_synthetic_conversations(emotions, samples, seed);
  const auto n = convs.size();
  const auto n_test = n / 10;
  const auto n_valid = n / 10;
  const auto train_end = n - n_test - n_valid;
  const std::span<const Conversation> all(convs);
  fs::create_directories(out);
  write_dataset(fs::path(out) / "train.jsonl", all.subspan(0, train_end), labels);
  write_dataset(fs::path(out) / "valid.jsonl", all.subspan(train_end, n_valid), labels);
  write_dataset(fs::path(out) / "test.jsonl", all.subspan(train_end + n_valid), labels);
  std::cout << "wrote " << n << " conversations (" << samples << " samples) to " << out << '\n';
  return 0;
}

int cmd_params(const std::string& config_path, bool all_kinds) {
  Config config = Config::load(config_path);
  if (config.model.vocab_size == 0) {
    if (config.train.data.empty()) throw ConfigError("params needs vocab_size or data in the config");
    std::size_t skipped = 0;
    const auto splits = load_splits(config, &skipped);
    config.model.vocab_size = build_vocab(splits.train, config.train.min_freq).size();
  }
  std::vector<ModelKind> kinds{config.model.kind};
  if (all_kinds) kinds = {ModelKind::kTrs, ModelKind::kMultiTrs, ModelKind::kMoel};
  for (auto kind : kinds) {
    const Model model = build_model(kind, config.model, config.train.seed);
    std::cout << model_kind_name(kind) << " (|V| = " << config.model.vocab_size << ")\n"
              << param_report(model).table() << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MoEL: mixture of empathetic listeners"};
  app.require_subcommand(1);

  std::string config_path, ckpt, data, out;
  std::size_t max_len = 30;
  bool quiet = false;

  auto* train = app.add_subcommand("train", "train a model from a key=value config");
  train->add_option("config", config_path)->required();
  train->add_flag("--quiet", quiet, "only print the summary");

  bool generate = true;
  auto* eval = app.add_subcommand("eval", "score a checkpoint on a dataset (test split of a directory)");
  eval->add_option("checkpoint", ckpt)->required();
  eval->add_option("data", data)->required();
  eval->add_option("--max-len", max_len, "decode length limit")->capture_default_str();
  eval->add_flag("!--no-generate", generate, "skip greedy decoding and BLEU");

  auto* chat = app.add_subcommand("chat", "interactive chat");
  chat->add_option("checkpoint", ckpt)->required();
  chat->add_option("--max-len", max_len, "decode length limit")->capture_default_str();

  std::size_t limit = 100;
  auto* trace = app.add_subcommand("trace", "export emotion distributions and attention per context");
  trace->add_option("checkpoint", ckpt)->required();
  trace->add_option("data", data)->required();
  trace->add_option("out-dir", out)->required();
  trace->add_option("--limit", limit, "contexts to trace")->capture_default_str();
  trace->add_option("--max-len", max_len, "decode length limit")->capture_default_str();

  std::size_t emotions = 4, samples = 2000;
  std::uint64_t seed = 7;
  auto* synth = app.add_subcommand("synth", "write a synthetic corpus directory");
  synth->add_option("out", out)->required();
  synth->add_option("--emotions", emotions, "emotion count")->capture_default_str();
  synth->add_option("--samples", samples, "sample count")->capture_default_str();
  synth->add_option("--seed", seed, "generator seed")->capture_default_str();

  bool all_kinds = false;
  auto* params = app.add_subcommand("params", "per-component parameter counts");
  params->add_option("config", config_path)->required();
  params->add_flag("--all", all_kinds, "report trs, multi_trs and moel");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return cmd_train(config_path, quiet);
    if (*eval) return cmd_eval(ckpt, data, max_len, generate);
    if (*chat) return cmd_chat(ckpt, max_len);
    if (*trace) return cmd_trace(ckpt, data, out, limit, max_len);
    if (*synth) return cmd_synth(out, emotions, samples, seed);
    if (*params) return cmd_params(config_path, all_kinds);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
