#include "moel/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "moel/evaluation.hpp"

namespace moel {

double epsilon_oracle(std::size_t step, double gamma, double t_thd) {
  return gamma + (1.0 - gamma) * std::exp(-static_cast<double>(step) / t_thd);
}

double lr_schedule(std::size_t step, std::size_t d_model, std::size_t warmup) {
  if (step == 0) throw std::invalid_argument("lr_schedule: steps are counted from 1");
  if (warmup == 0) throw std::invalid_argument("lr_schedule: warmup must be positive");
  const double s = static_cast<double>(step);
  return std::pow(static_cast<double>(d_model), -0.5) *
         std::min(std::pow(s, -0.5), s * std::pow(static_cast<double>(warmup), -1.5));
}

void Adam::step(ParamStore& params, double lr, std::size_t t) {
  const auto& entries = params.entries();
  if (m_.size() != entries.size()) {
    m_.clear();
    v_.clear();
    for (const auto& [name, p] : entries) {
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
  }
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t));
  for (std::size_t k = 0; k < entries.size(); ++k) {
    Var p = entries[k].second;
    auto value = p.mutable_value();
    auto grad = p.grad();
    if (grad.size() != value.size()) continue;
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < value.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * grad[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * grad[i] * grad[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      value[i] -= lr * m_hat / (std::sqrt(v_hat) + eps_);
    }
  }
}

TrainState make_train_state(const TrainConfig& config) {
  TrainState state;
  state.optimizer = Adam(config.adam_beta1, config.adam_beta2, config.adam_eps);
  state.rng = Rng(derive_seed(config.seed, 2));
  return state;
}

std::string StepMetrics::to_json() const {
  nlohmann::ordered_json j;
  j["step"] = step;
  j["loss"] = loss;
  j["l1"] = l1;
  j["l2"] = l2;
  j["grad_norm"] = grad_norm;
  j["eps_oracle"] = eps_oracle;
  j["lr"] = lr;
  j["l1_clamped"] = l1_clamped;
  j["oracle_rows"] = oracle_rows;
  return j.dump();
}

StepMetrics train_step(Model& model, TrainState& state, const Batch& batch, const Config& config,
                       std::span<const std::size_t> sample_ids) {
  const auto& tc = config.train;
  StepMetrics m;
  m.eps_oracle = epsilon_oracle(state.step, config.model.gamma, config.model.t_thd);
  m.lr = tc.lr_factor * lr_schedule(state.step + 1, config.model.d_model, tc.warmup);
  state.eps_oracle = m.eps_oracle;

  model.params().zero_grad();
  ForwardOptions opts;
  opts.oracle_eps = m.eps_oracle;
  opts.rng = &state.rng;
  ForwardResult fr = model.forward(batch, opts);
  m.loss = fr.loss.item();
  m.l1 = fr.l1.item();
  m.l2 = fr.l2.item();
  m.l1_clamped = fr.l1_clamped;
  m.oracle_rows = static_cast<std::size_t>(std::count(fr.oracle_replaced.begin(), fr.oracle_replaced.end(), 1));
  if (!std::isfinite(m.loss)) {
    std::ostringstream os;
    os << "non-finite loss at step " << state.step + 1 << " (L1=" << m.l1 << ", L2=" << m.l2 << "); batch samples:";
    for (auto id : sample_ids) os << ' ' << id;
    throw NumericError(os.str());
  }
  backward(fr.loss);

  double sq = 0.0;
  for (const auto& [name, p] : model.params().entries())
    for (double g : p.grad()) sq += g * g;
  m.grad_norm = std::sqrt(sq);
  if (tc.clip_norm > 0.0 && m.grad_norm > tc.clip_norm) {
    const double s = tc.clip_norm / m.grad_norm;
    for (auto& [name, p] : model.params().entries()) {
      // grads live on the node; scale in place
      for (double& g : p.node()->grad) g *= s;
    }
  }

  state.optimizer.step(model.params(), m.lr, state.step + 1);
  ++state.step;
  m.step = state.step;
  return m;
}

// ------------------------------------------------------------- checkpoints

namespace {

constexpr char kMagic[8] = {'M', 'O', 'E', 'L', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}
  template <typename T>
  void pod(const T& v) {
    os_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    os_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void doubles(const std::vector<double>& v) {
    pod<std::uint64_t>(v.size());
    os_.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  }

 private:
  std::ostream& os_;
};

class Reader {
 public:
  Reader(std::istream& is, std::string origin) : is_(is), origin_(std::move(origin)) {}
  template <typename T>
  T pod() {
    T v{};
    is_.read(reinterpret_cast<char*>(&v), sizeof(T));
    check();
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    if (n > (1ULL << 32)) fail("implausible string length");
    std::string s(n, '\0');
    is_.read(s.data(), static_cast<std::streamsize>(n));
    check();
    return s;
  }
  std::vector<double> doubles() {
    const auto n = pod<std::uint64_t>();
    if (n > (1ULL << 34)) fail("implausible tensor size");
    std::vector<double> v(n);
    is_.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    check();
    return v;
  }
  [[noreturn]] void fail(const std::string& what) { throw SchemaError("checkpoint " + origin_ + ": " + what); }

 private:
  void check() {
    if (!is_) fail("truncated file");
  }
  std::istream& is_;
  std::string origin_;
};

std::string join_lines(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) out += s + '\n';
  return out;
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (c == '\n') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& file, const Config& config, const Vocab& vocab,
                     const Model& model, const TrainState& state) {
  const auto tmp = std::filesystem::path(file.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write checkpoint " + tmp.string());
    Writer w(os);
    os.write(kMagic, sizeof(kMagic));
    w.pod(kVersion);
    Config echo = config;
    echo.model = model.config();
    echo.train.out_dir.clear();  // run location, not part of the model
    w.str(echo.to_text());
    w.str(join_lines(vocab.tokens()));
    w.pod<std::uint64_t>(state.step);
    w.pod(state.eps_oracle);
    w.pod(state.best_accuracy);
    w.pod(state.best_l2);
    w.pod<std::uint64_t>(state.best_step);
    w.str(state.rng.state());

    const auto& entries = model.params().entries();
    const auto& m = state.optimizer.first_moments();
    const auto& v = state.optimizer.second_moments();
    w.pod<std::uint64_t>(entries.size());
    for (std::size_t k = 0; k < entries.size(); ++k) {
      const auto& [name, p] = entries[k];
      w.str(name);
      w.pod<std::uint64_t>(p.rank());
      for (auto d : p.shape()) w.pod<std::uint64_t>(d);
      w.doubles({p.value().begin(), p.value().end()});
      w.doubles(k < m.size() ? m[k] : std::vector<double>{});
      w.doubles(k < v.size() ? v[k] : std::vector<double>{});
    }
    if (!os) throw IoError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, file);
}

Checkpoint load_checkpoint(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + file.string());
  Reader r(is, file.string());
  char magic[sizeof(kMagic)];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) r.fail("not a moel checkpoint");
  if (r.pod<std::uint32_t>() != kVersion) r.fail("unsupported version");

  Config config = Config::parse(r.str());
  Vocab vocab = Vocab::from_tokens(split_lines(r.str()));
  if (config.model.vocab_size != vocab.size()) r.fail("vocab size disagrees with config");

  TrainState state = make_train_state(config.train);
  state.step = r.pod<std::uint64_t>();
  state.eps_oracle = r.pod<double>();
  state.best_accuracy = r.pod<double>();
  state.best_l2 = r.pod<double>();
  state.best_step = r.pod<std::uint64_t>();
  state.rng.set_state(r.str());

  Model model(config.model, derive_seed(config.train.seed, 0));
  const auto& entries = model.params().entries();
  const auto count = r.pod<std::uint64_t>();
  if (count != entries.size()) r.fail("parameter count mismatch");
  auto& m = state.optimizer.first_moments();
  auto& v = state.optimizer.second_moments();
  bool have_moments = true;
  for (std::size_t k = 0; k < count; ++k) {
    const auto& [name, p] = entries[k];
    if (r.str() != name) r.fail("parameter " + std::to_string(k) + " is not '" + name + "'");
    Shape shape(r.pod<std::uint64_t>());
    for (auto& d : shape) d = r.pod<std::uint64_t>();
    if (shape != p.shape()) r.fail("shape mismatch for '" + name + "'");
    auto values = r.doubles();
    if (values.size() != p.size()) r.fail("value count mismatch for '" + name + "'");
    Var target = p;
    std::copy(values.begin(), values.end(), target.mutable_value().begin());
    auto mk = r.doubles();
    auto vk = r.doubles();
    have_moments &= mk.size() == p.size() && vk.size() == p.size();
    m.push_back(std::move(mk));
    v.push_back(std::move(vk));
  }
  if (!have_moments) {
    m.clear();
    v.clear();
  }
  return Checkpoint{std::move(config), std::move(vocab), std::move(model), std::move(state)};
}

// ------------------------------------------------------------- fit

DataSplits split_samples(std::vector<DialogueSample> samples, double valid_fraction, double test_fraction) {
  const auto n = samples.size();
  const auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(n) * test_fraction));
  const auto n_valid = static_cast<std::size_t>(std::llround(static_cast<double>(n) * valid_fraction));
  if (n_test + n_valid > n) throw std::invalid_argument("split_samples: fractions exceed the data");
  DataSplits out;
  const auto train_end = n - n_test - n_valid;
  out.train.assign(samples.begin(), samples.begin() + static_cast<long>(train_end));
  out.valid.assign(samples.begin() + static_cast<long>(train_end), samples.begin() + static_cast<long>(n - n_test));
  out.test.assign(samples.begin() + static_cast<long>(n - n_test), samples.end());
  return out;
}

namespace {

std::vector<EncodedSample> encode_all(std::span<const DialogueSample> samples, const Vocab& vocab,
                                      const ModelConfig& mc) {
  std::vector<EncodedSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(encode_sample(s, vocab, mc.max_ctx, mc.max_resp));
  return out;
}

std::vector<std::size_t> turn_counts(std::span<const DialogueSample> samples) {
  std::vector<std::size_t> out;
  for (const auto& s : samples) out.push_back(s.turns.size());
  return out;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, 1, epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

}  // namespace

FitResult fit(const Config& config_in, const DataSplits& data, const FitOptions& options) {
  if (data.train.empty()) throw std::invalid_argument("fit: no training samples");
  const std::filesystem::path out_dir = config_in.train.out_dir;
  std::filesystem::create_directories(out_dir);

  Config config = config_in;
  FitResult result;
  result.best_checkpoint = out_dir / "best.ckpt";
  result.last_checkpoint = out_dir / "last.ckpt";
  result.metrics_log = out_dir / "metrics.jsonl";

  std::optional<Model> model;
  TrainState state;
  Vocab vocab;
  if (options.resume_from) {
    Checkpoint ck = load_checkpoint(*options.resume_from);
    vocab = std::move(ck.vocab);
    config.model = ck.model.config();
    model.emplace(std::move(ck.model));
    state = std::move(ck.state);
  } else {
    vocab = build_vocab(data.train, config.train.min_freq);
    config.model.vocab_size = vocab.size();
    model.emplace(config.model, derive_seed(config.train.seed, 0));
    if (!config.train.pretrained.empty()) {
      const auto found = load_pretrained_vectors(model->embeddings(), vocab, config.train.pretrained);
      if (options.log) *options.log << "pretrained vectors: " << found << " of " << vocab.size() << " tokens\n";
    }
    state = make_train_state(config.train);
  }
  result.vocab = vocab;
  vocab.save(out_dir / "vocab.txt");

  const auto train = encode_all(data.train, vocab, config.model);
  const auto valid = encode_all(data.valid, vocab, config.model);
  const auto valid_turns = turn_counts(data.valid);

  // Keep already-logged rows up to the resume point, then append.
  std::vector<std::string> kept;
  if (options.resume_from) {
    std::ifstream old(result.metrics_log);
    std::string line;
    while (kept.size() < state.step && std::getline(old, line)) kept.push_back(line);
  }
  std::ofstream log(result.metrics_log, std::ios::binary | std::ios::trunc);
  if (!log) throw IoError("cannot write metrics log " + result.metrics_log.string());
  for (const auto& line : kept) log << line << '\n';

  const auto bs = std::max<std::size_t>(1, config.train.batch_size);
  const auto per_epoch = (train.size() + bs - 1) / bs;
  const auto total = config.train.steps;
  const auto stop = std::min(total, options.stop_at.value_or(total));

  std::vector<std::size_t> order;
  std::size_t order_epoch = static_cast<std::size_t>(-1);
  while (state.step < stop) {
    const auto epoch = state.step / per_epoch;
    const auto pos = state.step % per_epoch;
    if (epoch != order_epoch) {
      order = epoch_order(train.size(), config.train.seed, epoch);
      order_epoch = epoch;
    }
    std::vector<EncodedSample> rows;
    std::vector<std::size_t> ids;
    for (std::size_t i = pos * bs; i < std::min(train.size(), (pos + 1) * bs); ++i) {
      rows.push_back(train[order[i]]);
      ids.push_back(order[i]);
    }
    const Batch batch = collate(rows);
    StepMetrics m = train_step(*model, state, batch, config, ids);
    log << m.to_json() << '\n';
    result.metrics.push_back(m);
    if (options.log && (m.step % 100 == 0 || m.step == 1))
      *options.log << "step " << m.step << " loss " << m.loss << " L1 " << m.l1 << " L2 " << m.l2 << " eps "
                   << m.eps_oracle << " lr " << m.lr << '\n';

    const bool epoch_end = state.step % per_epoch == 0 || state.step == total;
    if (epoch_end && !valid.empty()) {
      const EvalReport rep = evaluate(*model, valid, bs, valid_turns);
      EpochReport er;
      er.epoch = (state.step - 1) / per_epoch;
      er.step = state.step;
      er.accuracy = rep.top1;
      er.l2 = rep.l2;
      er.perplexity = rep.perplexity;
      er.best = rep.top1 > state.best_accuracy || (rep.top1 == state.best_accuracy && rep.l2 < state.best_l2);
      if (er.best) {
        state.best_accuracy = rep.top1;
        state.best_l2 = rep.l2;
        state.best_step = state.step;
        save_checkpoint(result.best_checkpoint, config, vocab, *model, state);
      }
      if (options.log)
        *options.log << "epoch " << er.epoch << " step " << er.step << " valid top1 " << er.accuracy << " L2 "
                     << er.l2 << " ppl " << er.perplexity << (er.best ? " *" : "") << '\n';
      result.epochs.push_back(er);
    }
  }
  log.flush();
  save_checkpoint(result.last_checkpoint, config, vocab, *model, state);
  if (valid.empty() && state.step == total) save_checkpoint(result.best_checkpoint, config, vocab, *model, state);

  if (options.final_test && state.step == total && !data.test.empty()) {
    Checkpoint best = load_checkpoint(std::filesystem::exists(result.best_checkpoint) ? result.best_checkpoint
                                                                                       : result.last_checkpoint);
    const auto test = encode_all(data.test, vocab, config.model);
    const EvalReport rep = evaluate(best.model, test, 1, turn_counts(data.test));
    result.test_accuracy = rep.top1;
    result.test_l2 = rep.l2;
    if (options.log) *options.log << "test top1 " << rep.top1 << " L2 " << rep.l2 << '\n';
  }
  return result;
}

}  // namespace moel
