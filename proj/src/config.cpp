#include "moel/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "moel/corpus.hpp"
#include "moel/tensor.hpp"

namespace moel {

std::string model_kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::kTrs: return "trs";
    case ModelKind::kMultiTrs: return "multi_trs";
    case ModelKind::kMoel: return "moel";
  }
  return "moel";
}

ModelKind parse_model_kind(const std::string& name) {
  std::string s;
  for (char c : name) s.push_back(c == '-' ? '_' : static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (s == "trs") return ModelKind::kTrs;
  if (s == "multi_trs" || s == "multitrs") return ModelKind::kMultiTrs;
  if (s == "moel") return ModelKind::kMoel;
  throw ConfigError("unknown model kind '" + name + "' (expected trs, multi_trs or moel)");
}

void ModelConfig::validate() const {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("invalid config: ") + what);
  };
  need(d_model > 0 && d_model % 2 == 0, "d_model must be positive and even");
  need(n_heads > 0, "n_heads must be positive");
  need(head_dim > 0, "head_dim must be positive");
  need(enc_layers > 0, "enc_layers must be positive");
  need(kind != ModelKind::kTrs || trs_dec_layers > 0, "trs_dec_layers must be positive");
  need(kind != ModelKind::kMultiTrs || n_emotions > 0, "multi_trs needs n_emotions > 0");
  need(conv_filters > 0, "conv_filters must be positive");
  need(conv_width > 0 && conv_width % 2 == 1, "conv_width must be odd");
  need(alpha >= 0.0 && beta >= 0.0, "alpha and beta must be non-negative");
  need(gamma > 0.0 && gamma < 1.0, "gamma must lie in (0, 1)");
  need(t_thd > 0.0, "t_thd must be positive");
  need(max_ctx >= 2, "max_ctx must be >= 2");
  need(max_resp >= 1, "max_resp must be >= 1");
  need(vocab_size >= static_cast<std::size_t>(Vocab::kReserved), "vocab_size must cover the reserved tokens");
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc{} || ptr != end) throw ConfigError("config key '" + key + "': cannot parse '" + value + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "on") return true;
  if (value == "false" || value == "0" || value == "off") return false;
  throw ConfigError("config key '" + key + "': expected a boolean, got '" + value + "'");
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

using Setter = std::function<void(Config&, const std::string&, const std::string&)>;

template <typename T>
Setter model_field(T ModelConfig::*field) {
  return [field](Config& c, const std::string& k, const std::string& v) { c.model.*field = parse_number<T>(k, v); };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"model", [](Config& c, auto&, auto& v) { c.model.kind = parse_model_kind(v); }},
      {"n_emotions", model_field(&ModelConfig::n_emotions)},
      {"vocab_size", model_field(&ModelConfig::vocab_size)},
      {"d_model", model_field(&ModelConfig::d_model)},
      {"n_heads", model_field(&ModelConfig::n_heads)},
      {"head_dim", model_field(&ModelConfig::head_dim)},
      {"enc_layers", model_field(&ModelConfig::enc_layers)},
      {"trs_dec_layers", model_field(&ModelConfig::trs_dec_layers)},
      {"conv_filters", model_field(&ModelConfig::conv_filters)},
      {"conv_width", model_field(&ModelConfig::conv_width)},
      {"alpha", model_field(&ModelConfig::alpha)},
      {"beta", model_field(&ModelConfig::beta)},
      {"gamma", model_field(&ModelConfig::gamma)},
      {"t_thd", model_field(&ModelConfig::t_thd)},
      {"max_ctx", model_field(&ModelConfig::max_ctx)},
      {"max_resp", model_field(&ModelConfig::max_resp)},
      {"scale_embedding", [](Config& c, auto& k, auto& v) { c.model.scale_embedding = parse_bool(k, v); }},
      {"embedding_init_std", model_field(&ModelConfig::embedding_init_std)},
      {"layer_norm_eps", model_field(&ModelConfig::layer_norm_eps)},
      {"seed", [](Config& c, auto& k, auto& v) { c.train.seed = parse_number<std::uint64_t>(k, v); }},
      {"batch_size", [](Config& c, auto& k, auto& v) { c.train.batch_size = parse_number<std::size_t>(k, v); }},
      {"steps", [](Config& c, auto& k, auto& v) { c.train.steps = parse_number<std::size_t>(k, v); }},
      {"warmup", [](Config& c, auto& k, auto& v) { c.train.warmup = parse_number<std::size_t>(k, v); }},
      {"lr_factor", [](Config& c, auto& k, auto& v) { c.train.lr_factor = parse_number<double>(k, v); }},
      {"adam_beta1", [](Config& c, auto& k, auto& v) { c.train.adam_beta1 = parse_number<double>(k, v); }},
      {"adam_beta2", [](Config& c, auto& k, auto& v) { c.train.adam_beta2 = parse_number<double>(k, v); }},
      {"adam_eps", [](Config& c, auto& k, auto& v) { c.train.adam_eps = parse_number<double>(k, v); }},
      {"clip_norm", [](Config& c, auto& k, auto& v) { c.train.clip_norm = parse_number<double>(k, v); }},
      {"min_freq", [](Config& c, auto& k, auto& v) { c.train.min_freq = parse_number<int>(k, v); }},
      {"max_decode_len",
       [](Config& c, auto& k, auto& v) { c.train.max_decode_len = parse_number<std::size_t>(k, v); }},
      {"data", [](Config& c, auto&, auto& v) { c.train.data = v; }},
      {"out_dir", [](Config& c, auto&, auto& v) { c.train.out_dir = v; }},
      {"pretrained", [](Config& c, auto&, auto& v) { c.train.pretrained = v; }},
      {"emotions",
       [](Config& c, auto&, auto& v) {
         c.emotions.clear();
         std::stringstream ss(v);
         std::string item;
         while (std::getline(ss, item, ',')) {
           item = trim(item);
           if (!item.empty()) c.emotions.push_back(item);
         }
       }},
  };
  return table;
}

}  // namespace

Config Config::parse(const std::string& text) {
  Config cfg;
  bool n_given = false;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    it->second(cfg, key, value);
    n_given |= key == "n_emotions";
  }
  if (cfg.emotions.empty()) {
    cfg.emotions = emotion_labels(cfg.model.n_emotions);
  } else if (!n_given) {
    cfg.model.n_emotions = cfg.emotions.size();
  } else if (cfg.emotions.size() != cfg.model.n_emotions) {
    throw ConfigError("config: n_emotions = " + std::to_string(cfg.model.n_emotions) + " but " +
                      std::to_string(cfg.emotions.size()) + " emotion names given");
  }
  return cfg;
}

Config Config::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open config " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string Config::to_text() const {
  std::ostringstream os;
  const auto& m = model;
  os << "model = " << model_kind_name(m.kind) << '\n'
     << "n_emotions = " << m.n_emotions << '\n'
     << "vocab_size = " << m.vocab_size << '\n'
     << "d_model = " << m.d_model << '\n'
     << "n_heads = " << m.n_heads << '\n'
     << "head_dim = " << m.head_dim << '\n'
     << "enc_layers = " << m.enc_layers << '\n'
     << "trs_dec_layers = " << m.trs_dec_layers << '\n'
     << "conv_filters = " << m.conv_filters << '\n'
     << "conv_width = " << m.conv_width << '\n'
     << "alpha = " << fmt_double(m.alpha) << '\n'
     << "beta = " << fmt_double(m.beta) << '\n'
     << "gamma = " << fmt_double(m.gamma) << '\n'
     << "t_thd = " << fmt_double(m.t_thd) << '\n'
     << "max_ctx = " << m.max_ctx << '\n'
     << "max_resp = " << m.max_resp << '\n'
     << "scale_embedding = " << (m.scale_embedding ? "true" : "false") << '\n'
     << "embedding_init_std = " << fmt_double(m.embedding_init_std) << '\n'
     << "layer_norm_eps = " << fmt_double(m.layer_norm_eps) << '\n'
     << "seed = " << train.seed << '\n'
     << "batch_size = " << train.batch_size << '\n'
     << "steps = " << train.steps << '\n'
     << "warmup = " << train.warmup << '\n'
     << "lr_factor = " << fmt_double(train.lr_factor) << '\n'
     << "adam_beta1 = " << fmt_double(train.adam_beta1) << '\n'
     << "adam_beta2 = " << fmt_double(train.adam_beta2) << '\n'
     << "adam_eps = " << fmt_double(train.adam_eps) << '\n'
     << "clip_norm = " << fmt_double(train.clip_norm) << '\n'
     << "min_freq = " << train.min_freq << '\n'
     << "max_decode_len = " << train.max_decode_len << '\n';
  if (!train.data.empty()) os << "data = " << train.data << '\n';
  os << "out_dir = " << train.out_dir << '\n';
  if (!train.pretrained.empty()) os << "pretrained = " << train.pretrained << '\n';
  os << "emotions = ";
  for (std::size_t i = 0; i < emotions.size(); ++i) os << (i ? "," : "") << emotions[i];
  os << '\n';
  return os.str();
}

}  // namespace moel
