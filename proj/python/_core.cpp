#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "moel/config.hpp"
#include "moel/corpus.hpp"
#include "moel/evaluation.hpp"
#include "moel/model.hpp"
#include "moel/training.hpp"

namespace py = pybind11;
using namespace moel;

namespace {

// Alternating speaker/listener utterances, speaker first.
std::vector<Turn> to_turns(const std::vector<std::string>& utterances) {
  std::vector<Turn> turns;
  for (std::size_t i = 0; i < utterances.size(); ++i)
    turns.push_back({i % 2 == 0 ? Role::kSpeaker : Role::kListener, utterances[i]});
  return turns;
}

py::dict sample_dict(const DialogueSample& s) {
  py::list turns;
  for (const auto& t : s.turns) turns.append(t.utterance);
  py::dict d;
  d["turns"] = turns;
  d["emotion"] = s.emotion;
  d["target"] = s.target;
  return d;
}

std::vector<std::vector<std::string>> tokenize_all(const std::vector<std::string>& lines) {
  std::vector<std::vector<std::string>> out;
  for (const auto& l : lines) out.push_back(tokenize(l));
  return out;
}

py::dict report_dict(const EvalReport& r) {
  py::dict d;
  d["samples"] = r.samples;
  d["top1"] = r.top1;
  d["top3"] = r.top3;
  d["top5"] = r.top5;
  d["l2"] = r.l2;
  d["perplexity"] = r.perplexity;
  return d;
}

class PyCheckpoint {
 public:
  explicit PyCheckpoint(const std::filesystem::path& path) : ck_(load_checkpoint(path)) {}

  std::string kind() const { return model_kind_name(ck_.model.kind()); }
  const std::vector<std::string>& emotions() const { return ck_.config.emotions; }
  std::size_t num_params() const { return count_params(ck_.model); }
  std::size_t step() const { return ck_.state.step; }
  std::string config_text() const { return ck_.config.to_text(); }

  std::string respond(const std::vector<std::string>& utterances, std::size_t max_len) const {
    return greedy_decode(ctx(), to_turns(utterances), max_len).trace.response;
  }

  std::string force(const std::vector<std::string>& utterances, const py::object& listener,
                    std::size_t max_len) const {
    const auto turns = to_turns(utterances);
    if (py::isinstance<py::str>(listener)) {
      const auto name = listener.cast<std::string>();
      const auto& names = emotions();
      const auto it = std::find(names.begin(), names.end(), name);
      if (it == names.end()) throw py::value_error("unknown emotion '" + name + "'");
      return force_listener(ctx(), turns, static_cast<std::size_t>(it - names.begin()), max_len).trace.response;
    }
    if (py::isinstance<py::int_>(listener))
      return force_listener(ctx(), turns, listener.cast<std::size_t>(), max_len).trace.response;
    const auto mix = listener.cast<std::vector<double>>();
    return force_listener(ctx(), turns, mix, max_len).trace.response;
  }

  std::map<std::string, double> emotion_distribution(const std::vector<std::string>& utterances) const {
    const auto d = greedy_decode(ctx(), to_turns(utterances), 1);
    std::map<std::string, double> out;
    for (std::size_t i = 0; i < d.trace.p.size(); ++i) out[emotions()[i]] = d.trace.p[i];
    return out;
  }

  py::dict evaluate_path(const std::filesystem::path& data, bool generate, std::size_t max_len) const {
    const auto samples = load_dataset(data, Split::kTest, emotions()).samples;
    std::vector<EncodedSample> enc;
    for (const auto& s : samples)
      enc.push_back(encode_sample(s, ck_.vocab, ck_.model.config().max_ctx, ck_.model.config().max_resp));
    py::dict d = report_dict(evaluate(ck_.model, enc, ck_.config.train.batch_size));
    if (generate) {
      const auto gen = generate_all(ctx(), samples, max_len);
      d["bleu"] = gen.bleu;
      d["marker_rate"] = gen.marker_rate;
    }
    return d;
  }

 private:
  DecodeContext ctx() const { return {ck_.model, ck_.vocab, ck_.config.emotions}; }
  Checkpoint ck_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Mixture of empathetic listeners: core bindings";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<SchemaError>(m, "SchemaError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("epsilon_oracle", &epsilon_oracle, py::arg("step"), py::arg("gamma") = 1e-3, py::arg("t_thd") = 1e4);
  m.def("lr_schedule", &lr_schedule, py::arg("step"), py::arg("d_model"), py::arg("warmup"));
  m.def("tokenize", [](const std::string& s) { return tokenize(s); });
  m.def("emotion_labels", &emotion_labels, py::arg("n") = 32);
  m.def("style_marker", [](const std::string& name) { return style_marker(name); });

  m.def(
      "corpus_bleu",
      [](const std::vector<std::string>& hyps, const std::vector<std::string>& refs) {
        return corpus_bleu(tokenize_all(hyps), tokenize_all(refs));
      },
      py::arg("hypotheses"), py::arg("references"));
  m.def(
      "topk_accuracy",
      [](const std::vector<std::vector<double>>& probs, const std::vector<int>& gold, std::size_t k) {
        if (probs.size() != gold.size()) throw py::value_error("probs and gold differ in length");
        std::vector<EmotionPrediction> rows;
        for (std::size_t i = 0; i < probs.size(); ++i) rows.push_back({probs[i], gold[i]});
        return topk_accuracy(rows, k);
      },
      py::arg("probs"), py::arg("gold"), py::arg("k"));

  m.def(
      "gen_synthetic",
      [](std::size_t n_emotions, std::size_t n_samples, std::uint64_t seed) {
        py::list out;
        for (const auto& s : gen_synthetic(n_emotions, n_samples, seed)) out.append(sample_dict(s));
        return out;
      },
      py::arg("n_emotions"), py::arg("n_samples"), py::arg("seed"));
  m.def(
      "write_synthetic",
      [](const std::filesystem::path& file, std::size_t n_emotions, std::size_t n_samples, std::uint64_t seed) {
        const auto convs = gen_synthetic_conversations(n_emotions, n_samples, seed);
        write_dataset(file, convs, emotion_labels(n_emotions));
        return convs.size();
      },
      py::arg("file"), py::arg("n_emotions"), py::arg("n_samples"), py::arg("seed"),
      "Write a synthetic corpus as one JSONL file; returns the conversation count.");

  m.def(
      "normalize_config", [](const std::string& text) { return Config::parse(text).to_text(); },
      py::arg("text"), "Parse key=value config text and return its canonical form.");
  m.def(
      "param_counts",
      [](const std::string& text) {
        const Config c = Config::parse(text);
        std::map<std::string, std::size_t> out;
        for (auto kind : {ModelKind::kTrs, ModelKind::kMultiTrs, ModelKind::kMoel})
          out[model_kind_name(kind)] = count_params(build_model(kind, c.model, c.train.seed));
        return out;
      },
      py::arg("config_text"), "Parameter totals of all three architectures for a config with vocab_size set.");

  m.def(
      "train",
      [](const std::string& text, double valid_fraction, double test_fraction) {
        const Config c = Config::parse(text);
        if (c.train.data.empty()) throw ConfigError("config key 'data' is required");
        auto samples = load_dataset(c.train.data, Split::kTrain, c.emotions).samples;
        FitResult r;
        {
          py::gil_scoped_release release;
          r = fit(c, split_samples(std::move(samples), valid_fraction, test_fraction));
        }
        py::dict d;
        d["steps"] = r.metrics.size();
        d["final_loss"] = r.metrics.empty() ? py::object(py::none()) : py::cast(r.metrics.back().loss);
        d["best_checkpoint"] = r.best_checkpoint;
        d["last_checkpoint"] = r.last_checkpoint;
        d["metrics_log"] = r.metrics_log;
        d["test_accuracy"] = r.test_accuracy ? py::cast(*r.test_accuracy) : py::object(py::none());
        return d;
      },
      py::arg("config_text"), py::arg("valid_fraction") = 0.1, py::arg("test_fraction") = 0.1,
      "Train from config text; data is one JSONL file split by position.");

  py::class_<PyCheckpoint>(m, "Checkpoint")
      .def(py::init<const std::filesystem::path&>(), py::arg("path"))
      .def_property_readonly("kind", &PyCheckpoint::kind)
      .def_property_readonly("emotions", &PyCheckpoint::emotions)
      .def_property_readonly("num_params", &PyCheckpoint::num_params)
      .def_property_readonly("step", &PyCheckpoint::step)
      .def_property_readonly("config_text", &PyCheckpoint::config_text)
      .def("respond", &PyCheckpoint::respond, py::arg("turns"), py::arg("max_len") = 30,
           py::call_guard<py::gil_scoped_release>())
      .def("force", &PyCheckpoint::force, py::arg("turns"), py::arg("listener"), py::arg("max_len") = 30)
      .def("emotion_distribution", &PyCheckpoint::emotion_distribution, py::arg("turns"))
      .def("evaluate", &PyCheckpoint::evaluate_path, py::arg("data"), py::arg("generate") = true,
           py::arg("max_len") = 30);
}
