#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "moel/config.hpp"
#include "moel/corpus.hpp"
#include "moel/model.hpp"
#include "moel/random.hpp"

namespace moel {

// gamma + (1 - gamma) * exp(-t / t_thd).
double epsilon_oracle(std::size_t step, double gamma, double t_thd);

// d_model^-0.5 * min(step^-0.5, step * warmup^-1.5). Throws for step 0.
double lr_schedule(std::size_t step, std::size_t d_model, std::size_t warmup);

// Adam with bias correction. Moments are kept per parameter, in ParamStore
// order.
class Adam {
 public:
  Adam() = default;
  Adam(double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // `t` is the 1-based update index used for bias correction.
  void step(ParamStore& params, double lr, std::size_t t);

  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

 private:
  double beta1_ = 0.9;
  double beta2_ = 0.98;
  double eps_ = 1e-9;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

struct TrainState {
  std::size_t step = 0;  // completed updates
  Adam optimizer;
  Rng rng;
  double eps_oracle = 1.0;  // value used by the most recent step
  double best_accuracy = -1.0;
  double best_l2 = std::numeric_limits<double>::infinity();
  std::size_t best_step = 0;
};

TrainState make_train_state(const TrainConfig& config);

struct StepMetrics {
  std::size_t step = 0;
  double loss = 0.0;
  double l1 = 0.0;
  double l2 = 0.0;
  double grad_norm = 0.0;  // before clipping
  double eps_oracle = 0.0;
  double lr = 0.0;
  std::size_t l1_clamped = 0;
  std::size_t oracle_rows = 0;

  std::string to_json() const;
  bool operator==(const StepMetrics&) const = default;
};

// Forward, backward, clip, Adam update. Throws NumericError (naming the
// batch's sample ids when given) if the loss is not finite.
StepMetrics train_step(Model& model, TrainState& state, const Batch& batch, const Config& config,
                       std::span<const std::size_t> sample_ids = {});

// ------------------------------------------------------------- checkpoints

// Binary layout (little-endian): magic "MOELCKPT", u32 version, config text,
// vocab tokens, labels, step, oracle eps, best metrics, rng state, then per
// parameter: name, shape, values, Adam m, Adam v.
void save_checkpoint(const std::filesystem::path& file, const Config& config, const Vocab& vocab,
                     const Model& model, const TrainState& state);

struct Checkpoint {
  Config config;
  Vocab vocab;
  Model model;
  TrainState state;
};

Checkpoint load_checkpoint(const std::filesystem::path& file);

// ------------------------------------------------------------- fit

struct DataSplits {
  std::vector<DialogueSample> train;
  std::vector<DialogueSample> valid;
  std::vector<DialogueSample> test;
};

// Splits a sample list by position: the last `test_fraction` are test, the
// `valid_fraction` before them validation.
DataSplits split_samples(std::vector<DialogueSample> samples, double valid_fraction, double test_fraction);

struct EvalReport;

struct EpochReport {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double accuracy = 0.0;  // top-1 emotion accuracy (0 for TRS)
  double l2 = 0.0;
  double perplexity = 0.0;
  bool best = false;
};

struct FitOptions {
  std::optional<std::filesystem::path> resume_from;
  // Stop (and write last.ckpt) once this many total steps are done.
  std::optional<std::size_t> stop_at;
  std::ostream* log = nullptr;  // progress lines; null = silent
  bool final_test = true;
};

struct FitResult {
  std::vector<StepMetrics> metrics;  // steps run by this call
  std::vector<EpochReport> epochs;
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
  std::filesystem::path metrics_log;
  Vocab vocab;
  std::optional<double> test_accuracy;
  std::optional<double> test_l2;
};

// Trains for config.train.steps updates, validating at each epoch boundary
// and keeping the best checkpoint (top-1 accuracy, then lower L2). Writes
// vocab.txt, metrics.jsonl, best.ckpt and last.ckpt into out_dir.
FitResult fit(const Config& config, const DataSplits& data, const FitOptions& options = {});

}  // namespace moel
