#pragma once

#include <filesystem>
#include <vector>

#include "spikereg/config.hpp"
#include "spikereg/data.hpp"
#include "spikereg/eval.hpp"
#include "spikereg/model.hpp"

namespace spikereg {

struct StepRecord {
  std::size_t step = 0;  // 1-based, consecutive
  std::size_t epoch = 0;
  LossBreakdown losses;
  double lr = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  ErrorReport dev_errors;
};

struct TrainingLog {
  std::string preset;
  SeedConfig seeds;
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  // Wall clock is reported separately (timing.txt); the serialized log holds
  // only run-deterministic fields so identically seeded runs match byte for
  // byte.
  double wall_clock_seconds = 0.0;

  void write_jsonl(const std::filesystem::path& path) const;
  static TrainingLog read_jsonl(const std::filesystem::path& path);
};

// Entries N..2N-1 are exact copies of 0..N-1 (features, lengths, labels).
UttBatch make_siamese_batch(const UttBatch& batch);

// Adam with optional linear learning-rate warmup. step() consumes and zeroes
// the accumulated parameter gradients.
class Adam {
 public:
  Adam(std::map<std::string, Tensor>& params, OptimConfig cfg);
  void step();
  std::size_t steps_taken() const { return t_; }
  double last_lr() const { return last_lr_; }

 private:
  struct Slot {
    Tensor param;
    std::vector<double> m, v;
  };
  std::vector<Slot> slots_;
  OptimConfig cfg_;
  std::size_t t_ = 0;
  double last_lr_ = 0.0;
};

struct BatchLoss {
  Tensor total;  // tracked scalar when built under a live tape
  LossBreakdown breakdown;
};

// Full Siamese loss for a duplicated batch (2N entries, branch 2 = copies):
// per-branch CTC (and attention) losses averaged over utterances then over
// branches, plus lambda_eff times the spike-triggered similarity loss.
// Dropout streams derive from (seeds, step_index, utterance, branch) only.
BatchLoss siamese_batch_loss(const Model& model, const UttBatch& duplicated,
                             const ExperimentConfig& cfg, std::size_t step_index,
                             double lambda_eff);

struct TrainOutputs {
  TrainingLog log;
  std::filesystem::path checkpoint_path;
};

// Runs the training loop on corpus_dir and writes checkpoint.bin,
// train_log.jsonl, config.resolved and timing.txt under out_dir.
// Deterministic end to end for fixed seeds; aborts on non-finite loss.
TrainOutputs train(ExperimentConfig cfg, const std::filesystem::path& corpus_dir,
                   const std::filesystem::path& out_dir);

struct EvalOptions {
  std::size_t hist_bins = 10;
  std::uint64_t analysis_seed = 777;
  bool with_analysis = true;
};

struct EvalResult {
  ErrorReport errors;
  AnalysisReport analysis;
};

// Inference with dropout disabled: greedy decode + corpus-level error rate.
// The analysis part runs the two branches with dropout (fixed analysis
// streams) to pair spike-frame posteriors for alignment/uniformity, and
// histograms spikes of the inference posterior.
EvalResult evaluate(const Model& model, const ExperimentConfig& cfg, const CorpusSplit& split,
                    const EvalOptions& opts = {});

}  // namespace spikereg
