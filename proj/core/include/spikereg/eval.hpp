#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "spikereg/ctc.hpp"
#include "spikereg/similarity.hpp"
#include "spikereg/tensor.hpp"

namespace spikereg {

struct ErrorReport {
  std::size_t substitutions = 0;
  std::size_t insertions = 0;
  std::size_t deletions = 0;
  std::size_t reference_length = 0;

  std::size_t total_errors() const { return substitutions + insertions + deletions; }
  double error_rate() const;
  void merge(const ErrorReport& other);
};

// Minimal S+I+D alignment by dynamic programming; cost ties during the
// backtrace prefer substitution over insertion over deletion, so counts are
// deterministic.
ErrorReport edit_distance(const LabelSeq& ref, const LabelSeq& hyp);

// Mean squared distance of L2-normalized positive pairs; zero iff every pair
// coincides after normalization. Lower is better.
double alignment_metric(const std::vector<std::pair<std::vector<double>, std::vector<double>>>& pairs);

// log mean over distinct pairs of exp(-2 ||n_i - n_j||^2) on the unit
// sphere. Lower indicates a more uniform spread.
double uniformity_metric(const std::vector<std::vector<double>>& features);

struct SpikeHistogram {
  std::vector<double> bin_edges;      // bins+1 edges over [0, 1]
  std::vector<std::size_t> counts;    // per bin
  std::size_t total_spikes = 0;

  double mass_at_or_above(double lo) const;  // fraction of spikes with score >= lo
};

struct SpikeTraceEntry {
  std::string utt_id;
  std::size_t frame = 0;
  double neg_log_peak = 0.0;
  bool is_spike = false;
};

struct AnalysisReport {
  double alignment = 0.0;
  double uniformity = 0.0;
  bool has_pair_metrics = false;  // false when no spike pairs were available
  SpikeHistogram histogram;
  std::vector<SpikeTraceEntry> traces;
};

// Histogram of frame peak scores at spike frames plus per-frame negative-log
// traces, over a list of utterance posteriors.
AnalysisReport spike_histogram(const std::vector<CtcPosterior>& posteriors,
                               SpikeDetectionMode spike_mode, PeakScoreMode peak_mode,
                               std::size_t bins,
                               const std::vector<std::string>* utt_ids = nullptr);

// Report writers. JSON carries the scalar metrics; CSVs carry histogram and
// traces.
void write_json_report(const std::filesystem::path& path,
                       const std::map<std::string, double>& scalars);
void write_histogram_csv(const std::filesystem::path& path, const SpikeHistogram& hist);
void write_traces_csv(const std::filesystem::path& path,
                      const std::vector<SpikeTraceEntry>& traces);

}  // namespace spikereg
