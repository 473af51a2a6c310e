#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spikereg/ctc.hpp"
#include "spikereg/tensor.hpp"

namespace spikereg {

enum class SimMetric { cosine, kl };
enum class SimTrigger { all_frames, ctc_one_direction, ctc_bidirectional };
enum class SimTarget { ctc_posterior, encoder_hidden };
enum class SpikeDetectionMode { paper_exact, strict_max };

struct SimilarityConfig {
  SimMetric metric = SimMetric::cosine;
  SimTrigger trigger = SimTrigger::all_frames;
  SimTarget target = SimTarget::ctc_posterior;
  bool stop_gradient = false;
  PeakScoreMode peak_mode = PeakScoreMode::max_nonblank;
  SpikeDetectionMode spike_mode = SpikeDetectionMode::paper_exact;

  void validate() const;  // the kl metric needs distributions as targets
};

// Per-frame spike indicator for one utterance, with provenance.
struct SpikeMask {
  std::vector<std::uint8_t> indicator;
  int source_branch = 0;  // 1 or 2 once attached to a branch
  SpikeDetectionMode mode = SpikeDetectionMode::paper_exact;

  std::size_t count() const;
  std::vector<std::size_t> frames() const;
};

// Cosine similarity of two nonzero vectors, built from taped primitives so
// it differentiates through both arguments.
Tensor cosine_sim(const Tensor& z1, const Tensor& z2);

// Analytic gradient of cosine_sim with respect to z1.
std::vector<double> cosine_grad(const Tensor& z1, const Tensor& z2);

// KL divergence sum_j z1_j log(z1_j / z2_j) of two strictly positive
// distributions (each summing to 1 within 1e-8).
Tensor kl_sim(const Tensor& z1, const Tensor& z2);

// KL computed directly from log-probability rows: sum exp(lp1) (lp1 - lp2).
// Used for posterior targets so probabilities are never re-logged.
Tensor kl_from_log_probs(const Tensor& lp1, const Tensor& lp2);

// Gradient of the KL term on component j when z1_j and z2_j move together
// (the shared-parameter reading): log z1_j + 1 - log z2_j - z1_j / z2_j.
// Zero exactly where the two distributions agree on a component.
std::vector<double> kl_grad(const Tensor& z1, const Tensor& z2);

// Spike detection over a per-frame peak-score sequence.
//   paper_exact: sp = -(sign(sign((P_l - P) (P - P_r)) + 0.1) - 1) / 2 with
//     zero-initialized shift buffers, evaluated over the whole sequence at
//     once; flags every frame that is a strict local extremum against its
//     (zero-padded) neighbors.
//   strict_max: flags t iff P[t-1] < P[t] > P[t+1] with -inf boundaries.
SpikeMask spike_filter(const std::vector<double>& peaks, SpikeDetectionMode mode,
                       int source_branch = 0);

// Similarity regularization loss over two branch outputs z1, z2 of shape
// (T, D) with per-frame peak scores P1, P2. Frame selection follows
// cfg.trigger; empty spike sets contribute nothing and drop out of the
// average; with stop_gradient the counterpart branch is held constant.
// For cosine the loss is the negated mean similarity; for kl the mean
// symmetric divergence.
Tensor sim_loss(const Tensor& z1, const Tensor& z2, const std::vector<double>& peaks1,
                const std::vector<double>& peaks2, const SimilarityConfig& cfg);

std::string to_string(SimMetric m);
std::string to_string(SimTrigger t);
std::string to_string(SimTarget t);
std::string to_string(SpikeDetectionMode m);
std::string to_string(PeakScoreMode m);
SimMetric sim_metric_from_string(const std::string& s);
SimTrigger sim_trigger_from_string(const std::string& s);
SimTarget sim_target_from_string(const std::string& s);
SpikeDetectionMode spike_mode_from_string(const std::string& s);
PeakScoreMode peak_mode_from_string(const std::string& s);

}  // namespace spikereg
