#pragma once

#include <cstdint>
#include <vector>

#include "spikereg/tensor.hpp"

namespace spikereg {

// Token ids run 1..K; id 0 is the blank.
struct Vocab {
  int num_tokens = 0;  // K
  static constexpr int kBlank = 0;
  int num_classes() const { return num_tokens + 1; }
};

using LabelSeq = std::vector<int>;

// Per-frame log distributions over K+1 classes for one utterance.
// Rows must log-sum-exp to zero.
struct CtcPosterior {
  Tensor log_probs;  // (T, K+1), untracked snapshot
  CtcPosterior() = default;
  explicit CtcPosterior(Tensor log_probs);
  std::size_t frames() const { return log_probs.dim(0); }
  std::size_t classes() const { return log_probs.dim(1); }
};

enum class PeakScoreMode {
  max_nonblank,      // P[t] = max over non-blank tokens of p_t(v)
  blank_complement,  // P[t] = 1 - p_t(blank)
};

// Negative log probability of the target under the CTC alignment model,
// computed by the forward-backward recursion in log space. Differentiable:
// the gradient with respect to log_probs is recorded on the live tape.
// Requires T >= L + (count of adjacent repeated labels); target ids in 1..K.
Tensor ctc_loss(const Tensor& log_probs, const LabelSeq& target);

// Exact loss by enumerating every alignment path; the oracle counterpart of
// ctc_loss for tiny instances. Rejects instances with (K+1)^T > 10^7 and
// targets with no feasible path.
double ctc_bruteforce(const CtcPosterior& posterior, const LabelSeq& target);

// Per-frame argmax, collapse adjacent repeats, drop blanks. Argmax ties
// break toward the lower class id.
LabelSeq greedy_decode(const CtcPosterior& posterior);

// One scalar per frame summarizing how strongly a non-blank token fires.
std::vector<double> frame_peak_score(const CtcPosterior& posterior, PeakScoreMode mode);
std::vector<double> frame_peak_score(const Tensor& log_probs, PeakScoreMode mode);

// T >= L + adjacent-repeat count; also validates target ids against K.
bool ctc_feasible(std::size_t frames, const LabelSeq& target);

}  // namespace spikereg
