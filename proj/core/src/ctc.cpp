#include "spikereg/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace spikereg {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

std::size_t adjacent_repeats(const LabelSeq& target) {
  std::size_t n = 0;
  for (std::size_t i = 1; i < target.size(); ++i) {
    if (target[i] == target[i - 1]) ++n;
  }
  return n;
}

void validate_target(const LabelSeq& target, std::size_t num_classes) {
  for (int id : target) {
    if (id < 1 || static_cast<std::size_t>(id) >= num_classes) {
      throw std::invalid_argument("ctc: target id " + std::to_string(id) +
                                  " outside 1.." + std::to_string(num_classes - 1));
    }
  }
}

// Extended label sequence: blank, l1, blank, l2, ..., blank.
std::vector<int> extended_labels(const LabelSeq& target) {
  std::vector<int> ext(2 * target.size() + 1, Vocab::kBlank);
  for (std::size_t i = 0; i < target.size(); ++i) ext[2 * i + 1] = target[i];
  return ext;
}

}  // namespace

CtcPosterior::CtcPosterior(Tensor lp) : log_probs(std::move(lp)) {
  if (log_probs.axes() != 2) {
    throw std::invalid_argument("CtcPosterior: log_probs must be (T, K+1), got " +
                                shape_str(log_probs.shape()));
  }
  if (log_probs.dim(1) < 2) {
    throw std::invalid_argument("CtcPosterior: need blank plus at least one token");
  }
  const std::size_t t_len = log_probs.dim(0), classes = log_probs.dim(1);
  for (std::size_t t = 0; t < t_len; ++t) {
    double acc = kNegInf;
    for (std::size_t k = 0; k < classes; ++k) acc = log_add(acc, log_probs.at(t, k));
    if (std::abs(acc) > 1e-10) {
      throw std::invalid_argument("CtcPosterior: row " + std::to_string(t) +
                                  " does not log-sum-exp to 0 (got " + std::to_string(acc) + ")");
    }
  }
}

bool ctc_feasible(std::size_t frames, const LabelSeq& target) {
  return frames >= target.size() + adjacent_repeats(target);
}

Tensor ctc_loss(const Tensor& log_probs, const LabelSeq& target) {
  if (log_probs.axes() != 2) {
    throw std::invalid_argument("ctc_loss: log_probs must be (T, K+1), got " +
                                shape_str(log_probs.shape()));
  }
  const std::size_t t_len = log_probs.dim(0);
  const std::size_t classes = log_probs.dim(1);
  validate_target(target, classes);
  if (!ctc_feasible(t_len, target)) {
    throw std::invalid_argument("ctc_loss: infeasible instance, T=" + std::to_string(t_len) +
                                " < required frames for L=" + std::to_string(target.size()) +
                                " with " + std::to_string(adjacent_repeats(target)) +
                                " adjacent repeats");
  }

  const std::vector<int> ext = extended_labels(target);
  const std::size_t s_len = ext.size();
  const auto lp = log_probs.values();
  auto at = [&](std::size_t t, int k) { return lp[t * classes + static_cast<std::size_t>(k)]; };

  // Forward variables include the emission at t; beta excludes it, so that
  // alpha_t(s) * beta_t(s) summed over s gives the total path probability
  // for every t.
  std::vector<double> alpha(t_len * s_len, kNegInf);
  alpha[0] = at(0, ext[0]);
  if (s_len > 1) alpha[1] = at(0, ext[1]);
  for (std::size_t t = 1; t < t_len; ++t) {
    for (std::size_t s = 0; s < s_len; ++s) {
      double acc = alpha[(t - 1) * s_len + s];
      if (s >= 1) acc = log_add(acc, alpha[(t - 1) * s_len + s - 1]);
      if (s >= 2 && ext[s] != Vocab::kBlank && ext[s] != ext[s - 2]) {
        acc = log_add(acc, alpha[(t - 1) * s_len + s - 2]);
      }
      if (acc != kNegInf) alpha[t * s_len + s] = acc + at(t, ext[s]);
    }
  }

  double log_p = alpha[(t_len - 1) * s_len + s_len - 1];
  if (s_len > 1) log_p = log_add(log_p, alpha[(t_len - 1) * s_len + s_len - 2]);
  if (log_p == kNegInf) {
    throw std::invalid_argument("ctc_loss: target has probability zero under the posterior");
  }

  Tensor loss = Tensor::scalar(-log_p);
  Tape* tape = Tape::current();
  if (tape != nullptr && log_probs.tracked()) {
    // Backward pass for the gradient: beta excludes the emission at t.
    std::vector<double> beta(t_len * s_len, kNegInf);
    beta[(t_len - 1) * s_len + s_len - 1] = 0.0;
    if (s_len > 1) beta[(t_len - 1) * s_len + s_len - 2] = 0.0;
    for (std::size_t t = t_len - 1; t-- > 0;) {
      for (std::size_t s = 0; s < s_len; ++s) {
        double acc = beta[(t + 1) * s_len + s] + at(t + 1, ext[s]);
        if (s + 1 < s_len) {
          acc = log_add(acc, beta[(t + 1) * s_len + s + 1] + at(t + 1, ext[s + 1]));
        }
        if (s + 2 < s_len && ext[s + 2] != Vocab::kBlank && ext[s + 2] != ext[s]) {
          acc = log_add(acc, beta[(t + 1) * s_len + s + 2] + at(t + 1, ext[s + 2]));
        }
        beta[t * s_len + s] = acc;
      }
    }

    // d(-log P)/d log_probs[t][k] = -exp(LSE_{s: ext[s]=k}(alpha + beta) - log P)
    std::vector<double> grad(t_len * classes, 0.0);
    for (std::size_t t = 0; t < t_len; ++t) {
      std::vector<double> occ(classes, kNegInf);
      for (std::size_t s = 0; s < s_len; ++s) {
        const double ab = alpha[t * s_len + s] + beta[t * s_len + s];
        if (ab != kNegInf) {
          auto k = static_cast<std::size_t>(ext[s]);
          occ[k] = log_add(occ[k], ab);
        }
      }
      for (std::size_t k = 0; k < classes; ++k) {
        if (occ[k] != kNegInf) grad[t * classes + k] = -std::exp(occ[k] - log_p);
      }
    }

    loss.impl()->tracked = true;
    loss.impl()->tape_id = tape->id();
    auto in = log_probs.impl_ptr();
    auto out = loss.impl_ptr();
    tape->record([in, out, grad = std::move(grad)]() {
      if (out->grad.empty() || !in->tracked) return;
      const double g = out->grad[0];
      if (in->grad.empty()) in->grad.assign(in->values.size(), 0.0);
      for (std::size_t i = 0; i < grad.size(); ++i) in->grad[i] += g * grad[i];
    });
  }
  return loss;
}

double ctc_bruteforce(const CtcPosterior& posterior, const LabelSeq& target) {
  const std::size_t t_len = posterior.frames();
  const std::size_t classes = posterior.classes();
  validate_target(target, classes);

  double paths = 1.0;
  for (std::size_t t = 0; t < t_len; ++t) {
    paths *= static_cast<double>(classes);
    if (paths > 1e7) {
      throw std::invalid_argument("ctc_bruteforce: instance too large, (K+1)^T > 10^7");
    }
  }

  const auto lp = posterior.log_probs.values();
  std::vector<int> path(t_len, 0);
  double log_total = kNegInf;
  for (;;) {
    // collapse: drop repeats, then blanks
    LabelSeq collapsed;
    int prev = -1;
    for (int c : path) {
      if (c != prev && c != Vocab::kBlank) collapsed.push_back(c);
      prev = c;
    }
    if (collapsed == target) {
      double lp_path = 0.0;
      for (std::size_t t = 0; t < t_len; ++t) {
        lp_path += lp[t * classes + static_cast<std::size_t>(path[t])];
      }
      log_total = log_add(log_total, lp_path);
    }
    // next path in lexicographic order
    std::size_t pos = 0;
    while (pos < t_len && path[pos] == static_cast<int>(classes) - 1) {
      path[pos] = 0;
      ++pos;
    }
    if (pos == t_len) break;
    ++path[pos];
  }

  if (log_total == kNegInf) {
    throw std::invalid_argument("ctc_bruteforce: no alignment path collapses to the target (T=" +
                                std::to_string(t_len) + ", L=" + std::to_string(target.size()) +
                                ")");
  }
  return -log_total;
}

LabelSeq greedy_decode(const CtcPosterior& posterior) {
  const std::size_t t_len = posterior.frames();
  const std::size_t classes = posterior.classes();
  const auto lp = posterior.log_probs.values();
  LabelSeq out;
  int prev = -1;
  for (std::size_t t = 0; t < t_len; ++t) {
    const double* row = &lp[t * classes];
    int best = 0;
    for (std::size_t k = 1; k < classes; ++k) {
      if (row[k] > row[best]) best = static_cast<int>(k);  // ties keep the lower id
    }
    if (best != prev && best != Vocab::kBlank) out.push_back(best);
    prev = best;
  }
  return out;
}

std::vector<double> frame_peak_score(const Tensor& log_probs, PeakScoreMode mode) {
  if (log_probs.axes() != 2 || log_probs.dim(1) < 2) {
    throw std::invalid_argument("frame_peak_score: log_probs must be (T, K+1), got " +
                                shape_str(log_probs.shape()));
  }
  const std::size_t t_len = log_probs.dim(0), classes = log_probs.dim(1);
  const auto lp = log_probs.values();
  std::vector<double> scores(t_len);
  for (std::size_t t = 0; t < t_len; ++t) {
    const double* row = &lp[t * classes];
    if (mode == PeakScoreMode::max_nonblank) {
      double best = row[1];
      for (std::size_t k = 2; k < classes; ++k) best = std::max(best, row[k]);
      scores[t] = std::exp(best);
    } else {
      scores[t] = 1.0 - std::exp(row[Vocab::kBlank]);
    }
  }
  return scores;
}

std::vector<double> frame_peak_score(const CtcPosterior& posterior, PeakScoreMode mode) {
  return frame_peak_score(posterior.log_probs, mode);
}

}  // namespace spikereg
