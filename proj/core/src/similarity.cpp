#include "spikereg/similarity.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace spikereg {

namespace {

void require_vector_pair(const Tensor& z1, const Tensor& z2, const char* op) {
  if (z1.axes() != 1 || z2.axes() != 1 || !z1.same_shape(z2)) {
    throw std::invalid_argument(std::string(op) + ": expected two vectors of equal length, got " +
                                shape_str(z1.shape()) + " and " + shape_str(z2.shape()));
  }
}

double squared_norm(const Tensor& z) {
  double acc = 0.0;
  for (double v : z.values()) acc += v * v;
  return acc;
}

void require_distribution(const Tensor& z, const char* op) {
  double total = 0.0;
  for (double v : z.values()) {
    if (v <= 0.0) {
      throw std::invalid_argument(std::string(op) + ": distribution component " +
                                  std::to_string(v) + " is not strictly positive");
    }
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-8) {
    throw std::invalid_argument(std::string(op) + ": distribution sums to " +
                                std::to_string(total) + ", not 1");
  }
}

double sign_of(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

// Row t of a (T, D) tensor as a (D,) tensor, differentiable.
Tensor row_at(const Tensor& z, std::size_t t) { return sum(slice0(z, t, 1), 0); }

}  // namespace

void SimilarityConfig::validate() const {
  if (metric == SimMetric::kl && target != SimTarget::ctc_posterior) {
    throw std::invalid_argument("similarity: kl metric requires the ctc_posterior target");
  }
}

std::size_t SpikeMask::count() const {
  std::size_t n = 0;
  for (auto b : indicator) n += b != 0;
  return n;
}

std::vector<std::size_t> SpikeMask::frames() const {
  std::vector<std::size_t> out;
  for (std::size_t t = 0; t < indicator.size(); ++t) {
    if (indicator[t]) out.push_back(t);
  }
  return out;
}

Tensor cosine_sim(const Tensor& z1, const Tensor& z2) {
  require_vector_pair(z1, z2, "cosine_sim");
  if (squared_norm(z1) == 0.0 || squared_norm(z2) == 0.0) {
    throw std::invalid_argument("cosine_sim: zero-norm operand");
  }
  Tensor dot = sum_all(mul(z1, z2));
  Tensor n1 = sqrt(sum_all(mul(z1, z1)));
  Tensor n2 = sqrt(sum_all(mul(z2, z2)));
  return div(dot, mul(n1, n2));
}

std::vector<double> cosine_grad(const Tensor& z1, const Tensor& z2) {
  require_vector_pair(z1, z2, "cosine_grad");
  const double q1 = squared_norm(z1), q2 = squared_norm(z2);
  if (q1 == 0.0 || q2 == 0.0) {
    throw std::invalid_argument("cosine_grad: zero-norm operand");
  }
  const double n1 = std::sqrt(q1), n2 = std::sqrt(q2);
  double dot = 0.0;
  for (std::size_t j = 0; j < z1.size(); ++j) dot += z1[j] * z2[j];
  std::vector<double> g(z1.size());
  for (std::size_t j = 0; j < z1.size(); ++j) {
    g[j] = (z2[j] * n1 - z1[j] * dot / n1) / (q1 * n2);
  }
  return g;
}

Tensor kl_sim(const Tensor& z1, const Tensor& z2) {
  require_vector_pair(z1, z2, "kl_sim");
  require_distribution(z1, "kl_sim");
  require_distribution(z2, "kl_sim");
  return sum_all(mul(z1, sub(log(z1), log(z2))));
}

Tensor kl_from_log_probs(const Tensor& lp1, const Tensor& lp2) {
  if (!lp1.same_shape(lp2)) {
    throw std::invalid_argument("kl_from_log_probs: shapes " + shape_str(lp1.shape()) + " and " +
                                shape_str(lp2.shape()) + " differ");
  }
  return sum_all(mul(exp(lp1), sub(lp1, lp2)));
}

std::vector<double> kl_grad(const Tensor& z1, const Tensor& z2) {
  require_vector_pair(z1, z2, "kl_grad");
  require_distribution(z1, "kl_grad");
  require_distribution(z2, "kl_grad");
  std::vector<double> g(z1.size());
  for (std::size_t j = 0; j < z1.size(); ++j) {
    g[j] = std::log(z1[j]) + 1.0 - std::log(z2[j]) - z1[j] / z2[j];
  }
  return g;
}

SpikeMask spike_filter(const std::vector<double>& peaks, SpikeDetectionMode mode,
                       int source_branch) {
  if (peaks.empty()) {
    throw std::invalid_argument("spike_filter: empty peak sequence");
  }
  const std::size_t t_len = peaks.size();
  SpikeMask mask;
  mask.mode = mode;
  mask.source_branch = source_branch;
  mask.indicator.assign(t_len, 0);

  if (mode == SpikeDetectionMode::paper_exact) {
    // Shift buffers start as zeros, then receive the shifted sequence.
    std::vector<double> left(t_len, 0.0), right(t_len, 0.0);
    for (std::size_t t = 1; t < t_len; ++t) left[t] = peaks[t - 1];
    for (std::size_t t = 0; t + 1 < t_len; ++t) right[t] = peaks[t + 1];
    for (std::size_t t = 0; t < t_len; ++t) {
      const double product = (left[t] - peaks[t]) * (peaks[t] - right[t]);
      const double sp = -(sign_of(sign_of(product) + 0.1) - 1.0) / 2.0;
      mask.indicator[t] = sp > 0.5 ? 1 : 0;
    }
  } else {
    constexpr double kNegInf = -std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < t_len; ++t) {
      const double prev = t > 0 ? peaks[t - 1] : kNegInf;
      const double next = t + 1 < t_len ? peaks[t + 1] : kNegInf;
      mask.indicator[t] = (prev < peaks[t] && peaks[t] > next) ? 1 : 0;
    }
  }
  return mask;
}

namespace {

// Mean similarity term over the selected frames, already signed as a loss
// contribution (negated cosine, positive symmetric KL). stop_other holds the
// named branch constant. Returns an undefined tensor for an empty selection.
Tensor frame_term(const Tensor& z1, const Tensor& z2, const std::vector<std::size_t>& frames,
                  const SimilarityConfig& cfg, int stop_branch) {
  if (frames.empty()) return {};
  const Tensor b1 = stop_branch == 1 ? z1.detach() : z1;
  const Tensor b2 = stop_branch == 2 ? z2.detach() : z2;
  Tensor acc;
  for (std::size_t t : frames) {
    Tensor r1 = row_at(b1, t);
    Tensor r2 = row_at(b2, t);
    Tensor per_frame;
    if (cfg.metric == SimMetric::cosine) {
      if (cfg.target == SimTarget::ctc_posterior) {
        // rows are log probabilities; cosine compares the distributions
        r1 = exp(r1);
        r2 = exp(r2);
      }
      per_frame = smul(cosine_sim(r1, r2), -1.0);
    } else {
      per_frame = smul(add(kl_from_log_probs(r1, r2), kl_from_log_probs(r2, r1)), 0.5);
    }
    acc = acc.defined() ? add(acc, per_frame) : per_frame;
  }
  return smul(acc, 1.0 / static_cast<double>(frames.size()));
}

}  // namespace

Tensor sim_loss(const Tensor& z1, const Tensor& z2, const std::vector<double>& peaks1,
                const std::vector<double>& peaks2, const SimilarityConfig& cfg) {
  cfg.validate();
  if (z1.axes() != 2 || !z1.same_shape(z2)) {
    throw std::invalid_argument("sim_loss: branch outputs must be equal-shape (T, D), got " +
                                shape_str(z1.shape()) + " and " + shape_str(z2.shape()));
  }
  const std::size_t t_len = z1.dim(0);
  if (peaks1.size() != t_len || peaks2.size() != t_len) {
    throw std::invalid_argument("sim_loss: peak sequences must have length T=" +
                                std::to_string(t_len));
  }

  std::vector<std::size_t> all(t_len);
  for (std::size_t t = 0; t < t_len; ++t) all[t] = t;

  std::vector<Tensor> terms;
  auto push = [&terms](Tensor t) {
    if (t.defined()) terms.push_back(std::move(t));
  };

  switch (cfg.trigger) {
    case SimTrigger::all_frames:
      if (cfg.stop_gradient) {
        // symmetric stopped form: each branch chases a frozen counterpart
        push(frame_term(z1, z2, all, cfg, 2));
        push(frame_term(z1, z2, all, cfg, 1));
      } else {
        push(frame_term(z1, z2, all, cfg, 0));
      }
      break;
    case SimTrigger::ctc_one_direction: {
      const SpikeMask sp1 = spike_filter(peaks1, cfg.spike_mode, 1);
      push(frame_term(z1, z2, sp1.frames(), cfg, cfg.stop_gradient ? 2 : 0));
      break;
    }
    case SimTrigger::ctc_bidirectional: {
      const SpikeMask sp1 = spike_filter(peaks1, cfg.spike_mode, 1);
      const SpikeMask sp2 = spike_filter(peaks2, cfg.spike_mode, 2);
      push(frame_term(z1, z2, sp1.frames(), cfg, cfg.stop_gradient ? 2 : 0));
      push(frame_term(z1, z2, sp2.frames(), cfg, cfg.stop_gradient ? 1 : 0));
      break;
    }
  }

  if (terms.empty()) return Tensor::scalar(0.0);
  Tensor acc = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  return smul(acc, 1.0 / static_cast<double>(terms.size()));
}

std::string to_string(SimMetric m) { return m == SimMetric::cosine ? "cosine" : "kl"; }

std::string to_string(SimTrigger t) {
  switch (t) {
    case SimTrigger::all_frames: return "all_frames";
    case SimTrigger::ctc_one_direction: return "ctc_one_direction";
    case SimTrigger::ctc_bidirectional: return "ctc_bidirectional";
  }
  return "?";
}

std::string to_string(SimTarget t) {
  return t == SimTarget::ctc_posterior ? "ctc_posterior" : "encoder_hidden";
}

std::string to_string(SpikeDetectionMode m) {
  return m == SpikeDetectionMode::paper_exact ? "paper_exact" : "strict_max";
}

std::string to_string(PeakScoreMode m) {
  return m == PeakScoreMode::max_nonblank ? "max_nonblank" : "blank_complement";
}

SimMetric sim_metric_from_string(const std::string& s) {
  if (s == "cosine") return SimMetric::cosine;
  if (s == "kl") return SimMetric::kl;
  throw std::invalid_argument("unknown similarity metric: " + s);
}

SimTrigger sim_trigger_from_string(const std::string& s) {
  if (s == "all_frames") return SimTrigger::all_frames;
  if (s == "ctc_one_direction") return SimTrigger::ctc_one_direction;
  if (s == "ctc_bidirectional") return SimTrigger::ctc_bidirectional;
  throw std::invalid_argument("unknown similarity trigger: " + s);
}

SimTarget sim_target_from_string(const std::string& s) {
  if (s == "ctc_posterior") return SimTarget::ctc_posterior;
  if (s == "encoder_hidden") return SimTarget::encoder_hidden;
  throw std::invalid_argument("unknown similarity target: " + s);
}

SpikeDetectionMode spike_mode_from_string(const std::string& s) {
  if (s == "paper_exact") return SpikeDetectionMode::paper_exact;
  if (s == "strict_max") return SpikeDetectionMode::strict_max;
  throw std::invalid_argument("unknown spike detection mode: " + s);
}

PeakScoreMode peak_mode_from_string(const std::string& s) {
  if (s == "max_nonblank") return PeakScoreMode::max_nonblank;
  if (s == "blank_complement") return PeakScoreMode::blank_complement;
  throw std::invalid_argument("unknown peak score mode: " + s);
}

}  // namespace spikereg
