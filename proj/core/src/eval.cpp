#include "spikereg/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "json.hpp"

namespace spikereg {

namespace {

std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::vector<double> normalized(const std::vector<double>& v, const char* op) {
  double q = 0.0;
  for (double x : v) q += x * x;
  if (q == 0.0) throw std::invalid_argument(std::string(op) + ": zero-norm vector");
  const double inv = 1.0 / std::sqrt(q);
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] * inv;
  return out;
}

double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

}  // namespace

double ErrorReport::error_rate() const {
  if (reference_length == 0) {
    return total_errors() == 0 ? 0.0 : std::numeric_limits<double>::infinity();
  }
  return static_cast<double>(total_errors()) / static_cast<double>(reference_length);
}

void ErrorReport::merge(const ErrorReport& other) {
  substitutions += other.substitutions;
  insertions += other.insertions;
  deletions += other.deletions;
  reference_length += other.reference_length;
}

ErrorReport edit_distance(const LabelSeq& ref, const LabelSeq& hyp) {
  const std::size_t r = ref.size(), h = hyp.size();
  // dist[i][j]: distance between ref[:i] and hyp[:j]
  std::vector<std::size_t> dist((r + 1) * (h + 1), 0);
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return dist[i * (h + 1) + j]; };
  for (std::size_t j = 0; j <= h; ++j) at(0, j) = j;
  for (std::size_t i = 0; i <= r; ++i) at(i, 0) = i;
  for (std::size_t i = 1; i <= r; ++i) {
    for (std::size_t j = 1; j <= h; ++j) {
      const std::size_t diag = at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      const std::size_t ins = at(i, j - 1) + 1;
      const std::size_t del = at(i - 1, j) + 1;
      at(i, j) = std::min({diag, ins, del});
    }
  }

  ErrorReport report;
  report.reference_length = r;
  std::size_t i = r, j = h;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const std::size_t diag = at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      if (diag == at(i, j)) {  // prefer substitution/match
        if (ref[i - 1] != hyp[j - 1]) ++report.substitutions;
        --i;
        --j;
        continue;
      }
    }
    if (j > 0 && at(i, j - 1) + 1 == at(i, j)) {  // then insertion
      ++report.insertions;
      --j;
      continue;
    }
    ++report.deletions;
    --i;
  }
  return report;
}

double alignment_metric(
    const std::vector<std::pair<std::vector<double>, std::vector<double>>>& pairs) {
  if (pairs.empty()) throw std::invalid_argument("alignment_metric: no pairs");
  double acc = 0.0;
  for (const auto& [a, b] : pairs) {
    acc += squared_distance(normalized(a, "alignment_metric"), normalized(b, "alignment_metric"));
  }
  return acc / static_cast<double>(pairs.size());
}

double uniformity_metric(const std::vector<std::vector<double>>& features) {
  if (features.size() < 2) {
    throw std::invalid_argument("uniformity_metric: need at least two vectors");
  }
  std::vector<std::vector<double>> normed;
  normed.reserve(features.size());
  for (const auto& f : features) normed.push_back(normalized(f, "uniformity_metric"));
  double acc = 0.0;
  std::size_t n_pairs = 0;
  for (std::size_t i = 0; i < normed.size(); ++i) {
    for (std::size_t j = i + 1; j < normed.size(); ++j) {
      acc += std::exp(-2.0 * squared_distance(normed[i], normed[j]));
      ++n_pairs;
    }
  }
  return std::log(acc / static_cast<double>(n_pairs));
}

double SpikeHistogram::mass_at_or_above(double lo) const {
  if (total_spikes == 0) return 0.0;
  std::size_t mass = 0;
  for (std::size_t b = 0; b < counts.size(); ++b) {
    if (bin_edges[b] >= lo) mass += counts[b];
  }
  return static_cast<double>(mass) / static_cast<double>(total_spikes);
}

AnalysisReport spike_histogram(const std::vector<CtcPosterior>& posteriors,
                               SpikeDetectionMode spike_mode, PeakScoreMode peak_mode,
                               std::size_t bins, const std::vector<std::string>* utt_ids) {
  if (bins == 0) throw std::invalid_argument("spike_histogram: bins must be >= 1");
  if (utt_ids != nullptr && utt_ids->size() != posteriors.size()) {
    throw std::invalid_argument("spike_histogram: id list size mismatch");
  }
  AnalysisReport report;
  report.histogram.bin_edges.resize(bins + 1);
  for (std::size_t b = 0; b <= bins; ++b) {
    report.histogram.bin_edges[b] = static_cast<double>(b) / static_cast<double>(bins);
  }
  report.histogram.counts.assign(bins, 0);

  for (std::size_t u = 0; u < posteriors.size(); ++u) {
    const std::vector<double> peaks = frame_peak_score(posteriors[u], peak_mode);
    const SpikeMask mask = spike_filter(peaks, spike_mode);
    const std::string id = utt_ids != nullptr ? (*utt_ids)[u] : "utt-" + std::to_string(u);
    for (std::size_t t = 0; t < peaks.size(); ++t) {
      report.traces.push_back({id, t, -std::log(peaks[t]), mask.indicator[t] != 0});
      if (mask.indicator[t]) {
        const double v = std::clamp(peaks[t], 0.0, 1.0);
        std::size_t b = static_cast<std::size_t>(v * static_cast<double>(bins));
        if (b >= bins) b = bins - 1;
        ++report.histogram.counts[b];
        ++report.histogram.total_spikes;
      }
    }
  }
  return report;
}

void write_json_report(const std::filesystem::path& path,
                       const std::map<std::string, double>& scalars) {
  nlohmann::ordered_json j;
  for (const auto& [key, value] : scalars) {
    if (std::isnan(value)) {
      j[key] = nullptr;
    } else {
      j[key] = value;
    }
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write report: " + path.string());
  os << j.dump(2) << "\n";
}

void write_histogram_csv(const std::filesystem::path& path, const SpikeHistogram& hist) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write histogram: " + path.string());
  os << "bin_lo,bin_hi,count\n";
  for (std::size_t b = 0; b < hist.counts.size(); ++b) {
    os << fmt_double(hist.bin_edges[b]) << "," << fmt_double(hist.bin_edges[b + 1]) << ","
       << hist.counts[b] << "\n";
  }
}

void write_traces_csv(const std::filesystem::path& path,
                      const std::vector<SpikeTraceEntry>& traces) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write traces: " + path.string());
  os << "utt_id,frame,neg_log_peak,is_spike\n";
  for (const auto& t : traces) {
    os << t.utt_id << "," << t.frame << "," << fmt_double(t.neg_log_peak) << ","
       << (t.is_spike ? 1 : 0) << "\n";
  }
}

}  // namespace spikereg
