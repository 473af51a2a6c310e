#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include "doctest.h"
#include "spikereg/eval.hpp"
#include "spikereg/rng.hpp"

using namespace spikereg;

namespace {

// Plain recursive Levenshtein with memoization, the small-case oracle.
std::size_t brute_distance(const LabelSeq& a, const LabelSeq& b) {
  std::vector<std::size_t> memo((a.size() + 1) * (b.size() + 1), SIZE_MAX);
  std::function<std::size_t(std::size_t, std::size_t)> go = [&](std::size_t i,
                                                                std::size_t j) -> std::size_t {
    if (i == 0) return j;
    if (j == 0) return i;
    auto& slot = memo[i * (b.size() + 1) + j];
    if (slot != SIZE_MAX) return slot;
    const std::size_t sub = go(i - 1, j - 1) + (a[i - 1] == b[j - 1] ? 0 : 1);
    const std::size_t ins = go(i, j - 1) + 1;
    const std::size_t del = go(i - 1, j) + 1;
    return slot = std::min({sub, ins, del});
  };
  return go(a.size(), b.size());
}

LabelSeq random_seq(SeededRng& rng, std::size_t max_len, int vocab) {
  LabelSeq s(static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(max_len))));
  for (auto& v : s) v = static_cast<int>(rng.uniform_int(1, vocab));
  return s;
}

std::vector<double> unit(std::initializer_list<double> v) { return std::vector<double>(v); }

}  // namespace

TEST_CASE("edit distance basics") {
  const ErrorReport same = edit_distance({1, 2, 3}, {1, 2, 3});
  CHECK(same.total_errors() == 0);
  CHECK(same.error_rate() == 0.0);

  // kitten -> sitting, the classic distance-3 pair
  const LabelSeq kitten{11, 9, 20, 20, 5, 14};
  const LabelSeq sitting{19, 9, 20, 20, 9, 14, 7};
  const ErrorReport ks = edit_distance(kitten, sitting);
  CHECK(ks.total_errors() == 3);
  CHECK(ks.substitutions == 2);
  CHECK(ks.insertions == 1);

  const ErrorReport del = edit_distance({1}, {});
  CHECK(del.deletions == 1);
  CHECK(del.total_errors() == 1);
  CHECK(del.error_rate() == 1.0);
}

TEST_CASE("dp distance equals the brute-force oracle and behaves like a metric") {
  SeededRng rng(7);
  for (int trial = 0; trial < 1000; ++trial) {
    const LabelSeq a = random_seq(rng, 6, 3);
    const LabelSeq b = random_seq(rng, 6, 3);
    const LabelSeq c = random_seq(rng, 6, 3);
    const std::size_t ab = edit_distance(a, b).total_errors();
    const std::size_t ba = edit_distance(b, a).total_errors();
    const std::size_t ac = edit_distance(a, c).total_errors();
    const std::size_t cb = edit_distance(c, b).total_errors();
    CHECK(ab == brute_distance(a, b));
    CHECK(ab == ba);                      // symmetry of the distance value
    CHECK((ab == 0) == (a == b));         // identity of indiscernibles
    CHECK(ab <= ac + cb);                 // triangle inequality
  }
}

TEST_CASE("backtrace counts decompose the distance deterministically") {
  SeededRng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const LabelSeq a = random_seq(rng, 8, 3);
    const LabelSeq b = random_seq(rng, 8, 3);
    const ErrorReport r = edit_distance(a, b);
    CHECK(r.total_errors() == brute_distance(a, b));
    CHECK(r.reference_length == a.size());
    // insertions/deletions must reconcile the length difference
    CHECK(static_cast<std::ptrdiff_t>(b.size()) - static_cast<std::ptrdiff_t>(a.size()) ==
          static_cast<std::ptrdiff_t>(r.insertions) - static_cast<std::ptrdiff_t>(r.deletions));
  }
}

TEST_CASE("alignment metric on hand geometry") {
  CHECK(alignment_metric({{unit({1, 0}), unit({2, 0})}}) == doctest::Approx(0.0));
  CHECK(alignment_metric({{unit({1, 0}), unit({0, 1})}}) == doctest::Approx(2.0));
  CHECK_THROWS(alignment_metric({}));
  CHECK_THROWS(alignment_metric({{unit({0, 0}), unit({1, 0})}}));
}

TEST_CASE("alignment metric equals its brute-force recomputation") {
  SeededRng rng(13);
  std::vector<std::pair<std::vector<double>, std::vector<double>>> pairs;
  for (int i = 0; i < 30; ++i) {
    std::vector<double> a(5), b(5);
    for (auto& v : a) v = rng.normal();
    for (auto& v : b) v = rng.normal();
    pairs.emplace_back(a, b);
  }
  double expected = 0.0;
  for (const auto& [a, b] : pairs) {
    double na = 0.0, nb = 0.0;
    for (double v : a) na += v * v;
    for (double v : b) nb += v * v;
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    double d = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
      const double diff = a[j] / na - b[j] / nb;
      d += diff * diff;
    }
    expected += d;
  }
  expected /= static_cast<double>(pairs.size());
  CHECK(alignment_metric(pairs) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("uniformity metric on hand geometry") {
  CHECK(uniformity_metric({unit({1, 0}), unit({2, 0})}) == doctest::Approx(0.0));
  CHECK(uniformity_metric({unit({1, 0}), unit({-1, 0})}) == doctest::Approx(-8.0));
  CHECK_THROWS(uniformity_metric({unit({1, 0})}));
}

TEST_CASE("uniformity uses distinct pairs, so duplication changes it") {
  const std::vector<std::vector<double>> base{unit({1, 0}), unit({0, 1})};
  std::vector<std::vector<double>> doubled = base;
  doubled.insert(doubled.end(), base.begin(), base.end());
  const double u1 = uniformity_metric(base);
  // duplicated set adds zero-distance pairs: value must move toward 0
  const double u2 = uniformity_metric(doubled);
  CHECK(u2 > u1);

  // brute-force recomputation over the duplicated set
  double acc = 0.0;
  std::size_t n_pairs = 0;
  for (std::size_t i = 0; i < doubled.size(); ++i) {
    for (std::size_t j = i + 1; j < doubled.size(); ++j) {
      double d = 0.0;
      for (std::size_t k = 0; k < 2; ++k) {
        const double diff = doubled[i][k] - doubled[j][k];
        d += diff * diff;
      }
      acc += std::exp(-2.0 * d);
      ++n_pairs;
    }
  }
  CHECK(u2 == doctest::Approx(std::log(acc / static_cast<double>(n_pairs))).epsilon(1e-12));
}

TEST_CASE("metrics ignore positive rescaling of inputs") {
  SeededRng rng(17);
  std::vector<std::vector<double>> cloud;
  std::vector<std::pair<std::vector<double>, std::vector<double>>> pairs;
  for (int i = 0; i < 10; ++i) {
    std::vector<double> a(4), b(4);
    for (auto& v : a) v = rng.normal();
    for (auto& v : b) v = rng.normal();
    cloud.push_back(a);
    pairs.emplace_back(a, b);
  }
  auto scaled_cloud = cloud;
  auto scaled_pairs = pairs;
  for (auto& v : scaled_cloud) {
    for (auto& x : v) x *= 17.5;
  }
  for (auto& [a, b] : scaled_pairs) {
    for (auto& x : a) x *= 0.03;
    for (auto& x : b) x *= 400.0;
  }
  CHECK(std::abs(uniformity_metric(cloud) - uniformity_metric(scaled_cloud)) < 1e-12);
  CHECK(std::abs(alignment_metric(pairs) - alignment_metric(scaled_pairs)) < 1e-12);
}

TEST_CASE("spike histogram bins, totals and traces") {
  // single spike at probability 0.95 lands in the [0.9, 1.0) bin
  Tensor lp({3, 2});
  auto set_row = [&lp](std::size_t t, double blank, double token) {
    lp.at(t, 0) = std::log(blank);
    lp.at(t, 1) = std::log(token);
  };
  set_row(0, 0.9, 0.1);
  set_row(1, 0.05, 0.95);
  set_row(2, 0.9, 0.1);
  std::vector<CtcPosterior> posteriors;
  posteriors.emplace_back(lp);

  const AnalysisReport report = spike_histogram(posteriors, SpikeDetectionMode::strict_max,
                                                PeakScoreMode::max_nonblank, 10);
  CHECK(report.histogram.total_spikes == 1);
  CHECK(report.histogram.counts[9] == 1);
  for (std::size_t b = 0; b < 9; ++b) CHECK(report.histogram.counts[b] == 0);
  CHECK(report.histogram.mass_at_or_above(0.9) == doctest::Approx(1.0));
  REQUIRE(report.traces.size() == 3);
  CHECK(report.traces[1].is_spike);
  CHECK(report.traces[1].neg_log_peak == doctest::Approx(-std::log(0.95)));
  CHECK_FALSE(report.traces[0].is_spike);

  // histogram totals reconcile with an independent spike count
  std::size_t direct = 0;
  for (const auto& post : posteriors) {
    direct += spike_filter(frame_peak_score(post, PeakScoreMode::max_nonblank),
                           SpikeDetectionMode::strict_max)
                  .count();
  }
  CHECK(report.histogram.total_spikes == direct);
}

TEST_CASE("empty spike sets give an empty histogram without error") {
  const double third = std::log(1.0 / 3.0);
  Tensor lp = Tensor::full({4, 3}, third);  // constant peaks: no spikes
  std::vector<CtcPosterior> posteriors;
  posteriors.emplace_back(lp);
  const AnalysisReport report = spike_histogram(posteriors, SpikeDetectionMode::paper_exact,
                                                PeakScoreMode::max_nonblank, 10);
  CHECK(report.histogram.total_spikes == 0);
  CHECK(report.histogram.mass_at_or_above(0.9) == 0.0);
}

TEST_CASE("report writers emit the documented columns") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "spikereg-eval-test";
  fs::create_directories(dir);

  SpikeHistogram hist;
  hist.bin_edges = {0.0, 0.5, 1.0};
  hist.counts = {2, 3};
  hist.total_spikes = 5;
  write_histogram_csv(dir / "h.csv", hist);
  std::ifstream h(dir / "h.csv");
  std::string line;
  std::getline(h, line);
  CHECK(line == "bin_lo,bin_hi,count");
  std::getline(h, line);
  CHECK(line == "0,0.5,2");

  write_traces_csv(dir / "t.csv", {{"utt-x", 3, 1.5, true}});
  std::ifstream t(dir / "t.csv");
  std::getline(t, line);
  CHECK(line == "utt_id,frame,neg_log_peak,is_spike");
  std::getline(t, line);
  CHECK(line == "utt-x,3,1.5,1");

  write_json_report(dir / "r.json", {{"cer", 0.125}, {"alignment", 0.5}});
  std::ifstream r(dir / "r.json");
  std::ostringstream buf;
  buf << r.rdbuf();
  CHECK(buf.str().find("\"cer\": 0.125") != std::string::npos);
  fs::remove_all(dir);
}
