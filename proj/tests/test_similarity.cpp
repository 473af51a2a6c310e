#include <cmath>
#include <stdexcept>

#include "doctest.h"
#include "spikereg/gradcheck.hpp"
#include "spikereg/rng.hpp"
#include "spikereg/similarity.hpp"
#include "spikereg/verify.hpp"

using namespace spikereg;

namespace {

// Independent scalar-by-scalar scan of the published spike formula, used as
// the oracle for the vectorized implementation.
std::vector<std::uint8_t> scalar_scan_spikes(const std::vector<double>& p) {
  const std::size_t n = p.size();
  std::vector<std::uint8_t> out(n, 0);
  for (std::size_t t = 0; t < n; ++t) {
    const double left = t > 0 ? p[t - 1] : 0.0;
    const double right = t + 1 < n ? p[t + 1] : 0.0;
    const double prod = (left - p[t]) * (p[t] - right);
    double s = prod > 0.0 ? 1.0 : (prod < 0.0 ? -1.0 : 0.0);
    s += 0.1;
    s = s > 0.0 ? 1.0 : (s < 0.0 ? -1.0 : 0.0);
    out[t] = (-(s - 1.0) / 2.0) > 0.5 ? 1 : 0;
  }
  return out;
}

Tensor vec(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor({n}, std::move(v));
}

Tensor random_distribution(std::size_t dim, SeededRng& rng) {
  Tensor logits({dim});
  for (auto& v : logits.values_mut()) v = rng.uniform(-1.0, 1.0);
  return softmax(logits);
}

}  // namespace

TEST_CASE("cosine similarity basics") {
  CHECK(cosine_sim(vec({2, 3, -1}), vec({2, 3, -1})).item() == doctest::Approx(1.0));
  CHECK(cosine_sim(vec({1, 0}), vec({0, 1})).item() == doctest::Approx(0.0));
  CHECK(cosine_sim(vec({3, 4}), vec({1, 0})).item() == doctest::Approx(0.6));
  CHECK_THROWS_AS(cosine_sim(vec({0, 0}), vec({1, 0})), std::invalid_argument);
}

TEST_CASE("cosine gradient vanishes only at equal vectors and scales as 1/c") {
  SeededRng rng(41);
  const Tensor z = vec({0.3, -1.2, 0.5});
  for (double g : cosine_grad(z, z)) CHECK(std::abs(g) < 1e-15);

  Tensor z1({8}), z2({8});
  for (auto& v : z1.values_mut()) v = rng.normal();
  for (auto& v : z2.values_mut()) v = rng.normal();
  const auto g1 = cosine_grad(z1, z2);
  const double c = 3.7;
  Tensor scaled = z1.detach();
  for (auto& v : scaled.values_mut()) v *= c;
  const auto g_scaled = cosine_grad(scaled, z2);
  CHECK(cosine_sim(scaled, z2).item() == doctest::Approx(cosine_sim(z1, z2).item()).epsilon(1e-12));
  for (std::size_t j = 0; j < 8; ++j) {
    CHECK(g_scaled[j] == doctest::Approx(g1[j] / c).epsilon(1e-9));
  }
}

TEST_CASE("kl divergence values and asymmetry") {
  const Tensor a = vec({0.5, 0.5});
  const Tensor b = vec({0.25, 0.75});
  const double forward = kl_sim(a, b).item();
  const double backward_dir = kl_sim(b, a).item();
  CHECK(forward == doctest::Approx(0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0)).epsilon(1e-12));
  CHECK(forward == doctest::Approx(0.143841).epsilon(1e-5));
  CHECK(backward_dir == doctest::Approx(0.130812).epsilon(1e-5));
  CHECK(forward != backward_dir);
  CHECK(kl_sim(a, a).item() == doctest::Approx(0.0));
  CHECK_THROWS_AS(kl_sim(vec({0.5, 0.6}), a), std::invalid_argument);   // not normalized
  CHECK_THROWS_AS(kl_sim(vec({1.0, 0.0}), a), std::invalid_argument);   // not strictly positive
}

TEST_CASE("kl gradient components vanish exactly where distributions agree") {
  const auto g = kl_grad(vec({0.5, 0.5}), vec({0.25, 0.75}));
  CHECK(g[0] == doctest::Approx(std::log(2.0) + 1.0 - 2.0).epsilon(1e-12));
  CHECK(g[0] == doctest::Approx(-0.306853).epsilon(1e-5));

  const auto zero_g = kl_grad(vec({0.3, 0.7}), vec({0.3, 0.7}));
  for (double v : zero_g) CHECK(std::abs(v) < 1e-15);

  SeededRng rng(53);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor z1 = random_distribution(6, rng);
    const Tensor z2 = random_distribution(6, rng);
    const auto grad = kl_grad(z1, z2);
    for (std::size_t j = 0; j < 6; ++j) {
      const bool equal_component = std::abs(z1[j] - z2[j]) < 1e-12;
      const bool zero_gradient = std::abs(grad[j]) < 1e-12;
      CHECK(equal_component == zero_gradient);
    }
  }
}

TEST_CASE("analytic similarity gradients agree with differences and the tape") {
  const SimilarityGradErrors err = similarity_grad_errors(4242, 100, 8);
  CHECK(err.cosine_fd < 1e-6);
  CHECK(err.kl_fd < 1e-6);
  CHECK(err.cosine_autodiff < 1e-10);
  CHECK(err.kl_autodiff < 1e-10);
}

TEST_CASE("spike filter hand traces") {
  const std::vector<double> p{0.1, 0.9, 0.2, 0.8, 0.1};
  CHECK(spike_filter(p, SpikeDetectionMode::paper_exact).frames() ==
        std::vector<std::size_t>{1, 2, 3});
  CHECK(spike_filter(p, SpikeDetectionMode::strict_max).frames() ==
        std::vector<std::size_t>{1, 3});

  // constant sequences never spike: the product is 0 and sign(0)+0.1 > 0
  const std::vector<double> flat{0.4, 0.4, 0.4, 0.4};
  CHECK(spike_filter(flat, SpikeDetectionMode::paper_exact).count() == 0);
  CHECK(spike_filter(flat, SpikeDetectionMode::strict_max).count() == 0);

  // rising sequences end on a peak against the zero right pad (and the -inf
  // virtual boundary), so the final frame flags in both modes
  const std::vector<double> rising{0.1, 0.2, 0.3};
  CHECK(spike_filter(rising, SpikeDetectionMode::paper_exact).frames() ==
        std::vector<std::size_t>{2});
  CHECK(spike_filter(rising, SpikeDetectionMode::strict_max).frames() ==
        std::vector<std::size_t>{2});
}

TEST_CASE("vectorized spike filter matches the scalar scan on random input") {
  SeededRng rng(67);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + static_cast<std::size_t>(rng.uniform_int(0, 19));
    std::vector<double> p(n);
    for (auto& v : p) v = rng.uniform(0.0, 1.0);
    const SpikeMask mask = spike_filter(p, SpikeDetectionMode::paper_exact);
    CHECK(mask.indicator == scalar_scan_spikes(p));
  }
}

TEST_CASE("strictly unimodal sequences give identical masks in both modes") {
  SeededRng rng(71);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 3 + static_cast<std::size_t>(rng.uniform_int(0, 7));
    const std::size_t peak = static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
    std::vector<double> p(n);
    for (std::size_t t = 0; t < n; ++t) {
      const double dist = t > peak ? static_cast<double>(t - peak) : static_cast<double>(peak - t);
      p[t] = 0.9 - 0.08 * dist;  // strictly decreasing away from the peak
    }
    const auto a = spike_filter(p, SpikeDetectionMode::paper_exact).indicator;
    const auto b = spike_filter(p, SpikeDetectionMode::strict_max).indicator;
    CHECK(a == b);
  }
}

TEST_CASE("sim loss on identical branches is -1 for cosine") {
  SeededRng rng(83);
  Tensor logits({4, 3});
  for (auto& v : logits.values_mut()) v = rng.normal();
  const Tensor lp = log_softmax(logits);
  const std::vector<double> peaks{0.2, 0.9, 0.3, 0.8};
  SimilarityConfig cfg;
  cfg.metric = SimMetric::cosine;
  cfg.target = SimTarget::ctc_posterior;
  for (SimTrigger trigger : {SimTrigger::all_frames, SimTrigger::ctc_one_direction,
                             SimTrigger::ctc_bidirectional}) {
    cfg.trigger = trigger;
    CHECK(sim_loss(lp, lp, peaks, peaks, cfg).item() == doctest::Approx(-1.0).epsilon(1e-12));
  }
}

TEST_CASE("empty spike sets contribute zero") {
  const Tensor z = Tensor::full({3, 2}, std::log(0.5));
  const std::vector<double> flat{0.5, 0.5, 0.5};  // constant: no spikes
  SimilarityConfig cfg;
  cfg.trigger = SimTrigger::ctc_bidirectional;
  CHECK(sim_loss(z, z, flat, flat, cfg).item() == 0.0);
  cfg.trigger = SimTrigger::ctc_one_direction;
  CHECK(sim_loss(z, z, flat, flat, cfg).item() == 0.0);
}

TEST_CASE("bidirectional loss matches the hand-built three-frame instance") {
  // peaks chosen so branch 1 spikes at frame 1 and branch 2 at frame 2
  const std::vector<double> p1{0.1, 0.9, 0.2};
  const std::vector<double> p2{0.1, 0.2, 0.9};
  REQUIRE(spike_filter(p1, SpikeDetectionMode::strict_max).frames() ==
          std::vector<std::size_t>{1});
  REQUIRE(spike_filter(p2, SpikeDetectionMode::strict_max).frames() ==
          std::vector<std::size_t>{2});

  SeededRng rng(97);
  Tensor h1({3, 4}), h2({3, 4});
  for (auto& v : h1.values_mut()) v = rng.normal();
  for (auto& v : h2.values_mut()) v = rng.normal();

  SimilarityConfig cfg;
  cfg.metric = SimMetric::cosine;
  cfg.trigger = SimTrigger::ctc_bidirectional;
  cfg.target = SimTarget::encoder_hidden;
  cfg.spike_mode = SpikeDetectionMode::strict_max;
  const double loss = sim_loss(h1, h2, p1, p2, cfg).item();

  auto row = [](const Tensor& t, std::size_t r) {
    std::vector<double> v(t.cols());
    for (std::size_t c = 0; c < t.cols(); ++c) v[c] = t.at(r, c);
    return Tensor({t.cols()}, std::move(v));
  };
  const double s1 = cosine_sim(row(h1, 1), row(h2, 1)).item();
  const double s2 = cosine_sim(row(h1, 2), row(h2, 2)).item();
  CHECK(loss == doctest::Approx(-0.5 * (s1 + s2)).epsilon(1e-12));
}

TEST_CASE("stop gradient freezes the counterpart branch") {
  SeededRng rng(101);
  Tensor logits1({3, 3}), logits2({3, 3});
  for (auto& v : logits1.values_mut()) v = rng.normal();
  for (auto& v : logits2.values_mut()) v = rng.normal();
  logits1.require_grad();
  logits2.require_grad();
  const std::vector<double> peaks{0.2, 0.9, 0.1};

  SimilarityConfig cfg;
  cfg.trigger = SimTrigger::ctc_one_direction;
  cfg.stop_gradient = true;
  {
    Tape tape;
    const Tensor lp1 = log_softmax(logits1);
    const Tensor lp2 = log_softmax(logits2);
    backward(sim_loss(lp1, lp2, peaks, peaks, cfg));
  }
  bool z1_has_grad = false;
  for (double g : logits1.grad()) z1_has_grad |= g != 0.0;
  CHECK(z1_has_grad);
  for (double g : logits2.grad()) CHECK(g == 0.0);
}

TEST_CASE("all-frames loss does not decrease as z2 moves away from z1") {
  SeededRng rng(111);
  Tensor base({2, 4}), direction({2, 4});
  for (auto& v : base.values_mut()) v = rng.normal();
  for (auto& v : direction.values_mut()) v = rng.normal();
  SimilarityConfig cfg;
  cfg.target = SimTarget::encoder_hidden;
  cfg.trigger = SimTrigger::all_frames;
  const std::vector<double> peaks{0.5, 0.5};
  double prev = sim_loss(base, base, peaks, peaks, cfg).item();
  CHECK(prev == doctest::Approx(-1.0).epsilon(1e-12));
  for (double mag : {0.25, 0.5, 1.0, 2.0}) {
    Tensor moved = base.detach();
    for (std::size_t i = 0; i < moved.size(); ++i) moved[i] += mag * direction[i];
    const double loss = sim_loss(base, moved, peaks, peaks, cfg).item();
    CHECK(loss >= prev - 1e-12);
    prev = loss;
  }
}

TEST_CASE("kl metric requires distribution targets") {
  SimilarityConfig cfg;
  cfg.metric = SimMetric::kl;
  cfg.target = SimTarget::encoder_hidden;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("symmetric kl sim loss is zero on identical branches") {
  SeededRng rng(131);
  Tensor logits({3, 4});
  for (auto& v : logits.values_mut()) v = rng.normal();
  const Tensor lp = log_softmax(logits);
  SimilarityConfig cfg;
  cfg.metric = SimMetric::kl;
  cfg.trigger = SimTrigger::all_frames;
  CHECK(sim_loss(lp, lp, {0.1, 0.2, 0.3}, {0.1, 0.2, 0.3}, cfg).item() ==
        doctest::Approx(0.0).epsilon(1e-14));
}
