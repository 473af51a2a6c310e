#include <cmath>
#include <stdexcept>

#include "doctest.h"
#include "spikereg/ctc.hpp"
#include "spikereg/gradcheck.hpp"
#include "spikereg/rng.hpp"
#include "spikereg/verify.hpp"

using namespace spikereg;

namespace {

Tensor uniform_posterior(std::size_t frames, std::size_t classes) {
  const double lp = std::log(1.0 / static_cast<double>(classes));
  return Tensor::full({frames, classes}, lp);
}

Tensor random_log_posterior(std::size_t frames, int vocab, SeededRng& rng) {
  Tensor logits({frames, static_cast<std::size_t>(vocab) + 1});
  for (auto& v : logits.values_mut()) v = rng.normal(0.0, 1.5);
  return log_softmax(logits);
}

}  // namespace

TEST_CASE("two uniform frames, one token: loss is -ln(3/4)") {
  // paths aa, a-, -a collapse to "a": p = 3 * 0.25
  const Tensor lp = uniform_posterior(2, 2);
  const double loss = ctc_loss(lp, {1}).item();
  CHECK(loss == doctest::Approx(-std::log(0.75)).epsilon(1e-12));
  CHECK(loss == doctest::Approx(0.287682).epsilon(1e-5));
  CHECK(ctc_bruteforce(CtcPosterior(lp), {1}) == doctest::Approx(-std::log(0.75)).epsilon(1e-12));
}

TEST_CASE("empty target reduces to the all-blank path") {
  SeededRng rng(5);
  const Tensor lp = random_log_posterior(5, 2, rng);
  double expected = 0.0;
  for (std::size_t t = 0; t < 5; ++t) expected -= lp.at(t, 0);
  CHECK(ctc_loss(lp, {}).item() == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("certain alignment gives zero loss") {
  // probability one on blank, a, blank
  constexpr double kInf = std::numeric_limits<double>::infinity();
  const Tensor lp({3, 2}, {0.0, -kInf, -kInf, 0.0, 0.0, -kInf});
  CHECK(ctc_bruteforce(CtcPosterior(lp), {1}) == doctest::Approx(0.0));
  CHECK(ctc_loss(lp, {1}).item() == doctest::Approx(0.0));
}

TEST_CASE("forward-backward matches enumeration on random instances") {
  SeededRng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor lp = random_log_posterior(4, 2, rng);
    const LabelSeq target = {static_cast<int>(rng.uniform_int(1, 2)),
                             static_cast<int>(rng.uniform_int(1, 2))};
    if (!ctc_feasible(4, target)) continue;
    const double fb = ctc_loss(lp, target).item();
    const double brute = ctc_bruteforce(CtcPosterior(lp), target);
    CHECK(std::abs(fb - brute) < 1e-10);
  }
}

TEST_CASE("infeasible instances are rejected with T and L named") {
  const Tensor lp = uniform_posterior(2, 2);
  try {
    ctc_loss(lp, {1, 1});  // repeat needs T >= 3
    FAIL("expected infeasibility error");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("T=2") != std::string::npos);
    CHECK(msg.find("L=2") != std::string::npos);
  }
  CHECK_THROWS_AS(ctc_bruteforce(CtcPosterior(uniform_posterior(1, 2)), {1, 2}),
                  std::invalid_argument);
}

TEST_CASE("bruteforce rejects oversized instances") {
  CHECK_THROWS_AS(ctc_bruteforce(CtcPosterior(uniform_posterior(20, 9)), {1}),
                  std::invalid_argument);
}

TEST_CASE("ctc gradient matches finite differences") {
  SeededRng rng(23);
  const Tensor lp = random_log_posterior(3, 1, rng);
  auto f = [](const Tensor& x) { return ctc_loss(x, {1}); };
  CHECK(finite_diff_check(f, lp, 1e-5) < 1e-6);
}

TEST_CASE("greedy decoding collapses repeats and drops blanks") {
  auto posterior_from_argmax = [](const std::vector<int>& argmaxes, std::size_t classes) {
    Tensor lp = Tensor::full({argmaxes.size(), classes}, std::log(0.1 / double(classes - 1)));
    for (std::size_t t = 0; t < argmaxes.size(); ++t) {
      // softmax-style rows: winner mass 0.9, the rest share 0.1
      for (std::size_t k = 0; k < classes; ++k) {
        lp.at(t, k) = std::log(k == static_cast<std::size_t>(argmaxes[t])
                                   ? 0.9
                                   : 0.1 / static_cast<double>(classes - 1));
      }
    }
    return CtcPosterior(lp);
  };
  CHECK(greedy_decode(posterior_from_argmax({0, 1, 1, 0, 2}, 3)) == LabelSeq{1, 2});
  CHECK(greedy_decode(posterior_from_argmax({0, 0, 0}, 3)).empty());
  CHECK(greedy_decode(posterior_from_argmax({1, 0, 1}, 3)) == LabelSeq{1, 1});
}

TEST_CASE("argmax ties break toward the lower id") {
  const double lp = std::log(1.0 / 3.0);
  const Tensor uniform({1, 3}, {lp, lp, lp});
  CHECK(greedy_decode(CtcPosterior(uniform)).empty());  // blank (id 0) wins the tie
  const Tensor tie_tokens({1, 3}, {std::log(0.2), std::log(0.4), std::log(0.4)});
  CHECK(greedy_decode(CtcPosterior(tie_tokens)) == LabelSeq{1});
}

TEST_CASE("frame peak score modes") {
  const Tensor lp({1, 3}, {std::log(0.8), std::log(0.15), std::log(0.05)});
  const CtcPosterior posterior(lp);
  CHECK(frame_peak_score(posterior, PeakScoreMode::max_nonblank)[0] ==
        doctest::Approx(0.15).epsilon(1e-12));
  CHECK(frame_peak_score(posterior, PeakScoreMode::blank_complement)[0] ==
        doctest::Approx(0.2).epsilon(1e-12));
  const Tensor uniform = uniform_posterior(1, 3);
  CHECK(frame_peak_score(CtcPosterior(uniform), PeakScoreMode::max_nonblank)[0] ==
        doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  // blank complement of a uniform row over 3 classes is 1 - 1/3
  CHECK(frame_peak_score(CtcPosterior(uniform), PeakScoreMode::blank_complement)[0] ==
        doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("loss is invariant under consistent token relabeling") {
  SeededRng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor lp = random_log_posterior(4, 2, rng);
    // swap tokens 1 and 2 in both posterior columns and target
    Tensor swapped(lp.shape());
    for (std::size_t t = 0; t < 4; ++t) {
      swapped.at(t, 0) = lp.at(t, 0);
      swapped.at(t, 1) = lp.at(t, 2);
      swapped.at(t, 2) = lp.at(t, 1);
    }
    const LabelSeq target = {1, 2};
    const LabelSeq relabeled = {2, 1};
    CHECK(std::abs(ctc_loss(lp, target).item() - ctc_loss(swapped, relabeled).item()) < 1e-12);
  }
}

TEST_CASE("posterior rows must normalize") {
  Tensor bad = uniform_posterior(2, 2);
  bad.at(0, 0) += 0.5;
  CHECK_THROWS_AS(CtcPosterior{bad}, std::invalid_argument);
}

TEST_CASE("exhaustive oracle family stays under tolerance") {
  const CtcOracleErrors err = ctc_oracle_errors(99, 200);
  CHECK(err.loss_dev < 1e-10);
  CHECK(err.grad_rel < 1e-6);
  CHECK(err.instances > 200);
}
