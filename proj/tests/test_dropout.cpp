#include <cmath>

#include "doctest.h"
#include "spikereg/dropout.hpp"
#include "spikereg/gradcheck.hpp"
#include "spikereg/rng.hpp"
#include "spikereg/verify.hpp"

using namespace spikereg;

namespace {

DropoutSpec spec_of(DropoutMode mode, double rate) {
  DropoutSpec s;
  s.mode = mode;
  s.rate = rate;
  return s;
}

double drop_fraction_rows(const StructuredMask& m) {
  std::size_t dropped = 0;
  for (auto r : m.rows_kept) dropped += r == 0;
  return static_cast<double>(dropped) / static_cast<double>(m.rows_kept.size());
}

}  // namespace

TEST_CASE("rate zero keeps everything with unit scale") {
  SeededRng rng(1);
  for (DropoutMode mode : {DropoutMode::standard, DropoutMode::spatial, DropoutMode::temporal,
                           DropoutMode::spatial_temporal}) {
    const StructuredMask m = sample_mask(spec_of(mode, 0.0), 6, 4, rng);
    CHECK(m.scale == 1.0);
    for (std::size_t t = 0; t < 6; ++t) {
      for (std::size_t d = 0; d < 4; ++d) CHECK(m.kept(t, d));
    }
  }
}

TEST_CASE("temporal drop rate sits within 3 sigma of p") {
  SeededRng rng(2);
  const std::size_t t_len = 10000;
  const double p = 0.2;
  const StructuredMask m = sample_mask(spec_of(DropoutMode::temporal, p), t_len, 1, rng);
  const double sigma = std::sqrt(p * (1.0 - p) / static_cast<double>(t_len));
  CHECK(std::abs(drop_fraction_rows(m) - p) < 3.0 * sigma);
  // in temporal mode no column is ever masked
  for (auto c : m.cols_kept) CHECK(c == 1);
}

TEST_CASE("spatial-temporal composition survives at roughly (1-p)^2") {
  SeededRng rng(3);
  const double p = 0.5;
  std::size_t survived = 0, total = 0;
  for (int draw = 0; draw < 400; ++draw) {
    const StructuredMask m = sample_mask(spec_of(DropoutMode::spatial_temporal, p), 10, 10, rng);
    CHECK(m.scale == doctest::Approx(4.0));
    for (std::size_t t = 0; t < 10; ++t) {
      for (std::size_t d = 0; d < 10; ++d) {
        survived += m.kept(t, d) ? 1 : 0;
        ++total;
        // element survives iff its row and column both survive
        CHECK(m.kept(t, d) == (m.rows_kept[t] != 0 && m.cols_kept[d] != 0));
      }
    }
  }
  const double rate = static_cast<double>(survived) / static_cast<double>(total);
  CHECK(rate == doctest::Approx(0.25).epsilon(0.08));
}

TEST_CASE("structured masks zero whole rows or columns") {
  SeededRng rng(4);
  const Tensor x = Tensor::full({5, 3}, 2.0);
  for (int draw = 0; draw < 50; ++draw) {
    const StructuredMask m = sample_mask(spec_of(DropoutMode::temporal, 0.4), 5, 3, rng);
    const Tensor y = apply_dropout(x, m, true);
    for (std::size_t t = 0; t < 5; ++t) {
      const bool zero_row = y.at(t, 0) == 0.0;
      for (std::size_t d = 0; d < 3; ++d) {
        CHECK((y.at(t, d) == 0.0) == zero_row);  // all-or-nothing per frame
        if (!zero_row) CHECK(y.at(t, d) == doctest::Approx(2.0 * m.scale));
      }
    }
  }
  for (int draw = 0; draw < 50; ++draw) {
    const StructuredMask m = sample_mask(spec_of(DropoutMode::spatial, 0.4), 5, 3, rng);
    const Tensor y = apply_dropout(x, m, true);
    for (std::size_t d = 0; d < 3; ++d) {
      const bool zero_col = y.at(0, d) == 0.0;
      for (std::size_t t = 0; t < 5; ++t) CHECK((y.at(t, d) == 0.0) == zero_col);
    }
  }
}

TEST_CASE("inference leaves the input untouched") {
  SeededRng rng(5);
  Tensor x({3, 4});
  for (auto& v : x.values_mut()) v = rng.normal();
  const StructuredMask m = sample_mask(spec_of(DropoutMode::spatial_temporal, 0.5), 3, 4, rng);
  const Tensor y = apply_dropout(x, m, false);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("temporal drop of one frame scales the survivors by 1/(1-p)") {
  SeededRng rng(6);
  StructuredMask m = sample_mask(spec_of(DropoutMode::temporal, 0.2), 5, 2, rng);
  m.rows_kept.assign(5, 1);
  m.rows_kept[3] = 0;  // pin the structure the example describes
  const Tensor x = Tensor::full({5, 2}, 1.0);
  const Tensor y = apply_dropout(x, m, true);
  for (std::size_t t = 0; t < 5; ++t) {
    for (std::size_t d = 0; d < 2; ++d) {
      CHECK(y.at(t, d) == doctest::Approx(t == 3 ? 0.0 : 1.25).epsilon(1e-12));
    }
  }
}

TEST_CASE("dropout gradient equals mask times scale") {
  SeededRng rng(7);
  const StructuredMask m = sample_mask(spec_of(DropoutMode::spatial_temporal, 0.3), 4, 3, rng);
  Tensor x({4, 3});
  for (auto& v : x.values_mut()) v = rng.normal();
  x.require_grad();
  {
    Tape tape;
    backward(sum_all(apply_dropout(x, m, true)));
  }
  const auto g = x.grad();
  for (std::size_t t = 0; t < 4; ++t) {
    for (std::size_t d = 0; d < 3; ++d) {
      CHECK(g[t * 3 + d] == doctest::Approx(m.kept(t, d) ? m.scale : 0.0).epsilon(1e-12));
    }
  }
  CHECK(dropout_grad_max_error(8, 5) < 1e-6);
}

TEST_CASE("mean over many draws preserves the input within 3 sigma") {
  SeededRng rng(9);
  const double p = 0.3;
  const int draws = 10000;
  const double x_val = 1.7;
  const Tensor x = Tensor::full({2, 2}, x_val);
  std::vector<double> acc(4, 0.0);
  for (int i = 0; i < draws; ++i) {
    const StructuredMask m = sample_mask(spec_of(DropoutMode::temporal, p), 2, 2, rng);
    const Tensor y = apply_dropout(x, m, true);
    for (std::size_t j = 0; j < 4; ++j) acc[j] += y[j];
  }
  // per element: value is x*scale with prob (1-p), else 0;
  // sd of the mean = x*scale*sqrt(p(1-p))/sqrt(n)
  const double scale = 1.0 / (1.0 - p);
  const double sigma = x_val * scale * std::sqrt(p * (1.0 - p) / draws);
  for (double sum : acc) CHECK(std::abs(sum / draws - x_val) < 3.0 * sigma);
}

TEST_CASE("distinct streams disagree at the expected rate") {
  const double p = 0.2;
  const std::size_t t_len = 10;
  const int trials = 4000;
  int differing = 0, any_drop = 0;
  SeededRng rng_a = SeededRng(100).stream("branch1");
  SeededRng rng_b = SeededRng(100).stream("branch2");
  for (int i = 0; i < trials; ++i) {
    const StructuredMask a = sample_mask(spec_of(DropoutMode::temporal, p), t_len, 1, rng_a);
    const StructuredMask b = sample_mask(spec_of(DropoutMode::temporal, p), t_len, 1, rng_b);
    differing += a.rows_kept != b.rows_kept;
    bool dropped = false;
    for (auto r : a.rows_kept) dropped |= r == 0;
    for (auto r : b.rows_kept) dropped |= r == 0;
    any_drop += dropped;
  }
  // P(any drop across the two masks) is exactly 1 - (1-p)^(2T); mask
  // inequality happens slightly less often, 1 - (p^2 + (1-p)^2)^T.
  const double p_any = 1.0 - std::pow(1.0 - p, 2.0 * t_len);
  const double p_diff = 1.0 - std::pow(p * p + (1.0 - p) * (1.0 - p), t_len);
  const double sigma_any = std::sqrt(p_any * (1.0 - p_any) / trials);
  const double sigma_diff = std::sqrt(p_diff * (1.0 - p_diff) / trials);
  CHECK(std::abs(any_drop / double(trials) - p_any) < 3.0 * sigma_any);
  CHECK(std::abs(differing / double(trials) - p_diff) < 3.0 * sigma_diff);
}

TEST_CASE("invalid rates and shapes are rejected") {
  SeededRng rng(11);
  CHECK_THROWS(sample_mask(spec_of(DropoutMode::standard, 1.0), 3, 3, rng));
  CHECK_THROWS(sample_mask(spec_of(DropoutMode::standard, -0.1), 3, 3, rng));
  const StructuredMask m = sample_mask(spec_of(DropoutMode::standard, 0.5), 3, 3, rng);
  CHECK_THROWS(apply_dropout(Tensor({2, 3}), m, true));
}
