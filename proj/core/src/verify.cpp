#include "spikereg/verify.hpp"

#include <algorithm>
#include <cmath>

#include "spikereg/config.hpp"
#include "spikereg/ctc.hpp"
#include "spikereg/data.hpp"
#include "spikereg/dropout.hpp"
#include "spikereg/gradcheck.hpp"
#include "spikereg/model.hpp"
#include "spikereg/rng.hpp"
#include "spikereg/similarity.hpp"
#include "spikereg/train.hpp"

namespace spikereg {

namespace {

Tensor randn(Shape shape, SeededRng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.values_mut()) v = rng.normal(0.0, scale);
  return t;
}

// Uniform magnitudes in [lo, hi] with random sign when signed_values is set;
// keeps inputs away from the kinks and poles of relu, log, sqrt and div.
Tensor rand_bounded(Shape shape, SeededRng& rng, double lo, double hi, bool signed_values) {
  Tensor t(std::move(shape));
  for (auto& v : t.values_mut()) {
    const double mag = rng.uniform(lo, hi);
    v = (signed_values && rng.bernoulli(0.5)) ? -mag : mag;
  }
  return t;
}

Tensor random_distribution(std::size_t dim, SeededRng& rng) {
  // softmax of uniform(-1, 1) keeps every component comfortably positive
  Tensor logits({dim});
  for (auto& v : logits.values_mut()) v = rng.uniform(-1.0, 1.0);
  return softmax(logits);
}

double rel_gap(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max(1.0, std::abs(a[i])));
  }
  return worst;
}

}  // namespace

double primitive_op_max_fd_error(std::uint64_t seed, int trials_per_op) {
  SeededRng rng(seed);
  double worst = 0.0;
  auto check = [&worst](const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                        double h = 1e-5) { worst = std::max(worst, finite_diff_check(f, x, h)); };

  for (int trial = 0; trial < trials_per_op; ++trial) {
    const std::size_t r = 2 + static_cast<std::size_t>(rng.uniform_int(0, 2));
    const std::size_t c = 2 + static_cast<std::size_t>(rng.uniform_int(0, 2));
    const Tensor a = randn({r, c}, rng);
    const Tensor b = randn({r, c}, rng);
    const Tensor w = randn({r, c}, rng);
    const Tensor w_t = randn({c, r}, rng);
    const Tensor scalar_op = rand_bounded({1}, rng, 0.5, 2.0, true);
    const Tensor rowvec = randn({c}, rng);
    const Tensor w_row = randn({c}, rng);
    const double k = rng.uniform(-2.0, 2.0);

    auto probe = [&w](Tensor y) { return sum_all(mul(y, w)); };

    check([&](const Tensor& x) { return probe(add(x, b)); }, a);
    check([&](const Tensor& x) { return probe(add(b, x)); }, a);
    check([&](const Tensor& x) { return probe(sub(x, b)); }, a);
    check([&](const Tensor& x) { return probe(sub(b, x)); }, a);
    check([&](const Tensor& x) { return probe(mul(x, b)); }, a);
    check([&](const Tensor& x) { return probe(smul(x, k)); }, a);
    {
      const Tensor denom = rand_bounded({r, c}, rng, 0.5, 2.0, true);
      check([&](const Tensor& x) { return probe(div(x, denom)); }, a);
      check([&](const Tensor& x) { return probe(div(b, x)); }, denom);
    }
    // broadcast variants: scalar and row vector, both sides
    check([&](const Tensor& x) { return probe(add(x, scalar_op)); }, a);
    check([&](const Tensor& x) { return sum_all(mul(add(a, x), w)); }, scalar_op);
    check([&](const Tensor& x) { return probe(mul(x, rowvec)); }, a);
    check([&](const Tensor& x) { return sum_all(mul(mul(a, x), w)); }, rowvec);
    check([&](const Tensor& x) { return sum_all(mul(sub(x, a), w)); }, rowvec);

    {
      const Tensor m2 = randn({c, r}, rng);
      const Tensor w_rr = randn({r, r}, rng);
      check([&](const Tensor& x) { return sum_all(mul(matmul(x, m2), w_rr)); }, a);
    }
    {
      const Tensor m1 = randn({c, r}, rng);
      const Tensor w_cc = randn({c, c}, rng);
      check([&](const Tensor& x) { return sum_all(mul(matmul(m1, x), w_cc)); }, a);
    }
    check([&](const Tensor& x) { return sum_all(mul(transpose(x), w_t)); }, a);

    check([&](const Tensor& x) { return probe(exp(x)); }, a);
    check([&](const Tensor& x) { return probe(log(x)); }, rand_bounded({r, c}, rng, 0.5, 2.5, false));
    check([&](const Tensor& x) { return probe(sqrt(x)); }, rand_bounded({r, c}, rng, 0.5, 2.5, false));
    check([&](const Tensor& x) { return probe(tanh(x)); }, a);
    check([&](const Tensor& x) { return probe(relu(x)); }, rand_bounded({r, c}, rng, 0.1, 2.0, true));

    {
      const Tensor w_col = randn({r}, rng);
      check([&](const Tensor& x) { return sum_all(mul(sum(x, 0), w_row)); }, a);
      check([&](const Tensor& x) { return sum_all(mul(sum(x, 1), w_col)); }, a);
      check([&](const Tensor& x) { return sum_all(mul(mean(x, 0), w_row)); }, a);
      check([&](const Tensor& x) { return sum_all(mul(mean(x, 1), w_col)); }, a);
    }

    check([&](const Tensor& x) { return probe(softmax(x)); }, a);
    check([&](const Tensor& x) { return probe(log_softmax(x)); }, a);

    {
      Tensor mask({r, c});
      for (auto& v : mask.values_mut()) v = rng.bernoulli(0.4) ? 1.0 : 0.0;
      check([&](const Tensor& x) { return probe(masked_fill(x, mask, 3.25)); }, a);
    }
    {
      const Tensor tail = randn({2, c}, rng);
      const Tensor w_cat = randn({r + 2, c}, rng);
      check([&](const Tensor& x) { return sum_all(mul(concat0(x, tail), w_cat)); }, a);
      check([&](const Tensor& x) { return sum_all(mul(concat0(a, x), w_cat)); }, tail);
    }
    {
      const Tensor w_slice = randn({r - 1, c}, rng);
      check([&](const Tensor& x) { return sum_all(mul(slice0(x, 1, r - 1), w_slice)); }, a);
    }
  }
  return worst;
}

SimilarityGradErrors similarity_grad_errors(std::uint64_t seed, int trials, std::size_t dim) {
  SeededRng rng(seed);
  SimilarityGradErrors err;
  for (int trial = 0; trial < trials; ++trial) {
    {
      const Tensor z1 = randn({dim}, rng);
      const Tensor z2 = randn({dim}, rng);
      const std::vector<double> analytic = cosine_grad(z1, z2);
      auto f = [&](const Tensor& x) { return cosine_sim(x, z2); };
      err.cosine_fd = std::max(err.cosine_fd, rel_gap(analytic, central_differences(f, z1, 1e-5)));
      const std::vector<double> agrad = analytic_grad(f, z1);
      for (std::size_t j = 0; j < dim; ++j) {
        err.cosine_autodiff = std::max(err.cosine_autodiff, std::abs(agrad[j] - analytic[j]));
      }
    }
    {
      const Tensor z1 = random_distribution(dim, rng);
      const Tensor z2 = random_distribution(dim, rng);
      const std::vector<double> analytic = kl_grad(z1, z2);

      // Tied perturbation: component j moves in both distributions at once,
      // matching the shared-parameter reading of the gradient form.
      const Tensor z1c = z1.detach();
      const Tensor z2c = z2.detach();
      auto f = [&](const Tensor& x) {
        Tensor shifted = add(z2c, sub(x, z1c));
        return sum_all(mul(x, sub(log(x), log(shifted))));
      };
      err.kl_fd = std::max(err.kl_fd, rel_gap(analytic, central_differences(f, z1, 1e-6)));

      Tensor z1t = z1.detach();
      Tensor z2t = z2.detach();
      z1t.require_grad();
      z2t.require_grad();
      {
        Tape tape;
        backward(kl_sim(z1t, z2t));
      }
      auto g1 = z1t.grad();
      auto g2 = z2t.grad();
      for (std::size_t j = 0; j < dim; ++j) {
        err.kl_autodiff = std::max(err.kl_autodiff, std::abs((g1[j] + g2[j]) - analytic[j]));
      }
    }
  }
  return err;
}

namespace {

Tensor random_log_posterior(std::size_t frames, int vocab, SeededRng& rng) {
  Tensor logits({frames, static_cast<std::size_t>(vocab) + 1});
  for (auto& v : logits.values_mut()) v = rng.normal(0.0, 1.5);
  return log_softmax(logits);
}

void ctc_one_instance(const Tensor& log_probs, const LabelSeq& target, CtcOracleErrors& err) {
  const double fb = ctc_loss(log_probs, target).item();
  const double brute = ctc_bruteforce(CtcPosterior(log_probs), target);
  err.loss_dev = std::max(err.loss_dev, std::abs(fb - brute));
  auto f = [&target](const Tensor& x) { return ctc_loss(x, target); };
  err.grad_rel = std::max(err.grad_rel, finite_diff_check(f, log_probs, 1e-5));
  ++err.instances;
}

}  // namespace

CtcOracleErrors ctc_oracle_errors(std::uint64_t seed, int random_instances) {
  SeededRng rng(seed);
  CtcOracleErrors err;

  // exhaustive family: every target with L <= 2 over K <= 2, frames T <= 4
  for (int k = 1; k <= 2; ++k) {
    std::vector<LabelSeq> targets{{}};
    for (int a = 1; a <= k; ++a) {
      targets.push_back({a});
      for (int b = 1; b <= k; ++b) targets.push_back({a, b});
    }
    for (std::size_t t = 1; t <= 4; ++t) {
      for (const LabelSeq& target : targets) {
        if (!ctc_feasible(t, target)) continue;
        ctc_one_instance(random_log_posterior(t, k, rng), target, err);
      }
    }
  }

  for (int i = 0; i < random_instances; ++i) {
    int k = 0;
    std::size_t t = 0;
    LabelSeq target;
    do {  // resample until the instance admits an alignment path
      k = static_cast<int>(rng.uniform_int(1, 2));
      t = static_cast<std::size_t>(rng.uniform_int(1, 4));
      target.clear();
      const auto len = rng.uniform_int(0, 2);
      for (std::int64_t j = 0; j < len; ++j) {
        target.push_back(static_cast<int>(rng.uniform_int(1, k)));
      }
    } while (!ctc_feasible(t, target));
    ctc_one_instance(random_log_posterior(t, k, rng), target, err);
  }
  return err;
}

double dropout_grad_max_error(std::uint64_t seed, int trials) {
  SeededRng rng(seed);
  double worst = 0.0;
  const DropoutMode modes[] = {DropoutMode::standard, DropoutMode::spatial, DropoutMode::temporal,
                               DropoutMode::spatial_temporal};
  for (int trial = 0; trial < trials; ++trial) {
    for (DropoutMode mode : modes) {
      const std::size_t t_len = 3 + static_cast<std::size_t>(rng.uniform_int(0, 2));
      const std::size_t d = 2 + static_cast<std::size_t>(rng.uniform_int(0, 2));
      DropoutSpec spec;
      spec.mode = mode;
      spec.rate = 0.3;
      const StructuredMask mask = sample_mask(spec, t_len, d, rng);
      const Tensor x = randn({t_len, d}, rng);
      const Tensor w = randn({t_len, d}, rng);
      auto f = [&](const Tensor& probe) {
        return sum_all(mul(apply_dropout(probe, mask, true), w));
      };
      worst = std::max(worst, finite_diff_check(f, x, 1e-5));
    }
  }
  return worst;
}

double model_grad_max_error(std::uint64_t seed) {
  ExperimentConfig cfg;
  cfg.model.feature_dim = 4;
  cfg.model.d_model = 8;
  cfg.model.blocks = 1;
  cfg.model.heads = 2;
  cfg.model.subsample = 2;
  cfg.model.ffn_hidden = 16;
  cfg.model.vocab_size = 2;
  cfg.model.decoder_enabled = true;
  cfg.dropout.mode = DropoutMode::temporal;
  cfg.dropout.rate = 0.3;
  cfg.dropout.placement = DropoutPlacement::all;
  cfg.model.site_dropout = resolve_site_dropout(cfg.dropout);
  cfg.sim.trigger = SimTrigger::ctc_bidirectional;
  cfg.sim.target = SimTarget::ctc_posterior;
  cfg.alpha = 0.3;
  cfg.lambda = 0.1;

  SeededRng data_rng = SeededRng(seed).stream("features");
  Model model(cfg.model, SeededRng(seed));

  UttBatch batch;
  batch.features = randn({1, 6, 4}, data_rng);
  batch.lengths = {6};
  batch.labels = {{1, 2}};
  batch.ids = {"gradcheck-utt"};
  const UttBatch dup = make_siamese_batch(batch);

  auto loss_value = [&]() { return siamese_batch_loss(model, dup, cfg, 0, cfg.lambda); };

  // analytic gradients in one reverse sweep
  for (auto& [name, p] : model.params()) p.zero_grad();
  std::map<std::string, std::vector<double>> analytic;
  {
    Tape tape;
    BatchLoss bl = loss_value();
    backward(bl.total);
    for (auto& [name, p] : model.params()) {
      auto g = p.grad();
      analytic[name].assign(g.begin(), g.end());
    }
  }

  const double h = 1e-5;
  double worst = 0.0;
  for (auto& [name, p] : model.params()) {
    auto values = p.values_mut();
    const auto& grad = analytic[name];
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = loss_value().total.item();
      values[i] = saved - h;
      const double down = loss_value().total.item();
      values[i] = saved;
      const double fd = (up - down) / (2.0 * h);
      worst = std::max(worst, std::abs(grad[i] - fd) / std::max(1.0, std::abs(grad[i])));
    }
  }
  return worst;
}

std::vector<SuiteResult> run_verification_suites(std::uint64_t seed) {
  std::vector<SuiteResult> results;
  results.push_back({"primitive-ops-fd", primitive_op_max_fd_error(seed, 20), 1e-6});
  const SimilarityGradErrors sim = similarity_grad_errors(seed, 100, 8);
  results.push_back({"cosine-grad-fd", sim.cosine_fd, 1e-6});
  results.push_back({"kl-grad-fd", sim.kl_fd, 1e-6});
  results.push_back({"cosine-grad-autodiff", sim.cosine_autodiff, 1e-10});
  results.push_back({"kl-grad-autodiff", sim.kl_autodiff, 1e-10});
  const CtcOracleErrors ctc = ctc_oracle_errors(seed, 200);
  results.push_back({"ctc-loss-vs-enumeration", ctc.loss_dev, 1e-10});
  results.push_back({"ctc-grad-fd", ctc.grad_rel, 1e-6});
  results.push_back({"dropout-grad-fd", dropout_grad_max_error(seed, 10), 1e-6});
  results.push_back({"model-grad-fd", model_grad_max_error(seed), 1e-5});
  return results;
}

}  // namespace spikereg
