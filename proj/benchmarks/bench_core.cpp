#include <benchmark/benchmark.h>

#include "spikereg/config.hpp"
#include "spikereg/ctc.hpp"
#include "spikereg/data.hpp"
#include "spikereg/dropout.hpp"
#include "spikereg/model.hpp"
#include "spikereg/rng.hpp"
#include "spikereg/similarity.hpp"
#include "spikereg/train.hpp"

namespace {

using namespace spikereg;

Tensor random_log_posterior(std::size_t frames, int vocab, SeededRng& rng) {
  Tensor logits({frames, static_cast<std::size_t>(vocab) + 1});
  for (auto& v : logits.values_mut()) v = rng.normal(0.0, 1.5);
  return log_softmax(logits);
}

void BM_CtcLossForward(benchmark::State& state) {
  SeededRng rng(1);
  const auto frames = static_cast<std::size_t>(state.range(0));
  const Tensor lp = random_log_posterior(frames, 8, rng);
  LabelSeq target;
  for (std::size_t i = 0; i < frames / 4; ++i) {
    target.push_back(static_cast<int>(rng.uniform_int(1, 8)));
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(ctc_loss(lp, target).item());
  }
}
BENCHMARK(BM_CtcLossForward)->Arg(16)->Arg(64)->Arg(256);

void BM_CtcLossBackward(benchmark::State& state) {
  SeededRng rng(2);
  const auto frames = static_cast<std::size_t>(state.range(0));
  Tensor lp = random_log_posterior(frames, 8, rng);
  lp.require_grad();
  LabelSeq target;
  for (std::size_t i = 0; i < frames / 4; ++i) {
    target.push_back(static_cast<int>(rng.uniform_int(1, 8)));
  }
  for (auto _ : state) {
    lp.zero_grad();
    Tape tape;
    backward(ctc_loss(lp, target));
    benchmark::DoNotOptimize(lp.grad().data());
  }
}
BENCHMARK(BM_CtcLossBackward)->Arg(16)->Arg(64)->Arg(256);

void BM_SpikeFilter(benchmark::State& state) {
  SeededRng rng(3);
  std::vector<double> peaks(static_cast<std::size_t>(state.range(0)));
  for (auto& p : peaks) p = rng.uniform(0.0, 1.0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(spike_filter(peaks, SpikeDetectionMode::paper_exact).count());
  }
}
BENCHMARK(BM_SpikeFilter)->Arg(64)->Arg(1024);

void BM_MaskSampling(benchmark::State& state) {
  SeededRng rng(4);
  DropoutSpec spec;
  spec.mode = DropoutMode::spatial_temporal;
  spec.rate = 0.2;
  for (auto _ : state) {
    benchmark::DoNotOptimize(sample_mask(spec, 64, 32, rng).scale);
  }
}
BENCHMARK(BM_MaskSampling);

void BM_EncoderForward(benchmark::State& state) {
  SeededRng rng(5);
  ModelConfig cfg;  // miniature defaults
  Model model(cfg, SeededRng(7));
  Tensor feats({static_cast<std::size_t>(state.range(0)), cfg.feature_dim});
  for (auto& v : feats.values_mut()) v = rng.normal();
  const DropoutCtx inference{false, nullptr};
  for (auto _ : state) {
    benchmark::DoNotOptimize(model.encoder_forward(feats, inference).log_probs[0]);
  }
}
BENCHMARK(BM_EncoderForward)->Arg(32)->Arg(128);

void BM_SiameseTrainStep(benchmark::State& state) {
  SeededRng rng(6);
  ExperimentConfig cfg = preset_config("BiCTC-T-DropC");
  cfg.model.site_dropout = resolve_site_dropout(cfg.dropout);
  Model model(cfg.model, SeededRng(9));
  Adam optimizer(model.params(), cfg.optim);

  UttBatch batch;
  batch.features = Tensor({4, 32, cfg.model.feature_dim});
  for (auto& v : batch.features.values_mut()) v = rng.normal();
  batch.lengths = {32, 30, 28, 26};
  batch.labels = {{1, 2, 3}, {4, 5}, {6, 7, 8}, {1, 5}};
  batch.ids = {"a", "b", "c", "d"};
  const UttBatch dup = make_siamese_batch(batch);

  std::size_t step = 0;
  for (auto _ : state) {
    Tape tape;
    BatchLoss loss = siamese_batch_loss(model, dup, cfg, step++, cfg.lambda);
    backward(loss.total);
    optimizer.step();
    benchmark::DoNotOptimize(loss.breakdown.l_total);
  }
}
BENCHMARK(BM_SiameseTrainStep);

}  // namespace

BENCHMARK_MAIN();
