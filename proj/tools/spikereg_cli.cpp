// Command-line front end: corpus generation, training, evaluation, analysis
// and the gradient verification suites.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "spikereg/config.hpp"
#include "spikereg/data.hpp"
#include "spikereg/eval.hpp"
#include "spikereg/model.hpp"
#include "spikereg/train.hpp"
#include "spikereg/verify.hpp"

namespace {

using namespace spikereg;

struct TrainArgs {
  std::string preset = "Baseline";
  std::string config_file;
  std::string corpus;
  std::string out = "runs/out";
  std::map<std::string, std::string> overrides;
};

ExperimentConfig resolve_config(const TrainArgs& args) {
  ExperimentConfig cfg = preset_config(args.preset);
  if (!args.config_file.empty()) {
    cfg = apply_overrides(cfg, load_key_values(args.config_file));
  }
  cfg = apply_overrides(cfg, args.overrides);
  return cfg;
}

int run_train(const TrainArgs& args) {
  const ExperimentConfig cfg = resolve_config(args);
  const TrainOutputs out = train(cfg, args.corpus, args.out);
  const EpochRecord& last = out.log.epochs.back();
  std::cout << "trained preset " << cfg.preset << " for " << out.log.steps.size() << " steps; "
            << "final dev error rate " << last.dev_errors.error_rate() << "\n";
  std::cout << "checkpoint: " << out.checkpoint_path.string() << "\n";
  std::cerr << "wall clock: " << out.log.wall_clock_seconds << " s\n";
  return 0;
}

// Loads a checkpoint together with the experiment config echoed in its
// header.
std::pair<Model, ExperimentConfig> load_run(const std::string& checkpoint) {
  std::map<std::string, std::string> header;
  Model model = Model::load(checkpoint, &header);
  std::map<std::string, std::string> experiment_keys;
  for (const auto& [k, v] : header) {
    if (k.rfind("model.", 0) == 0) continue;  // architecture is authoritative from the model
    experiment_keys[k] = v;
  }
  ExperimentConfig cfg = ExperimentConfig::from_key_values(experiment_keys);
  cfg.model = model.config();
  return {std::move(model), std::move(cfg)};
}

int run_evaluate(const std::string& checkpoint, const std::string& corpus,
                 const std::string& split_name, const std::string& report_path) {
  auto [model, cfg] = load_run(checkpoint);
  const CorpusSplit split = load_corpus(corpus, split_name);
  const EvalResult result = evaluate(model, cfg, split);

  std::map<std::string, double> scalars;
  scalars["cer"] = result.errors.error_rate();
  scalars["substitutions"] = static_cast<double>(result.errors.substitutions);
  scalars["insertions"] = static_cast<double>(result.errors.insertions);
  scalars["deletions"] = static_cast<double>(result.errors.deletions);
  scalars["alignment"] = result.analysis.has_pair_metrics
                             ? result.analysis.alignment
                             : std::numeric_limits<double>::quiet_NaN();
  scalars["uniformity"] = result.analysis.has_pair_metrics
                              ? result.analysis.uniformity
                              : std::numeric_limits<double>::quiet_NaN();
  if (!report_path.empty()) write_json_report(report_path, scalars);

  std::cout << "split " << split_name << ": error rate " << result.errors.error_rate() << " (S="
            << result.errors.substitutions << " I=" << result.errors.insertions
            << " D=" << result.errors.deletions << " N=" << result.errors.reference_length
            << ")\n";
  if (result.analysis.has_pair_metrics) {
    std::cout << "alignment " << result.analysis.alignment << ", uniformity "
              << result.analysis.uniformity << "\n";
  } else {
    std::cout << "alignment/uniformity unavailable (no spike pairs)\n";
  }
  return 0;
}

int run_analyze(const std::string& checkpoint, const std::string& corpus,
                const std::string& split_name, std::size_t hist_bins, const std::string& out_dir) {
  auto [model, cfg] = load_run(checkpoint);
  const CorpusSplit split = load_corpus(corpus, split_name);
  EvalOptions opts;
  opts.hist_bins = hist_bins;
  const EvalResult result = evaluate(model, cfg, split, opts);

  std::filesystem::create_directories(out_dir);
  const std::filesystem::path dir(out_dir);
  std::map<std::string, double> scalars;
  scalars["cer"] = result.errors.error_rate();
  scalars["substitutions"] = static_cast<double>(result.errors.substitutions);
  scalars["insertions"] = static_cast<double>(result.errors.insertions);
  scalars["deletions"] = static_cast<double>(result.errors.deletions);
  scalars["alignment"] = result.analysis.has_pair_metrics
                             ? result.analysis.alignment
                             : std::numeric_limits<double>::quiet_NaN();
  scalars["uniformity"] = result.analysis.has_pair_metrics
                              ? result.analysis.uniformity
                              : std::numeric_limits<double>::quiet_NaN();
  write_json_report(dir / "analysis.json", scalars);
  write_histogram_csv(dir / "spike_histogram.csv", result.analysis.histogram);
  write_traces_csv(dir / "spike_traces.csv", result.analysis.traces);

  std::cout << "wrote analysis.json, spike_histogram.csv, spike_traces.csv to " << out_dir << "\n";
  std::cout << "spikes: " << result.analysis.histogram.total_spikes << ", mass at >= 0.9: "
            << result.analysis.histogram.mass_at_or_above(0.9) << "\n";
  return 0;
}

int run_gradcheck(std::uint64_t seed) {
  const std::vector<SuiteResult> results = run_verification_suites(seed);
  bool all_pass = true;
  for (const SuiteResult& r : results) {
    std::printf("%-28s max error %.3e  (tolerance %.1e)  %s\n", r.name.c_str(), r.max_error,
                r.tolerance, r.pass() ? "ok" : "FAIL");
    all_pass = all_pass && r.pass();
  }
  return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Siamese CTC training with spatial-temporal dropout and spike-triggered "
               "similarity regularization"};
  app.require_subcommand(1);

  // gen-data
  CorpusSpec corpus_spec;
  std::string gen_out = "corpus";
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic corpus");
  gen->add_option("--out", gen_out, "output directory");
  gen->add_option("--vocab", corpus_spec.vocab_size, "token vocabulary size K");
  gen->add_option("--feature-dim", corpus_spec.feature_dim, "feature dimension F");
  gen->add_option("--proto-noise", corpus_spec.prototype_noise, "prototype draw scale");
  gen->add_option("--frame-noise", corpus_spec.frame_noise, "per-frame noise sigma");
  gen->add_option("--dur-min", corpus_spec.duration_min, "min frames per token");
  gen->add_option("--dur-max", corpus_spec.duration_max, "max frames per token");
  gen->add_option("--sil-min", corpus_spec.silence_min, "min silence frames between tokens");
  gen->add_option("--sil-max", corpus_spec.silence_max, "max silence frames between tokens");
  gen->add_option("--len-min", corpus_spec.label_len_min, "min labels per utterance");
  gen->add_option("--len-max", corpus_spec.label_len_max, "max labels per utterance");
  gen->add_option("--train", corpus_spec.train_count, "train split size");
  gen->add_option("--dev", corpus_spec.dev_count, "dev split size");
  gen->add_option("--test", corpus_spec.test_count, "test split size");
  gen->add_option("--seed", corpus_spec.master_seed, "master seed");

  // train
  TrainArgs train_args;
  std::vector<std::string> override_kv;
  auto* tr = app.add_subcommand("train", "train one experiment variant");
  tr->add_option("--preset", train_args.preset, "experiment preset name");
  tr->add_option("--config", train_args.config_file, "key=value config overrides file");
  tr->add_option("--corpus", train_args.corpus, "corpus directory")->required();
  tr->add_option("--out", train_args.out, "output directory");
  tr->add_option("--set", override_kv, "extra key=value overrides (repeatable)");
  std::uint64_t seed_init = 0, seed_d1 = 0, seed_d2 = 0, seed_data = 0;
  auto* oi = tr->add_option("--seed-init", seed_init, "parameter init seed");
  auto* o1 = tr->add_option("--seed-dropout1", seed_d1, "branch 1 dropout seed");
  auto* o2 = tr->add_option("--seed-dropout2", seed_d2, "branch 2 dropout seed");
  auto* od = tr->add_option("--seed-data", seed_data, "data order seed");

  // evaluate
  std::string eval_checkpoint, eval_corpus, eval_split = "test", eval_report;
  auto* ev = app.add_subcommand("evaluate", "decode a split and score error rates");
  ev->add_option("--checkpoint", eval_checkpoint, "checkpoint file")->required();
  ev->add_option("--corpus", eval_corpus, "corpus directory")->required();
  ev->add_option("--split", eval_split, "split name (train/dev/test)");
  ev->add_option("--report", eval_report, "write a JSON report here");

  // analyze
  std::string an_checkpoint, an_corpus, an_split = "test", an_out = "analysis";
  std::size_t an_bins = 10;
  auto* an = app.add_subcommand("analyze", "spike histogram, traces and pair metrics");
  an->add_option("--checkpoint", an_checkpoint, "checkpoint file")->required();
  an->add_option("--corpus", an_corpus, "corpus directory")->required();
  an->add_option("--split", an_split, "split name");
  an->add_option("--hist-bins", an_bins, "histogram bin count");
  an->add_option("--out", an_out, "output directory");

  // gradcheck
  std::uint64_t gc_seed = 20240101;
  auto* gc = app.add_subcommand("gradcheck", "run the finite-difference verification suites");
  gc->add_option("--seed", gc_seed, "suite seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      generate_corpus(corpus_spec, gen_out);
      std::cout << "wrote corpus (" << corpus_spec.train_count << "/" << corpus_spec.dev_count
                << "/" << corpus_spec.test_count << " utterances) to " << gen_out << "\n";
      return 0;
    }
    if (tr->parsed()) {
      for (const std::string& kv : override_kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
          std::cerr << "--set expects key=value, got '" << kv << "'\n";
          return 2;
        }
        train_args.overrides[kv.substr(0, eq)] = kv.substr(eq + 1);
      }
      if (oi->count() > 0) train_args.overrides["seed.init"] = std::to_string(seed_init);
      if (o1->count() > 0) train_args.overrides["seed.dropout1"] = std::to_string(seed_d1);
      if (o2->count() > 0) train_args.overrides["seed.dropout2"] = std::to_string(seed_d2);
      if (od->count() > 0) train_args.overrides["seed.data"] = std::to_string(seed_data);
      return run_train(train_args);
    }
    if (ev->parsed()) return run_evaluate(eval_checkpoint, eval_corpus, eval_split, eval_report);
    if (an->parsed()) return run_analyze(an_checkpoint, an_corpus, an_split, an_bins, an_out);
    if (gc->parsed()) return run_gradcheck(gc_seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
