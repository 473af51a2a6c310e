#include "spikereg/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <stdexcept>

#include "json.hpp"

namespace spikereg {

namespace {

using nlohmann::ordered_json;

SeededRng branch_stream(std::uint64_t branch_seed, std::size_t step_index, std::size_t utt) {
  return SeededRng(branch_seed).stream(step_index).stream(utt);
}

Tensor mean_of(std::vector<Tensor>& terms) {
  Tensor acc = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  return smul(acc, 1.0 / static_cast<double>(terms.size()));
}

ErrorReport score_split(const Model& model, const CorpusSplit& split,
                        std::vector<CtcPosterior>* posteriors_out = nullptr) {
  ErrorReport total;
  const DropoutCtx inference{false, nullptr};
  for (const Utterance& utt : split.utterances) {
    EncoderOut enc = model.encoder_forward(utt.features, inference);
    CtcPosterior posterior(enc.log_probs);
    total.merge(edit_distance(utt.labels, greedy_decode(posterior)));
    if (posteriors_out != nullptr) posteriors_out->push_back(std::move(posterior));
  }
  return total;
}

}  // namespace

UttBatch make_siamese_batch(const UttBatch& batch) {
  const std::size_t n = batch.size();
  if (n == 0) throw std::invalid_argument("make_siamese_batch: empty batch");
  UttBatch dup;
  const std::size_t t_max = batch.max_frames(), f = batch.feature_dim();
  dup.features = Tensor::zeros({2 * n, t_max, f});
  auto dv = dup.features.values_mut();
  const auto sv = batch.features.values();
  std::copy(sv.begin(), sv.end(), dv.begin());
  std::copy(sv.begin(), sv.end(), dv.begin() + static_cast<std::ptrdiff_t>(sv.size()));
  dup.lengths = batch.lengths;
  dup.lengths.insert(dup.lengths.end(), batch.lengths.begin(), batch.lengths.end());
  dup.labels = batch.labels;
  dup.labels.insert(dup.labels.end(), batch.labels.begin(), batch.labels.end());
  dup.ids = batch.ids;
  dup.ids.insert(dup.ids.end(), batch.ids.begin(), batch.ids.end());
  return dup;
}

Adam::Adam(std::map<std::string, Tensor>& params, OptimConfig cfg) : cfg_(std::move(cfg)) {
  for (auto& [name, tensor] : params) {
    slots_.push_back({tensor, std::vector<double>(tensor.size(), 0.0),
                      std::vector<double>(tensor.size(), 0.0)});
  }
}

void Adam::step() {
  ++t_;
  const double warmup_factor =
      cfg_.warmup_steps == 0
          ? 1.0
          : std::min(1.0, static_cast<double>(t_) / static_cast<double>(cfg_.warmup_steps));
  const double lr = cfg_.lr * warmup_factor;
  last_lr_ = lr;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (Slot& slot : slots_) {
    if (!slot.param.has_grad()) continue;
    auto g = slot.param.grad();
    auto v = slot.param.values_mut();
    for (std::size_t i = 0; i < v.size(); ++i) {
      slot.m[i] = cfg_.beta1 * slot.m[i] + (1.0 - cfg_.beta1) * g[i];
      slot.v[i] = cfg_.beta2 * slot.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double m_hat = slot.m[i] / bc1;
      const double v_hat = slot.v[i] / bc2;
      v[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
    }
    slot.param.zero_grad();
  }
}

BatchLoss siamese_batch_loss(const Model& model, const UttBatch& duplicated,
                             const ExperimentConfig& cfg, std::size_t step_index,
                             double lambda_eff) {
  if (duplicated.size() % 2 != 0 || duplicated.size() == 0) {
    throw std::invalid_argument("siamese_batch_loss: expected a duplicated batch of size 2N");
  }
  const std::size_t n = duplicated.size() / 2;
  const bool use_att = cfg.alpha < 1.0 && cfg.model.decoder_enabled;
  const bool use_sim = lambda_eff > 0.0;

  std::vector<Tensor> ctc1, ctc2, att1, att2, sims;
  for (std::size_t i = 0; i < n; ++i) {
    SeededRng rng1 = branch_stream(cfg.seeds.dropout_branch1, step_index, i);
    SeededRng rng2 = branch_stream(cfg.seeds.dropout_branch2, step_index, i);
    const DropoutCtx ctx1{true, &rng1};
    const DropoutCtx ctx2{true, &rng2};

    const Tensor feats1 = duplicated.utterance_features(i);
    const Tensor feats2 = duplicated.utterance_features(n + i);
    const LabelSeq& labels = duplicated.labels[i];

    EncoderOut enc1 = model.encoder_forward(feats1, ctx1);
    EncoderOut enc2 = model.encoder_forward(feats2, ctx2);
    ctc1.push_back(ctc_loss(enc1.log_probs, labels));
    ctc2.push_back(ctc_loss(enc2.log_probs, labels));
    if (use_att) {
      att1.push_back(model.decoder_forward(enc1.hidden, labels, ctx1));
      att2.push_back(model.decoder_forward(enc2.hidden, labels, ctx2));
    }
    if (use_sim) {
      const Tensor& z1 = cfg.sim.target == SimTarget::ctc_posterior ? enc1.log_probs : enc1.hidden;
      const Tensor& z2 = cfg.sim.target == SimTarget::ctc_posterior ? enc2.log_probs : enc2.hidden;
      sims.push_back(sim_loss(z1, z2, frame_peak_score(enc1.log_probs, cfg.sim.peak_mode),
                              frame_peak_score(enc2.log_probs, cfg.sim.peak_mode), cfg.sim));
    }
  }

  const Tensor ctc_b1 = mean_of(ctc1);
  const Tensor ctc_b2 = mean_of(ctc2);
  const Tensor l_ctc = smul(add(ctc_b1, ctc_b2), 0.5);

  Tensor l_asr;
  std::optional<double> l_att_value;
  double att_b1 = 0.0, att_b2 = 0.0;
  if (use_att) {
    const Tensor att_t1 = mean_of(att1);
    const Tensor att_t2 = mean_of(att2);
    const Tensor l_att = smul(add(att_t1, att_t2), 0.5);
    l_asr = add(smul(l_ctc, cfg.alpha), smul(l_att, 1.0 - cfg.alpha));
    l_att_value = l_att.item();
    att_b1 = att_t1.item();
    att_b2 = att_t2.item();
  } else {
    l_asr = l_ctc;
  }

  Tensor l_sim = use_sim ? mean_of(sims) : Tensor::scalar(0.0);
  Tensor total = use_sim ? add(l_asr, smul(l_sim, lambda_eff)) : l_asr;

  BatchLoss out;
  out.total = total;
  out.breakdown = combine_losses(l_ctc.item(), l_att_value, l_sim.item(),
                                 use_att ? cfg.alpha : 1.0, lambda_eff);
  out.breakdown.l_asr_branch1 =
      use_att ? cfg.alpha * ctc_b1.item() + (1.0 - cfg.alpha) * att_b1 : ctc_b1.item();
  out.breakdown.l_asr_branch2 =
      use_att ? cfg.alpha * ctc_b2.item() + (1.0 - cfg.alpha) * att_b2 : ctc_b2.item();
  return out;
}

TrainOutputs train(ExperimentConfig cfg, const std::filesystem::path& corpus_dir,
                   const std::filesystem::path& out_dir) {
  const auto start = std::chrono::steady_clock::now();
  CorpusSplit train_split = load_corpus(corpus_dir, "train");
  CorpusSplit dev_split = load_corpus(corpus_dir, "dev");

  cfg.model.vocab_size = train_split.vocab_size;
  cfg.model.feature_dim = train_split.feature_dim;
  cfg.model.site_dropout = resolve_site_dropout(cfg.dropout);
  cfg.validate();

  Model model(cfg.model, SeededRng(cfg.seeds.init));
  Adam optimizer(model.params(), cfg.optim);

  TrainingLog log;
  log.preset = cfg.preset;
  log.seeds = cfg.seeds;

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(train_split.utterances.size());
    std::iota(order.begin(), order.end(), 0);
    SeededRng shuffle_rng = SeededRng(cfg.seeds.data_order).stream(epoch);
    for (std::size_t i = 0; i + 1 < order.size(); ++i) {
      const auto j = static_cast<std::size_t>(
          shuffle_rng.uniform_int(static_cast<std::int64_t>(i),
                                  static_cast<std::int64_t>(order.size() - 1)));
      std::swap(order[i], order[j]);
    }

    const double lambda_eff = (cfg.lambda_ramp && epoch == 0) ? 0.0 : cfg.lambda;
    for (std::size_t pos = 0; pos < order.size(); pos += cfg.batch_size) {
      const std::size_t take = std::min(cfg.batch_size, order.size() - pos);
      std::vector<std::size_t> chunk(order.begin() + static_cast<std::ptrdiff_t>(pos),
                                     order.begin() + static_cast<std::ptrdiff_t>(pos + take));
      const UttBatch dup = make_siamese_batch(train_split.batch_of(chunk));

      Tape tape;
      BatchLoss batch_loss = siamese_batch_loss(model, dup, cfg, step, lambda_eff);
      if (!std::isfinite(batch_loss.breakdown.l_total)) {
        throw std::runtime_error("training diverged: non-finite loss at step " +
                                 std::to_string(step + 1));
      }
      backward(batch_loss.total);
      optimizer.step();
      log.steps.push_back({step + 1, epoch, batch_loss.breakdown, optimizer.last_lr()});
      ++step;
    }

    log.epochs.push_back({epoch, score_split(model, dev_split)});
  }

  std::filesystem::create_directories(out_dir);
  const auto checkpoint_path = out_dir / "checkpoint.bin";
  model.save(checkpoint_path, cfg.to_key_values());
  log.write_jsonl(out_dir / "train_log.jsonl");
  cfg.save(out_dir / "config.resolved");

  log.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  {
    std::ofstream timing(out_dir / "timing.txt");
    timing << "wall_clock_seconds " << log.wall_clock_seconds << "\n";
  }
  return {std::move(log), checkpoint_path};
}

EvalResult evaluate(const Model& model, const ExperimentConfig& cfg, const CorpusSplit& split,
                    const EvalOptions& opts) {
  EvalResult result;
  std::vector<CtcPosterior> posteriors;
  result.errors = score_split(model, split, &posteriors);

  if (!opts.with_analysis) return result;

  std::vector<std::string> ids;
  ids.reserve(split.utterances.size());
  for (const auto& utt : split.utterances) ids.push_back(utt.id);
  result.analysis =
      spike_histogram(posteriors, cfg.sim.spike_mode, cfg.sim.peak_mode, opts.hist_bins, &ids);

  // Positive pairs mirror what the similarity loss regularizes: the two
  // branches' posteriors at spike frames, dropout active on held-out data.
  Model branches = model;
  SiteDropout sites = resolve_site_dropout(cfg.dropout);
  branches.set_site_dropout(sites);

  std::vector<std::pair<std::vector<double>, std::vector<double>>> pairs;
  std::vector<std::vector<double>> cloud;
  for (std::size_t u = 0; u < split.utterances.size(); ++u) {
    SeededRng rng1 = SeededRng(opts.analysis_seed).stream(1).stream(u);
    SeededRng rng2 = SeededRng(opts.analysis_seed).stream(2).stream(u);
    const DropoutCtx ctx1{true, &rng1};
    const DropoutCtx ctx2{true, &rng2};
    const Tensor& feats = split.utterances[u].features;
    EncoderOut enc1 = branches.encoder_forward(feats, ctx1);
    EncoderOut enc2 = branches.encoder_forward(feats, ctx2);

    const auto peaks1 = frame_peak_score(enc1.log_probs, cfg.sim.peak_mode);
    const auto peaks2 = frame_peak_score(enc2.log_probs, cfg.sim.peak_mode);
    const SpikeMask sp1 = spike_filter(peaks1, cfg.sim.spike_mode, 1);
    const SpikeMask sp2 = spike_filter(peaks2, cfg.sim.spike_mode, 2);

    const std::size_t t_len = enc1.log_probs.dim(0);
    const std::size_t classes = enc1.log_probs.dim(1);
    auto prob_row = [classes](const Tensor& lp, std::size_t t) {
      std::vector<double> row(classes);
      for (std::size_t k = 0; k < classes; ++k) row[k] = std::exp(lp.at(t, k));
      return row;
    };
    for (std::size_t t = 0; t < t_len; ++t) {
      const bool s1 = sp1.indicator[t] != 0, s2 = sp2.indicator[t] != 0;
      if (s1 || s2) {
        pairs.emplace_back(prob_row(enc1.log_probs, t), prob_row(enc2.log_probs, t));
      }
      // the uniformity cloud uses one branch only: mixing both branches
      // would seed it with the very cross-branch near-duplicates the
      // similarity loss creates, biasing the spread estimate
      if (s1) cloud.push_back(prob_row(enc1.log_probs, t));
    }
  }

  if (!pairs.empty() && cloud.size() >= 2) {
    result.analysis.alignment = alignment_metric(pairs);
    result.analysis.uniformity = uniformity_metric(cloud);
    result.analysis.has_pair_metrics = true;
  } else {
    result.analysis.alignment = std::numeric_limits<double>::quiet_NaN();
    result.analysis.uniformity = std::numeric_limits<double>::quiet_NaN();
    result.analysis.has_pair_metrics = false;
  }
  return result;
}

// ---- log io ----

void TrainingLog::write_jsonl(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write training log: " + path.string());
  {
    ordered_json run;
    run["type"] = "run";
    run["preset"] = preset;
    run["seed_init"] = seeds.init;
    run["seed_dropout1"] = seeds.dropout_branch1;
    run["seed_dropout2"] = seeds.dropout_branch2;
    run["seed_data"] = seeds.data_order;
    os << run.dump() << "\n";
  }
  for (const StepRecord& s : steps) {
    ordered_json j;
    j["type"] = "step";
    j["step"] = s.step;
    j["epoch"] = s.epoch;
    j["l_ctc"] = s.losses.l_ctc;
    j["has_att"] = s.losses.has_att;
    j["l_att"] = s.losses.l_att;
    j["l_asr"] = s.losses.l_asr;
    j["l_sim"] = s.losses.l_sim;
    j["l_total"] = s.losses.l_total;
    j["alpha"] = s.losses.alpha;
    j["lambda"] = s.losses.lambda;
    j["l_asr_b1"] = s.losses.l_asr_branch1;
    j["l_asr_b2"] = s.losses.l_asr_branch2;
    j["lr"] = s.lr;
    os << j.dump() << "\n";
  }
  for (const EpochRecord& e : epochs) {
    ordered_json j;
    j["type"] = "epoch";
    j["epoch"] = e.epoch;
    j["dev_error_rate"] = e.dev_errors.error_rate();
    j["dev_substitutions"] = e.dev_errors.substitutions;
    j["dev_insertions"] = e.dev_errors.insertions;
    j["dev_deletions"] = e.dev_errors.deletions;
    j["dev_reference_length"] = e.dev_errors.reference_length;
    os << j.dump() << "\n";
  }
}

TrainingLog TrainingLog::read_jsonl(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open training log: " + path.string());
  TrainingLog log;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    const std::string type = j.at("type");
    if (type == "run") {
      log.preset = j.at("preset");
      log.seeds.init = j.at("seed_init");
      log.seeds.dropout_branch1 = j.at("seed_dropout1");
      log.seeds.dropout_branch2 = j.at("seed_dropout2");
      log.seeds.data_order = j.at("seed_data");
    } else if (type == "step") {
      StepRecord s;
      s.step = j.at("step");
      s.epoch = j.at("epoch");
      s.losses.l_ctc = j.at("l_ctc");
      s.losses.has_att = j.at("has_att");
      s.losses.l_att = j.at("l_att");
      s.losses.l_asr = j.at("l_asr");
      s.losses.l_sim = j.at("l_sim");
      s.losses.l_total = j.at("l_total");
      s.losses.alpha = j.at("alpha");
      s.losses.lambda = j.at("lambda");
      s.losses.l_asr_branch1 = j.at("l_asr_b1");
      s.losses.l_asr_branch2 = j.at("l_asr_b2");
      s.lr = j.at("lr");
      log.steps.push_back(std::move(s));
    } else if (type == "epoch") {
      EpochRecord e;
      e.epoch = j.at("epoch");
      e.dev_errors.substitutions = j.at("dev_substitutions");
      e.dev_errors.insertions = j.at("dev_insertions");
      e.dev_errors.deletions = j.at("dev_deletions");
      e.dev_errors.reference_length = j.at("dev_reference_length");
      log.epochs.push_back(std::move(e));
    }
  }
  return log;
}

}  // namespace spikereg
