#include "spikereg/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace spikereg {

namespace {

std::string fmt_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s, const std::string& key) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw std::invalid_argument("config: bad number for " + key + ": '" + s + "'");
  }
  return v;
}

std::uint64_t parse_u64(const std::string& s, const std::string& key) {
  std::uint64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw std::invalid_argument("config: bad integer for " + key + ": '" + s + "'");
  }
  return v;
}

bool parse_bool(const std::string& s, const std::string& key) {
  if (s == "1" || s == "true") return true;
  if (s == "0" || s == "false") return false;
  throw std::invalid_argument("config: bad boolean for " + key + ": '" + s + "'");
}

}  // namespace

void ExperimentConfig::validate() const {
  model.validate();
  dropout.validate();
  sim.validate();
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw std::invalid_argument("config: alpha must lie in [0, 1]");
  }
  if (lambda < 0.0) throw std::invalid_argument("config: lambda must be >= 0");
  if (alpha < 1.0 && !model.decoder_enabled) {
    throw std::invalid_argument("config: alpha < 1 requires the decoder; set alpha = 1");
  }
  if (batch_size == 0) throw std::invalid_argument("config: batch_size must be >= 1");
  if (epochs == 0) throw std::invalid_argument("config: epochs must be >= 1");
  if (optim.kind != "adam") {
    throw std::invalid_argument("config: unsupported optimizer kind '" + optim.kind + "'");
  }
  const std::uint64_t s[] = {seeds.init, seeds.dropout_branch1, seeds.dropout_branch2,
                             seeds.data_order};
  for (int i = 0; i < 4; ++i) {
    for (int j = i + 1; j < 4; ++j) {
      if (s[i] == s[j]) {
        throw std::invalid_argument("config: seeds must name distinct streams");
      }
    }
  }
}

std::map<std::string, std::string> ExperimentConfig::to_key_values() const {
  std::map<std::string, std::string> kv;
  kv["preset"] = preset;
  kv["model.feature_dim"] = std::to_string(model.feature_dim);
  kv["model.d_model"] = std::to_string(model.d_model);
  kv["model.blocks"] = std::to_string(model.blocks);
  kv["model.heads"] = std::to_string(model.heads);
  kv["model.subsample"] = std::to_string(model.subsample);
  kv["model.ffn_hidden"] = std::to_string(model.ffn_hidden);
  kv["model.vocab_size"] = std::to_string(model.vocab_size);
  kv["model.decoder"] = model.decoder_enabled ? "1" : "0";
  kv["dropout.mode"] = to_string(dropout.mode);
  kv["dropout.rate"] = fmt_double(dropout.rate);
  kv["dropout.placement"] = to_string(dropout.placement);
  kv["sim.metric"] = to_string(sim.metric);
  kv["sim.trigger"] = to_string(sim.trigger);
  kv["sim.target"] = to_string(sim.target);
  kv["sim.stop_gradient"] = sim.stop_gradient ? "1" : "0";
  kv["sim.peak_mode"] = to_string(sim.peak_mode);
  kv["sim.spike_mode"] = to_string(sim.spike_mode);
  kv["loss.alpha"] = fmt_double(alpha);
  kv["loss.lambda"] = fmt_double(lambda);
  kv["loss.lambda_ramp"] = lambda_ramp ? "1" : "0";
  kv["optim.kind"] = optim.kind;
  kv["optim.lr"] = fmt_double(optim.lr);
  kv["optim.beta1"] = fmt_double(optim.beta1);
  kv["optim.beta2"] = fmt_double(optim.beta2);
  kv["optim.eps"] = fmt_double(optim.eps);
  kv["optim.warmup_steps"] = std::to_string(optim.warmup_steps);
  kv["train.batch_size"] = std::to_string(batch_size);
  kv["train.epochs"] = std::to_string(epochs);
  kv["seed.init"] = std::to_string(seeds.init);
  kv["seed.dropout1"] = std::to_string(seeds.dropout_branch1);
  kv["seed.dropout2"] = std::to_string(seeds.dropout_branch2);
  kv["seed.data"] = std::to_string(seeds.data_order);
  return kv;
}

ExperimentConfig ExperimentConfig::from_key_values(const std::map<std::string, std::string>& kv) {
  ExperimentConfig cfg;
  return apply_overrides(cfg, kv);
}

ExperimentConfig apply_overrides(const ExperimentConfig& base,
                                 const std::map<std::string, std::string>& overrides) {
  ExperimentConfig cfg = base;
  for (const auto& [key, value] : overrides) {
    if (key == "preset") cfg.preset = value;
    else if (key == "model.feature_dim") cfg.model.feature_dim = parse_u64(value, key);
    else if (key == "model.d_model") cfg.model.d_model = parse_u64(value, key);
    else if (key == "model.blocks") cfg.model.blocks = parse_u64(value, key);
    else if (key == "model.heads") cfg.model.heads = parse_u64(value, key);
    else if (key == "model.subsample") cfg.model.subsample = parse_u64(value, key);
    else if (key == "model.ffn_hidden") cfg.model.ffn_hidden = parse_u64(value, key);
    else if (key == "model.vocab_size") cfg.model.vocab_size = static_cast<int>(parse_u64(value, key));
    else if (key == "model.decoder") cfg.model.decoder_enabled = parse_bool(value, key);
    else if (key == "dropout.mode") cfg.dropout.mode = dropout_mode_from_string(value);
    else if (key == "dropout.rate") cfg.dropout.rate = parse_double(value, key);
    else if (key == "dropout.placement") cfg.dropout.placement = dropout_placement_from_string(value);
    else if (key == "sim.metric") cfg.sim.metric = sim_metric_from_string(value);
    else if (key == "sim.trigger") cfg.sim.trigger = sim_trigger_from_string(value);
    else if (key == "sim.target") cfg.sim.target = sim_target_from_string(value);
    else if (key == "sim.stop_gradient") cfg.sim.stop_gradient = parse_bool(value, key);
    else if (key == "sim.peak_mode") cfg.sim.peak_mode = peak_mode_from_string(value);
    else if (key == "sim.spike_mode") cfg.sim.spike_mode = spike_mode_from_string(value);
    else if (key == "loss.alpha") cfg.alpha = parse_double(value, key);
    else if (key == "loss.lambda") cfg.lambda = parse_double(value, key);
    else if (key == "loss.lambda_ramp") cfg.lambda_ramp = parse_bool(value, key);
    else if (key == "optim.kind") cfg.optim.kind = value;
    else if (key == "optim.lr") cfg.optim.lr = parse_double(value, key);
    else if (key == "optim.beta1") cfg.optim.beta1 = parse_double(value, key);
    else if (key == "optim.beta2") cfg.optim.beta2 = parse_double(value, key);
    else if (key == "optim.eps") cfg.optim.eps = parse_double(value, key);
    else if (key == "optim.warmup_steps") cfg.optim.warmup_steps = parse_u64(value, key);
    else if (key == "train.batch_size") cfg.batch_size = parse_u64(value, key);
    else if (key == "train.epochs") cfg.epochs = parse_u64(value, key);
    else if (key == "seed.init") cfg.seeds.init = parse_u64(value, key);
    else if (key == "seed.dropout1") cfg.seeds.dropout_branch1 = parse_u64(value, key);
    else if (key == "seed.dropout2") cfg.seeds.dropout_branch2 = parse_u64(value, key);
    else if (key == "seed.data") cfg.seeds.data_order = parse_u64(value, key);
    else throw std::invalid_argument("config: unknown key '" + key + "'");
  }
  return cfg;
}

void ExperimentConfig::save(const std::filesystem::path& path) const {
  save_key_values(path, to_key_values());
}

std::map<std::string, std::string> load_key_values(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open config file: " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    while (!line.empty() && (line.back() == ' ' || line.back() == '\t' || line.back() == '\r')) {
      line.pop_back();
    }
    std::size_t start = line.find_first_not_of(" \t");
    if (start == std::string::npos) continue;
    const auto eq = line.find('=', start);
    if (eq == std::string::npos) {
      throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                  " is not key=value: '" + line + "'");
    }
    kv[line.substr(start, eq - start)] = line.substr(eq + 1);
  }
  return kv;
}

void save_key_values(const std::filesystem::path& path,
                     const std::map<std::string, std::string>& kv) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write config file: " + path.string());
  for (const auto& [k, v] : kv) os << k << "=" << v << "\n";
}

// ---- presets ----

namespace {

struct PresetDef {
  const char* name;
  DropoutMode mode;
  double rate;
  DropoutPlacement placement;
  SimTrigger trigger;
  double lambda;  // 0 turns the Siamese regularizer off
};

// Standard-dropout variants use rate 0.1, structured variants 0.2 (the best
// rates of the rate sweep); non-Siamese variants set lambda = 0.
constexpr PresetDef kPresets[] = {
    {"Baseline", DropoutMode::standard, 0.1, DropoutPlacement::all, SimTrigger::all_frames, 0.0},
    {"DropC", DropoutMode::standard, 0.1, DropoutPlacement::all, SimTrigger::all_frames, 0.1},
    {"CTC-DropC", DropoutMode::standard, 0.1, DropoutPlacement::all,
     SimTrigger::ctc_one_direction, 0.1},
    {"BiCTC-DropC", DropoutMode::standard, 0.1, DropoutPlacement::all,
     SimTrigger::ctc_bidirectional, 0.1},
    {"S-DropC", DropoutMode::spatial, 0.2, DropoutPlacement::all, SimTrigger::all_frames, 0.1},
    {"T-DropC", DropoutMode::temporal, 0.2, DropoutPlacement::all, SimTrigger::all_frames, 0.1},
    {"S-T-DropC", DropoutMode::spatial_temporal, 0.2, DropoutPlacement::all,
     SimTrigger::all_frames, 0.1},
    {"BiCTC-T-DropC", DropoutMode::temporal, 0.2, DropoutPlacement::all,
     SimTrigger::ctc_bidirectional, 0.1},
    {"EncS-DropC", DropoutMode::spatial, 0.2, DropoutPlacement::encoder_only,
     SimTrigger::all_frames, 0.1},
    {"BiCTC-EncS-DropC", DropoutMode::spatial, 0.2, DropoutPlacement::encoder_only,
     SimTrigger::ctc_bidirectional, 0.1},
    {"S-Drop", DropoutMode::spatial, 0.2, DropoutPlacement::all, SimTrigger::all_frames, 0.0},
    {"T-Drop", DropoutMode::temporal, 0.2, DropoutPlacement::all, SimTrigger::all_frames, 0.0},
    {"ConvS-Drop", DropoutMode::spatial, 0.2, DropoutPlacement::conv_only, SimTrigger::all_frames,
     0.0},
    {"EncS-Drop", DropoutMode::spatial, 0.2, DropoutPlacement::encoder_only,
     SimTrigger::all_frames, 0.0},
    {"EncT-Drop", DropoutMode::temporal, 0.2, DropoutPlacement::encoder_only,
     SimTrigger::all_frames, 0.0},
};

}  // namespace

std::vector<std::string> preset_names() {
  std::vector<std::string> names;
  for (const auto& p : kPresets) names.emplace_back(p.name);
  return names;
}

ExperimentConfig preset_config(const std::string& name) {
  for (const auto& p : kPresets) {
    if (name == p.name) {
      ExperimentConfig cfg;
      cfg.preset = p.name;
      cfg.dropout.mode = p.mode;
      cfg.dropout.rate = p.rate;
      cfg.dropout.placement = p.placement;
      cfg.sim.trigger = p.trigger;
      cfg.sim.metric = SimMetric::cosine;
      cfg.lambda = p.lambda;
      return cfg;
    }
  }
  std::ostringstream os;
  os << "unknown preset '" << name << "'; known presets:";
  for (const auto& p : kPresets) os << " " << p.name;
  throw std::invalid_argument(os.str());
}

}  // namespace spikereg
