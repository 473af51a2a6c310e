#include "spikereg/model.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace spikereg {

namespace {

constexpr char kCheckpointMagic[] = "spikereg-checkpoint v1";
constexpr double kLayerNormEps = 1e-5;

Tensor sinusoidal_positions(std::size_t length, std::size_t dim) {
  Tensor pe({length, dim});
  auto v = pe.values_mut();
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double angle =
          static_cast<double>(pos) /
          std::pow(10000.0, static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      v[pos * dim + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

// Strided averaging over the raw feature values; inputs carry no gradient.
Tensor subsample_features(const Tensor& features, std::size_t stride) {
  const std::size_t t_in = features.dim(0), f = features.dim(1);
  const std::size_t t_out = (t_in + stride - 1) / stride;
  Tensor out({t_out, f});
  auto ov = out.values_mut();
  const auto iv = features.values();
  for (std::size_t t = 0; t < t_out; ++t) {
    const std::size_t lo = t * stride;
    const std::size_t hi = std::min(lo + stride, t_in);
    for (std::size_t j = 0; j < f; ++j) {
      double acc = 0.0;
      for (std::size_t k = lo; k < hi; ++k) acc += iv[k * f + j];
      ov[t * f + j] = acc / static_cast<double>(hi - lo);
    }
  }
  return out;
}

}  // namespace

SiteDropout resolve_site_dropout(const DropoutSpec& spec) {
  spec.validate();
  DropoutSpec standard = spec;
  standard.mode = DropoutMode::standard;
  SiteDropout sites{standard, standard, standard, standard};
  if (spec.mode == DropoutMode::standard) return sites;
  switch (spec.placement) {
    case DropoutPlacement::all:
      sites.attention = spec;
      sites.conv = spec;
      sites.feed_forward = spec;
      sites.decoder = spec;
      break;
    case DropoutPlacement::encoder_only:
      sites.attention = spec;
      sites.conv = spec;
      sites.feed_forward = spec;
      break;
    case DropoutPlacement::decoder_only:
      sites.decoder = spec;
      break;
    case DropoutPlacement::conv_only:
      sites.conv = spec;
      break;
  }
  return sites;
}

void ModelConfig::validate() const {
  if (d_model == 0 || heads == 0 || d_model % heads != 0) {
    throw std::invalid_argument("model: d_model must be a positive multiple of heads");
  }
  if (subsample != 1 && subsample != 2) {
    throw std::invalid_argument("model: subsample must be 1 or 2");
  }
  if (blocks == 0) throw std::invalid_argument("model: need at least one encoder block");
  if (feature_dim == 0 || ffn_hidden == 0) {
    throw std::invalid_argument("model: feature_dim and ffn_hidden must be positive");
  }
  if (vocab_size < 1) throw std::invalid_argument("model: vocab_size must be >= 1");
  site_dropout.attention.validate();
  site_dropout.conv.validate();
  site_dropout.feed_forward.validate();
  site_dropout.decoder.validate();
}

Model::Model(ModelConfig cfg, SeededRng init_rng) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const std::size_t d = cfg_.d_model;
  const std::size_t dh = cfg_.head_dim();
  const std::size_t classes = static_cast<std::size_t>(cfg_.vocab_size) + 1;

  auto make = [&](const std::string& name, Shape shape, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Tensor t(shape);
    auto v = t.values_mut();
    for (auto& x : v) x = init_rng.uniform(-bound, bound);
    t.require_grad();
    params_.emplace(name, std::move(t));
  };
  auto make_ln = [&](const std::string& prefix) {
    Tensor g = Tensor::full({d}, 1.0);
    Tensor b = Tensor::zeros({d});
    g.require_grad();
    b.require_grad();
    params_.emplace(prefix + ".gain", std::move(g));
    params_.emplace(prefix + ".bias", std::move(b));
  };
  auto make_attention = [&](const std::string& prefix) {
    make_ln(prefix + ".ln");
    for (std::size_t h = 0; h < cfg_.heads; ++h) {
      const std::string hp = prefix + ".h" + std::to_string(h);
      make(hp + ".wq", {d, dh}, d);
      make(hp + ".wk", {d, dh}, d);
      make(hp + ".wv", {d, dh}, d);
    }
    make(prefix + ".wo", {d, d}, d);
    make(prefix + ".bo", {d}, d);
  };
  auto make_ffn = [&](const std::string& prefix) {
    make_ln(prefix + ".ln");
    make(prefix + ".w1", {d, cfg_.ffn_hidden}, d);
    make(prefix + ".b1", {cfg_.ffn_hidden}, d);
    make(prefix + ".w2", {cfg_.ffn_hidden, d}, cfg_.ffn_hidden);
    make(prefix + ".b2", {d}, cfg_.ffn_hidden);
  };

  make("in_proj.w", {cfg_.feature_dim, d}, cfg_.feature_dim);
  make("in_proj.b", {d}, cfg_.feature_dim);
  for (std::size_t b = 0; b < cfg_.blocks; ++b) {
    const std::string bp = "enc.b" + std::to_string(b);
    make_attention(bp + ".att");
    make_ln(bp + ".conv.ln");
    make(bp + ".conv.k0", {d}, 3);  // depthwise taps for offsets -1, 0, +1
    make(bp + ".conv.k1", {d}, 3);
    make(bp + ".conv.k2", {d}, 3);
    make(bp + ".conv.wp", {d, d}, d);
    make(bp + ".conv.bp", {d}, d);
    make_ffn(bp + ".ffn");
  }
  make_ln("enc.final_ln");
  make("ctc_head.w", {d, classes}, d);
  make("ctc_head.b", {classes}, d);

  if (cfg_.decoder_enabled) {
    make("dec.embed", {classes, d}, d);  // row 0 = start marker, rows 1..K = tokens
    make_attention("dec.att");
    make_ffn("dec.ffn");
    make_ln("dec.final_ln");
    make("dec.out.w", {d, classes}, d);  // class 0 = end marker, 1..K = tokens
    make("dec.out.b", {classes}, d);
  }
}

Tensor Model::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) {
    throw std::logic_error("model parameter missing: " + name);
  }
  return it->second;
}

Tensor Model::sublayer_dropout(const Tensor& x, const DropoutSpec& spec,
                               const DropoutCtx& ctx) const {
  if (!ctx.training || spec.rate == 0.0) return x;
  if (ctx.rng == nullptr) {
    throw std::invalid_argument("training forward needs a dropout rng stream");
  }
  const StructuredMask mask = sample_mask(spec, x.dim(0), x.dim(1), *ctx.rng);
  return apply_dropout(x, mask, true);
}

Tensor Model::layer_norm(const Tensor& x, const std::string& prefix) const {
  const std::size_t d = x.dim(1);
  // Row means broadcast back to (T, d) through a constant averaging matrix.
  Tensor averager = Tensor::full({d, d}, 1.0 / static_cast<double>(d));
  Tensor m = matmul(x, averager);
  Tensor var = sub(matmul(mul(x, x), averager), mul(m, m));
  Tensor normed = div(sub(x, m), sqrt(add(var, Tensor::scalar(kLayerNormEps))));
  return add(mul(normed, param(prefix + ".gain")), param(prefix + ".bias"));
}

Tensor Model::attention(const Tensor& queries_in, const Tensor& keys_in, const std::string& prefix,
                        const DropoutCtx& ctx, const DropoutSpec& spec) const {
  const std::size_t dh = cfg_.head_dim();
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> head_outputs_t;  // transposed (dh, Tq) pieces
  head_outputs_t.reserve(cfg_.heads);
  for (std::size_t h = 0; h < cfg_.heads; ++h) {
    const std::string hp = prefix + ".h" + std::to_string(h);
    Tensor q = matmul(queries_in, param(hp + ".wq"));
    Tensor k = matmul(keys_in, param(hp + ".wk"));
    Tensor v = matmul(keys_in, param(hp + ".wv"));
    Tensor scores = smul(matmul(q, transpose(k)), inv_sqrt_dh);
    Tensor mixed = matmul(softmax(scores), v);
    head_outputs_t.push_back(transpose(mixed));
  }
  Tensor merged = transpose(concat0(head_outputs_t));
  Tensor out = add(matmul(merged, param(prefix + ".wo")), param(prefix + ".bo"));
  return sublayer_dropout(out, spec, ctx);
}

Tensor Model::feed_forward(const Tensor& x, const std::string& prefix, const DropoutCtx& ctx,
                           const DropoutSpec& spec) const {
  Tensor h = relu(add(matmul(x, param(prefix + ".w1")), param(prefix + ".b1")));
  Tensor out = add(matmul(h, param(prefix + ".w2")), param(prefix + ".b2"));
  return sublayer_dropout(out, spec, ctx);
}

EncoderOut Model::encoder_forward(const Tensor& features, const DropoutCtx& ctx) const {
  if (features.axes() != 2 || features.dim(1) != cfg_.feature_dim) {
    throw std::invalid_argument("encoder: features must be (T, " +
                                std::to_string(cfg_.feature_dim) + "), got " +
                                shape_str(features.shape()));
  }
  if (features.dim(0) < cfg_.subsample) {
    throw std::invalid_argument("encoder: T=" + std::to_string(features.dim(0)) +
                                " shorter than subsample factor " +
                                std::to_string(cfg_.subsample));
  }

  Tensor x = subsample_features(features, cfg_.subsample);
  const std::size_t t_len = x.dim(0);
  const std::size_t d = cfg_.d_model;
  Tensor h = add(add(matmul(x, param("in_proj.w")), param("in_proj.b")),
                 sinusoidal_positions(t_len, d));

  const SiteDropout& sites = cfg_.site_dropout;
  for (std::size_t b = 0; b < cfg_.blocks; ++b) {
    const std::string bp = "enc.b" + std::to_string(b);
    {
      Tensor ln = layer_norm(h, bp + ".att.ln");
      h = add(h, attention(ln, ln, bp + ".att", ctx, sites.attention));
    }
    {
      Tensor y = layer_norm(h, bp + ".conv.ln");
      Tensor prev = t_len > 1 ? concat0(Tensor::zeros({1, d}), slice0(y, 0, t_len - 1))
                              : Tensor::zeros({1, d});
      Tensor next = t_len > 1 ? concat0(slice0(y, 1, t_len - 1), Tensor::zeros({1, d}))
                              : Tensor::zeros({1, d});
      Tensor dw = add(add(mul(prev, param(bp + ".conv.k0")), mul(y, param(bp + ".conv.k1"))),
                      mul(next, param(bp + ".conv.k2")));
      Tensor pw = add(matmul(dw, param(bp + ".conv.wp")), param(bp + ".conv.bp"));
      h = add(h, sublayer_dropout(pw, sites.conv, ctx));
    }
    h = add(h, feed_forward(layer_norm(h, bp + ".ffn.ln"), bp + ".ffn", ctx, sites.feed_forward));
  }

  Tensor hidden = layer_norm(h, "enc.final_ln");
  Tensor log_probs = log_softmax(add(matmul(hidden, param("ctc_head.w")), param("ctc_head.b")));
  return {hidden, log_probs};
}

Tensor Model::decoder_forward(const Tensor& hidden, const LabelSeq& targets,
                              const DropoutCtx& ctx) const {
  if (!cfg_.decoder_enabled) {
    throw std::invalid_argument("decoder is disabled for this model; train with alpha = 1");
  }
  if (targets.empty()) {
    throw std::invalid_argument("decoder: empty target sequence");
  }
  const std::size_t classes = static_cast<std::size_t>(cfg_.vocab_size) + 1;
  for (int id : targets) {
    if (id < 1 || static_cast<std::size_t>(id) >= classes) {
      throw std::invalid_argument("decoder: target id " + std::to_string(id) + " outside 1.." +
                                  std::to_string(cfg_.vocab_size));
    }
  }

  // Teacher forcing: inputs are <start>, y1..yL; outputs predict y1..yL, <end>.
  const std::size_t steps = targets.size() + 1;
  Tensor input_onehot({steps, classes});
  for (std::size_t i = 1; i < steps; ++i) {
    input_onehot.at(i, static_cast<std::size_t>(targets[i - 1])) = 1.0;
  }
  input_onehot.at(0, 0) = 1.0;  // start marker shares row 0 of the embedding

  Tensor x = add(matmul(input_onehot, param("dec.embed")),
                 sinusoidal_positions(steps, cfg_.d_model));
  const SiteDropout& sites = cfg_.site_dropout;
  x = add(x, attention(layer_norm(x, "dec.att.ln"), hidden, "dec.att", ctx, sites.decoder));
  x = add(x, feed_forward(layer_norm(x, "dec.ffn.ln"), "dec.ffn", ctx, sites.decoder));
  x = layer_norm(x, "dec.final_ln");
  Tensor log_probs = log_softmax(add(matmul(x, param("dec.out.w")), param("dec.out.b")));

  Tensor target_onehot({steps, classes});
  for (std::size_t i = 0; i + 1 < steps; ++i) {
    target_onehot.at(i, static_cast<std::size_t>(targets[i])) = 1.0;
  }
  target_onehot.at(steps - 1, 0) = 1.0;  // end marker is class 0
  Tensor picked = sum_all(mul(log_probs, target_onehot));
  return smul(picked, -1.0 / static_cast<double>(steps));
}

LossBreakdown combine_losses(double l_ctc, std::optional<double> l_att, double l_sim, double alpha,
                             double lambda) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw std::invalid_argument("combine_losses: alpha must lie in [0, 1]");
  }
  if (lambda < 0.0) throw std::invalid_argument("combine_losses: lambda must be >= 0");
  if (!l_att.has_value() && alpha < 1.0) {
    throw std::invalid_argument("combine_losses: attention loss required when alpha < 1");
  }
  LossBreakdown out;
  out.l_ctc = l_ctc;
  out.has_att = l_att.has_value();
  out.l_att = l_att.value_or(0.0);
  out.alpha = alpha;
  out.lambda = lambda;
  out.l_sim = l_sim;
  out.l_asr = l_att.has_value() ? alpha * l_ctc + (1.0 - alpha) * *l_att : l_ctc;
  out.l_total = out.l_asr + lambda * l_sim;
  return out;
}

// ---- checkpoint io ----

namespace {

void write_u64_le(std::ostream& os, std::uint64_t v) {
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(bytes, 8);
}

std::uint64_t read_u64_le(std::istream& is) {
  unsigned char bytes[8];
  is.read(reinterpret_cast<char*>(bytes), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return v;
}

}  // namespace

void Model::save(const std::filesystem::path& path,
                 const std::map<std::string, std::string>& extra_header) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());

  std::map<std::string, std::string> header = extra_header;
  header["model.feature_dim"] = std::to_string(cfg_.feature_dim);
  header["model.d_model"] = std::to_string(cfg_.d_model);
  header["model.blocks"] = std::to_string(cfg_.blocks);
  header["model.heads"] = std::to_string(cfg_.heads);
  header["model.subsample"] = std::to_string(cfg_.subsample);
  header["model.ffn_hidden"] = std::to_string(cfg_.ffn_hidden);
  header["model.vocab_size"] = std::to_string(cfg_.vocab_size);
  header["model.decoder"] = cfg_.decoder_enabled ? "1" : "0";

  os << kCheckpointMagic << "\n";
  os << "header " << header.size() << "\n";
  for (const auto& [k, v] : header) os << k << "=" << v << "\n";
  os << "params " << params_.size() << "\n";
  for (const auto& [name, tensor] : params_) {
    os << name;
    for (std::size_t d : tensor.shape()) os << " " << d;
    os << "\n";
    for (double x : tensor.values()) write_u64_le(os, std::bit_cast<std::uint64_t>(x));
    os << "\n";
  }
  if (!os) throw std::runtime_error("checkpoint write failed: " + path.string());
}

Model Model::load(const std::filesystem::path& path,
                  std::map<std::string, std::string>* extra_header) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path.string());

  std::string line;
  std::getline(is, line);
  if (line != kCheckpointMagic) {
    throw std::runtime_error("not a checkpoint file (bad magic): " + path.string());
  }

  std::map<std::string, std::string> header;
  std::string word;
  std::size_t count = 0;
  is >> word >> count;
  std::getline(is, line);
  if (word != "header") throw std::runtime_error("malformed checkpoint header");
  for (std::size_t i = 0; i < count; ++i) {
    std::getline(is, line);
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error("malformed header line: " + line);
    header[line.substr(0, eq)] = line.substr(eq + 1);
  }

  auto header_num = [&](const std::string& key) -> std::size_t {
    auto it = header.find(key);
    if (it == header.end()) throw std::runtime_error("checkpoint missing header key " + key);
    return static_cast<std::size_t>(std::stoull(it->second));
  };

  ModelConfig cfg;
  cfg.feature_dim = header_num("model.feature_dim");
  cfg.d_model = header_num("model.d_model");
  cfg.blocks = header_num("model.blocks");
  cfg.heads = header_num("model.heads");
  cfg.subsample = header_num("model.subsample");
  cfg.ffn_hidden = header_num("model.ffn_hidden");
  cfg.vocab_size = static_cast<int>(header_num("model.vocab_size"));
  cfg.decoder_enabled = header_num("model.decoder") != 0;

  Model model(cfg, SeededRng(0));

  std::size_t n_params = 0;
  is >> word >> n_params;
  std::getline(is, line);
  if (word != "params") throw std::runtime_error("malformed checkpoint parameter section");
  for (std::size_t i = 0; i < n_params; ++i) {
    std::getline(is, line);
    std::istringstream ls(line);
    std::string name;
    ls >> name;
    Shape shape;
    std::size_t d;
    while (ls >> d) shape.push_back(d);
    auto it = model.params_.find(name);
    if (it == model.params_.end()) {
      throw std::runtime_error("checkpoint parameter unknown to this config: " + name);
    }
    if (it->second.shape() != shape) {
      throw std::runtime_error("checkpoint parameter " + name + " has shape " + shape_str(shape) +
                               ", expected " + shape_str(it->second.shape()));
    }
    auto v = it->second.values_mut();
    for (auto& x : v) x = std::bit_cast<double>(read_u64_le(is));
    std::getline(is, line);  // trailing newline after the blob
  }
  if (!is) throw std::runtime_error("checkpoint truncated: " + path.string());
  if (extra_header != nullptr) *extra_header = header;
  return model;
}

}  // namespace spikereg
