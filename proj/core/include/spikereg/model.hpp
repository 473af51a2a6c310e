#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "spikereg/ctc.hpp"
#include "spikereg/dropout.hpp"
#include "spikereg/rng.hpp"
#include "spikereg/tensor.hpp"

namespace spikereg {

// One dropout spec per site class the architecture exposes.
struct SiteDropout {
  DropoutSpec attention;
  DropoutSpec conv;
  DropoutSpec feed_forward;
  DropoutSpec decoder;
};

// Expands a single experiment-level dropout choice into per-site specs:
// sites covered by the placement run the structured mode, the rest keep
// standard dropout at the same rate.
SiteDropout resolve_site_dropout(const DropoutSpec& spec);

struct ModelConfig {
  std::size_t feature_dim = 16;  // F
  std::size_t d_model = 32;
  std::size_t blocks = 2;
  std::size_t heads = 2;
  std::size_t subsample = 2;  // 1 or 2, strided averaging
  std::size_t ffn_hidden = 64;
  int vocab_size = 8;  // K; CTC classes are K+1 with blank 0
  bool decoder_enabled = true;
  SiteDropout site_dropout;

  std::size_t head_dim() const { return d_model / heads; }
  void validate() const;
};

// Training-time context for a single forward pass of one branch. The rng
// stream drives every dropout mask of the pass; inference passes draw
// nothing.
struct DropoutCtx {
  bool training = false;
  SeededRng* rng = nullptr;
};

struct EncoderOut {
  Tensor hidden;     // (T', d_model)
  Tensor log_probs;  // (T', K+1), rows log-sum-exp to 0
};

// Miniature conformer-style encoder with a one-block attention decoder.
// Block layout: self-attention, depthwise temporal convolution (kernel 3)
// with pointwise projection, feed-forward; each pre-norm with residual.
// Both Siamese branches run through the same instance, so parameters are
// shared by construction.
class Model {
 public:
  Model(ModelConfig cfg, SeededRng init_rng);

  const ModelConfig& config() const { return cfg_; }

  // Swaps the per-site dropout specs (used when re-running a loaded
  // checkpoint's branches with training-time dropout).
  void set_site_dropout(const SiteDropout& sites) {
    cfg_.site_dropout = sites;
    cfg_.validate();
  }

  // T' = ceil(T / subsample); requires T >= subsample and F == feature_dim.
  EncoderOut encoder_forward(const Tensor& features, const DropoutCtx& ctx) const;

  // Teacher-forced cross-entropy of next-label prediction. Targets must be
  // non-empty; requires the decoder (otherwise train with alpha = 1).
  Tensor decoder_forward(const Tensor& hidden, const LabelSeq& targets,
                         const DropoutCtx& ctx) const;

  std::map<std::string, Tensor>& params() { return params_; }
  const std::map<std::string, Tensor>& params() const { return params_; }

  // Little-endian binary checkpoint with the config (and any extra header
  // entries) echoed as canonical text; identical runs produce identical
  // bytes.
  void save(const std::filesystem::path& path,
            const std::map<std::string, std::string>& extra_header = {}) const;
  static Model load(const std::filesystem::path& path,
                    std::map<std::string, std::string>* extra_header = nullptr);

 private:
  Tensor param(const std::string& name) const;
  Tensor sublayer_dropout(const Tensor& x, const DropoutSpec& spec, const DropoutCtx& ctx) const;
  Tensor layer_norm(const Tensor& x, const std::string& prefix) const;
  Tensor attention(const Tensor& queries_in, const Tensor& keys_in, const std::string& prefix,
                   const DropoutCtx& ctx, const DropoutSpec& spec) const;
  Tensor feed_forward(const Tensor& x, const std::string& prefix, const DropoutCtx& ctx,
                      const DropoutSpec& spec) const;

  ModelConfig cfg_;
  std::map<std::string, Tensor> params_;
};

// Record of one combined loss evaluation (Eq.-style bookkeeping): the ASR
// part is the alpha-weighted average of CTC and attention losses, the total
// adds lambda times the similarity loss.
struct LossBreakdown {
  double l_ctc = 0.0;
  double l_att = 0.0;
  double l_asr = 0.0;
  double l_sim = 0.0;
  double l_total = 0.0;
  double alpha = 0.0;
  double lambda = 0.0;
  double l_asr_branch1 = 0.0;
  double l_asr_branch2 = 0.0;
  bool has_att = false;
};

// alpha in [0, 1], lambda >= 0; l_att may be absent only when alpha == 1.
LossBreakdown combine_losses(double l_ctc, std::optional<double> l_att, double l_sim,
                             double alpha, double lambda);

}  // namespace spikereg
