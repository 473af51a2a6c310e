#include "spikereg/dropout.hpp"

#include <stdexcept>

namespace spikereg {

void DropoutSpec::validate() const {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw std::invalid_argument("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
}

StructuredMask sample_mask(const DropoutSpec& spec, std::size_t frames, std::size_t features,
                           SeededRng& rng) {
  spec.validate();
  if (frames == 0 || features == 0) {
    throw std::invalid_argument("sample_mask: empty activation map");
  }
  StructuredMask mask;
  mask.frames = frames;
  mask.features = features;
  mask.mode = spec.mode;
  mask.rows_kept.assign(frames, 1);
  mask.cols_kept.assign(features, 1);
  const double p = spec.rate;
  const double keep_scale = p > 0.0 ? 1.0 / (1.0 - p) : 1.0;

  switch (spec.mode) {
    case DropoutMode::standard:
      mask.elems_kept.assign(frames * features, 1);
      if (p > 0.0) {
        for (auto& e : mask.elems_kept) e = rng.bernoulli(p) ? 0 : 1;
      }
      mask.scale = keep_scale;
      break;
    case DropoutMode::temporal:
      if (p > 0.0) {
        for (auto& r : mask.rows_kept) r = rng.bernoulli(p) ? 0 : 1;
      }
      mask.scale = keep_scale;
      break;
    case DropoutMode::spatial:
      if (p > 0.0) {
        for (auto& c : mask.cols_kept) c = rng.bernoulli(p) ? 0 : 1;
      }
      mask.scale = keep_scale;
      break;
    case DropoutMode::spatial_temporal:
      // Rows and columns are sampled independently; an element survives iff
      // both its row and its column survive, hence the squared scale.
      if (p > 0.0) {
        for (auto& r : mask.rows_kept) r = rng.bernoulli(p) ? 0 : 1;
        for (auto& c : mask.cols_kept) c = rng.bernoulli(p) ? 0 : 1;
      }
      mask.scale = keep_scale * keep_scale;
      break;
  }
  return mask;
}

Tensor apply_dropout(const Tensor& x, const StructuredMask& mask, bool training) {
  if (x.axes() != 2 || x.dim(0) != mask.frames || x.dim(1) != mask.features) {
    throw std::invalid_argument("apply_dropout: input " + shape_str(x.shape()) +
                                " does not match mask (" + std::to_string(mask.frames) + ", " +
                                std::to_string(mask.features) + ")");
  }
  if (!training) return x;

  Tensor factors({mask.frames, mask.features});
  auto fv = factors.values_mut();
  for (std::size_t t = 0; t < mask.frames; ++t) {
    for (std::size_t d = 0; d < mask.features; ++d) {
      fv[t * mask.features + d] = mask.kept(t, d) ? mask.scale : 0.0;
    }
  }
  return mul(x, factors);
}

std::string to_string(DropoutMode mode) {
  switch (mode) {
    case DropoutMode::standard: return "standard";
    case DropoutMode::spatial: return "spatial";
    case DropoutMode::temporal: return "temporal";
    case DropoutMode::spatial_temporal: return "spatial_temporal";
  }
  return "?";
}

std::string to_string(DropoutPlacement placement) {
  switch (placement) {
    case DropoutPlacement::all: return "all";
    case DropoutPlacement::encoder_only: return "encoder_only";
    case DropoutPlacement::decoder_only: return "decoder_only";
    case DropoutPlacement::conv_only: return "conv_only";
  }
  return "?";
}

DropoutMode dropout_mode_from_string(const std::string& s) {
  if (s == "standard") return DropoutMode::standard;
  if (s == "spatial") return DropoutMode::spatial;
  if (s == "temporal") return DropoutMode::temporal;
  if (s == "spatial_temporal") return DropoutMode::spatial_temporal;
  throw std::invalid_argument("unknown dropout mode: " + s);
}

DropoutPlacement dropout_placement_from_string(const std::string& s) {
  if (s == "all") return DropoutPlacement::all;
  if (s == "encoder_only") return DropoutPlacement::encoder_only;
  if (s == "decoder_only") return DropoutPlacement::decoder_only;
  if (s == "conv_only") return DropoutPlacement::conv_only;
  throw std::invalid_argument("unknown dropout placement: " + s);
}

}  // namespace spikereg
