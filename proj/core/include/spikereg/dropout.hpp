#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spikereg/rng.hpp"
#include "spikereg/tensor.hpp"

namespace spikereg {

enum class DropoutMode { standard, spatial, temporal, spatial_temporal };

// Which model sites replace standard dropout with the structured mode.
enum class DropoutPlacement { all, encoder_only, decoder_only, conv_only };

struct DropoutSpec {
  DropoutMode mode = DropoutMode::standard;
  double rate = 0.0;  // in [0, 1)
  DropoutPlacement placement = DropoutPlacement::all;
  std::uint64_t seed_stream = 0;

  void validate() const;
};

// Mask over a (T, D) activation map. Structured modes drop whole rows
// (temporal) and/or whole columns (spatial); standard mode keeps a dense
// per-element mask. Survivors are rescaled by `scale` at training time.
struct StructuredMask {
  std::size_t frames = 0;    // T
  std::size_t features = 0;  // D
  DropoutMode mode = DropoutMode::standard;
  std::vector<std::uint8_t> rows_kept;   // length T
  std::vector<std::uint8_t> cols_kept;   // length D
  std::vector<std::uint8_t> elems_kept;  // length T*D, standard mode only
  double scale = 1.0;

  bool kept(std::size_t t, std::size_t d) const {
    if (mode == DropoutMode::standard) return elems_kept[t * features + d] != 0;
    return rows_kept[t] != 0 && cols_kept[d] != 0;
  }
};

// Draw a mask for a (T, D) map: each row (temporal) and/or column (spatial)
// is dropped independently with probability rate; standard mode degenerates
// to a per-element Bernoulli. The scale composes 1/(1-p) per active axis.
StructuredMask sample_mask(const DropoutSpec& spec, std::size_t frames, std::size_t features,
                           SeededRng& rng);

// Inverted dropout: at training time masked elements become zero and
// survivors are multiplied by mask.scale; at inference the input passes
// through untouched. Differentiable (the gradient is mask * scale).
Tensor apply_dropout(const Tensor& x, const StructuredMask& mask, bool training);

std::string to_string(DropoutMode mode);
std::string to_string(DropoutPlacement placement);
DropoutMode dropout_mode_from_string(const std::string& s);
DropoutPlacement dropout_placement_from_string(const std::string& s);

}  // namespace spikereg
