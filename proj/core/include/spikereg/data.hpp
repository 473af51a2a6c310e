#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "spikereg/ctc.hpp"
#include "spikereg/rng.hpp"
#include "spikereg/tensor.hpp"

namespace spikereg {

// Declarative description of a synthetic corpus: every utterance renders a
// random label sequence as per-token prototype frames plus Gaussian noise,
// separated by near-zero silence frames. Content is a pure function of the
// spec (splits draw from disjoint seed streams).
struct CorpusSpec {
  int vocab_size = 8;            // K
  std::size_t feature_dim = 16;  // F
  double prototype_noise = 1.0;  // scale of the per-token prototype draw
  double frame_noise = 0.3;      // sigma added to every rendered token frame
  std::size_t duration_min = 2;  // frames per token
  std::size_t duration_max = 5;
  // default silences survive the encoder's 2x subsampling, so repeated
  // tokens always keep a visible separator
  std::size_t silence_min = 2;
  std::size_t silence_max = 3;
  std::size_t label_len_min = 3;
  std::size_t label_len_max = 10;
  std::size_t train_count = 2000;
  std::size_t dev_count = 200;
  std::size_t test_count = 200;
  std::uint64_t master_seed = 12345;

  void validate() const;
};

struct Utterance {
  std::string id;
  Tensor features;  // (T, F)
  LabelSeq labels;
};

// A padded minibatch: features are (N, T_max, F) with explicit per-utterance
// lengths; frames at or beyond the length are padding.
struct UttBatch {
  Tensor features;
  std::vector<std::size_t> lengths;
  std::vector<LabelSeq> labels;
  std::vector<std::string> ids;

  std::size_t size() const { return lengths.size(); }
  std::size_t max_frames() const { return features.dim(1); }
  std::size_t feature_dim() const { return features.dim(2); }
  // Unpadded (T_i, F) view copy of one utterance.
  Tensor utterance_features(std::size_t i) const;
};

struct CorpusSplit {
  int vocab_size = 0;
  std::size_t feature_dim = 0;
  std::string name;
  std::vector<Utterance> utterances;

  // Consecutive batches of at most batch_size; the remainder forms a final
  // smaller batch.
  std::vector<UttBatch> batches(std::size_t batch_size) const;
  UttBatch batch_of(const std::vector<std::size_t>& indices) const;
};

// Writes <split>.manifest and <split>.bin for train/dev/test under dir.
void generate_corpus(const CorpusSpec& spec, const std::filesystem::path& dir);

// Loads one split; verifies the manifest checksum against the binary file.
CorpusSplit load_corpus(const std::filesystem::path& dir, const std::string& split);

}  // namespace spikereg
