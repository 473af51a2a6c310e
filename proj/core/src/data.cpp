#include "spikereg/data.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace spikereg {

namespace {

constexpr char kManifestMagic[] = "spikereg-corpus v1";

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string to_hex(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

void append_f64_le(std::string& out, double x) {
  const auto bits = std::bit_cast<std::uint64_t>(x);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

double read_f64_le(const std::string& buf, std::size_t offset) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) {
    bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[offset + i])) << (8 * i);
  }
  return std::bit_cast<double>(bits);
}

}  // namespace

void CorpusSpec::validate() const {
  if (vocab_size < 1) throw std::invalid_argument("corpus: vocab_size must be >= 1");
  if (feature_dim == 0) throw std::invalid_argument("corpus: feature_dim must be positive");
  if (duration_min < 1 || duration_max < duration_min) {
    throw std::invalid_argument("corpus: token duration range invalid");
  }
  if (silence_max < silence_min) throw std::invalid_argument("corpus: silence range invalid");
  if (label_len_min < 1 || label_len_max < label_len_min) {
    throw std::invalid_argument("corpus: label length range invalid");
  }
  if (prototype_noise < 0.0 || frame_noise < 0.0) {
    throw std::invalid_argument("corpus: noise scales must be non-negative");
  }
}

Tensor UttBatch::utterance_features(std::size_t i) const {
  const std::size_t t_max = max_frames(), f = feature_dim();
  const std::size_t t_i = lengths[i];
  Tensor out({t_i, f});
  auto ov = out.values_mut();
  const auto bv = features.values();
  const std::size_t base = i * t_max * f;
  std::copy(bv.begin() + static_cast<std::ptrdiff_t>(base),
            bv.begin() + static_cast<std::ptrdiff_t>(base + t_i * f), ov.begin());
  return out;
}

UttBatch CorpusSplit::batch_of(const std::vector<std::size_t>& indices) const {
  if (indices.empty()) throw std::invalid_argument("batch_of: empty index list");
  std::size_t t_max = 0;
  for (std::size_t i : indices) t_max = std::max(t_max, utterances[i].features.dim(0));
  UttBatch batch;
  batch.features = Tensor::zeros({indices.size(), t_max, feature_dim});
  auto bv = batch.features.values_mut();
  for (std::size_t n = 0; n < indices.size(); ++n) {
    const Utterance& utt = utterances[indices[n]];
    const auto uv = utt.features.values();
    std::copy(uv.begin(), uv.end(),
              bv.begin() + static_cast<std::ptrdiff_t>(n * t_max * feature_dim));
    batch.lengths.push_back(utt.features.dim(0));
    batch.labels.push_back(utt.labels);
    batch.ids.push_back(utt.id);
  }
  return batch;
}

std::vector<UttBatch> CorpusSplit::batches(std::size_t batch_size) const {
  if (batch_size == 0) throw std::invalid_argument("batches: batch_size must be >= 1");
  std::vector<UttBatch> out;
  std::vector<std::size_t> chunk;
  for (std::size_t i = 0; i < utterances.size(); ++i) {
    chunk.push_back(i);
    if (chunk.size() == batch_size) {
      out.push_back(batch_of(chunk));
      chunk.clear();
    }
  }
  if (!chunk.empty()) out.push_back(batch_of(chunk));
  return out;
}

namespace {

struct RenderedUtterance {
  std::string id;
  std::vector<double> features;
  std::size_t frames;
  LabelSeq labels;
};

RenderedUtterance render_utterance(const CorpusSpec& spec, const std::vector<double>& prototypes,
                                   const std::string& id, SeededRng& rng) {
  const std::size_t f = spec.feature_dim;
  const std::size_t label_len = static_cast<std::size_t>(
      rng.uniform_int(static_cast<std::int64_t>(spec.label_len_min),
                      static_cast<std::int64_t>(spec.label_len_max)));
  LabelSeq labels(label_len);
  for (auto& l : labels) l = static_cast<int>(rng.uniform_int(1, spec.vocab_size));

  const double silence_noise = 0.1 * spec.frame_noise;
  std::vector<double> frames;
  for (std::size_t i = 0; i < label_len; ++i) {
    if (i > 0) {
      std::size_t silence = static_cast<std::size_t>(
          rng.uniform_int(static_cast<std::int64_t>(spec.silence_min),
                          static_cast<std::int64_t>(spec.silence_max)));
      // repeated labels need a separating frame for a CTC path to exist
      if (labels[i] == labels[i - 1] && silence == 0) silence = 1;
      for (std::size_t s = 0; s < silence; ++s) {
        for (std::size_t j = 0; j < f; ++j) frames.push_back(rng.normal(0.0, silence_noise));
      }
    }
    const std::size_t duration = static_cast<std::size_t>(
        rng.uniform_int(static_cast<std::int64_t>(spec.duration_min),
                        static_cast<std::int64_t>(spec.duration_max)));
    const double* proto = &prototypes[static_cast<std::size_t>(labels[i] - 1) * f];
    for (std::size_t d = 0; d < duration; ++d) {
      for (std::size_t j = 0; j < f; ++j) {
        frames.push_back(proto[j] + rng.normal(0.0, spec.frame_noise));
      }
    }
  }
  const std::size_t n_frames = frames.size() / f;
  return {id, std::move(frames), n_frames, std::move(labels)};
}

}  // namespace

void generate_corpus(const CorpusSpec& spec, const std::filesystem::path& dir) {
  spec.validate();
  std::filesystem::create_directories(dir);

  const SeededRng master(spec.master_seed);
  SeededRng proto_rng = master.stream("prototypes");
  std::vector<double> prototypes(static_cast<std::size_t>(spec.vocab_size) * spec.feature_dim);
  for (auto& p : prototypes) p = proto_rng.normal(0.0, spec.prototype_noise);

  const std::pair<const char*, std::size_t> splits[] = {
      {"train", spec.train_count}, {"dev", spec.dev_count}, {"test", spec.test_count}};
  for (const auto& [split, count] : splits) {
    SeededRng split_rng = master.stream(split);
    std::string blob;
    std::ostringstream manifest;
    manifest << kManifestMagic << "\n";
    manifest << "vocab " << spec.vocab_size << "\n";
    manifest << "feature_dim " << spec.feature_dim << "\n";
    manifest << "count " << count << "\n";
    manifest << "features " << split << ".bin\n";

    std::ostringstream entries;
    for (std::size_t n = 0; n < count; ++n) {
      std::ostringstream id;
      id << "utt-" << split << "-";
      id.width(6);
      id.fill('0');
      id << n;
      const RenderedUtterance utt = render_utterance(spec, prototypes, id.str(), split_rng);
      entries << "utt " << utt.id << " " << utt.frames << " ";
      for (std::size_t i = 0; i < utt.labels.size(); ++i) {
        if (i) entries << ",";
        entries << utt.labels[i];
      }
      entries << "\n";
      for (double x : utt.features) append_f64_le(blob, x);
    }
    manifest << "checksum fnv1a " << to_hex(fnv1a(blob)) << "\n";
    manifest << entries.str();

    {
      std::ofstream mf(dir / (std::string(split) + ".manifest"), std::ios::binary);
      if (!mf) throw std::runtime_error("cannot write manifest in " + dir.string());
      mf << manifest.str();
    }
    {
      std::ofstream bf(dir / (std::string(split) + ".bin"), std::ios::binary);
      if (!bf) throw std::runtime_error("cannot write feature file in " + dir.string());
      bf.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    }
  }
}

CorpusSplit load_corpus(const std::filesystem::path& dir, const std::string& split) {
  const auto manifest_path = dir / (split + ".manifest");
  std::ifstream mf(manifest_path, std::ios::binary);
  if (!mf) throw std::runtime_error("cannot open manifest: " + manifest_path.string());

  std::string line;
  std::getline(mf, line);
  if (line != kManifestMagic) {
    throw std::runtime_error("not a corpus manifest (bad magic): " + manifest_path.string());
  }

  CorpusSplit out;
  out.name = split;
  std::string key, features_file, checksum_kind, checksum_hex;
  std::size_t count = 0;
  mf >> key >> out.vocab_size;
  if (key != "vocab") throw std::runtime_error("malformed manifest: expected vocab");
  mf >> key >> out.feature_dim;
  if (key != "feature_dim") throw std::runtime_error("malformed manifest: expected feature_dim");
  mf >> key >> count;
  if (key != "count") throw std::runtime_error("malformed manifest: expected count");
  mf >> key >> features_file;
  if (key != "features") throw std::runtime_error("malformed manifest: expected features");
  mf >> key >> checksum_kind >> checksum_hex;
  if (key != "checksum" || checksum_kind != "fnv1a") {
    throw std::runtime_error("malformed manifest: expected fnv1a checksum");
  }

  std::string blob;
  {
    std::ifstream bf(dir / features_file, std::ios::binary);
    if (!bf) throw std::runtime_error("cannot open feature file: " + (dir / features_file).string());
    std::ostringstream buf;
    buf << bf.rdbuf();
    blob = buf.str();
  }
  if (to_hex(fnv1a(blob)) != checksum_hex) {
    throw std::runtime_error("checksum mismatch for " + (dir / features_file).string() +
                             "; corpus is corrupt");
  }

  std::size_t offset = 0;
  for (std::size_t n = 0; n < count; ++n) {
    std::string tag, id, label_csv;
    std::size_t frames = 0;
    mf >> tag >> id >> frames >> label_csv;
    if (tag != "utt" || !mf) throw std::runtime_error("malformed manifest utterance entry");
    Utterance utt;
    utt.id = id;
    std::istringstream ls(label_csv);
    std::string tok;
    while (std::getline(ls, tok, ',')) utt.labels.push_back(std::stoi(tok));
    const std::size_t n_values = frames * out.feature_dim;
    if (offset + n_values * 8 > blob.size()) {
      throw std::runtime_error("feature file shorter than manifest describes");
    }
    std::vector<double> values(n_values);
    for (std::size_t i = 0; i < n_values; ++i) values[i] = read_f64_le(blob, offset + i * 8);
    offset += n_values * 8;
    utt.features = Tensor({frames, out.feature_dim}, std::move(values));
    out.utterances.push_back(std::move(utt));
  }
  if (offset != blob.size()) {
    throw std::runtime_error("feature file longer than manifest describes");
  }
  return out;
}

}  // namespace spikereg
