#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hybridnet/encoder.hpp"
#include "hybridnet/vocab.hpp"

namespace hybridnet {

struct LatentEvent {
  int event = 0;   // 0..7
  int agent = 0;   // 0..9
  int object = 0;  // 0..9
};

inline constexpr int kNumEvents = 8;
inline constexpr int kNumAgents = 10;
inline constexpr int kNumObjects = 10;

/// Sentences implied by a latent triple.
ManifestRow describe(const std::string& id, const LatentEvent& latent);

struct SynthOptions {
  std::uint64_t seed = 7;
  std::size_t n_train = 200;
  std::size_t n_test = 50;
  double noise = 0.1;
  std::size_t motion_frames = 8;
  std::size_t audio_frames = 4;
  std::size_t appearance_frames = 6;
  std::size_t motion_dim = 16;
  std::size_t audio_dim = 8;
  std::size_t appearance_dim = 12;
  bool force = false;
};

struct SynthRecord {
  LatentEvent latent;
  ManifestRow text;
  FeatureBundle features;
};

/// Record `index` of the corpus (train records first, then test). Each record
/// draws from its own stream derived from (seed, index); the per-value basis
/// vectors are drawn once from the seed.
SynthRecord synth_record(const SynthOptions& opt, std::size_t index);

/// Writes <dir>/train/{corpus.tsv,features.bin}, <dir>/test/{...} and
/// <dir>/vocab.txt (built from the training manifest). Refuses a non-empty
/// directory unless opt.force.
void gen_corpus(const SynthOptions& opt, const std::filesystem::path& dir);

/// One split on disk: manifest rows and their features, ordered by id.
struct Dataset {
  std::vector<ManifestRow> rows;
  std::vector<FeatureBundle> features;

  std::size_t size() const { return rows.size(); }
};

Dataset load_split(const std::filesystem::path& split_dir);
void save_split(const std::filesystem::path& split_dir, const Dataset& data);

}  // namespace hybridnet
