#include "hybridnet/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <unordered_map>

#include "hybridnet/checkpoint.hpp"
#include "hybridnet/error.hpp"
#include "hybridnet/rng.hpp"

namespace hybridnet {

namespace {

constexpr std::uint64_t kBasisStream = 0xB45E5ULL;

std::vector<Tensor> unit_bases(Rng& rng, int count, std::size_t dim) {
  std::vector<Tensor> out;
  for (int i = 0; i < count; ++i) {
    Tensor v({dim});
    double norm = 0.0;
    for (double& x : v.data()) {
      x = rng.normal();
      norm += x * x;
    }
    norm = std::sqrt(norm);
    for (double& x : v.data()) x /= norm;
    out.push_back(std::move(v));
  }
  return out;
}

struct Bases {
  std::vector<Tensor> motion, audio, appearance_object, appearance_agent;
};

Bases make_bases(const SynthOptions& opt) {
  Rng rng(derive_seed(opt.seed, kBasisStream));
  Bases b;
  b.motion = unit_bases(rng, kNumEvents, opt.motion_dim);
  b.audio = unit_bases(rng, kNumAgents, opt.audio_dim);
  b.appearance_object = unit_bases(rng, kNumObjects, opt.appearance_dim);
  b.appearance_agent = unit_bases(rng, kNumAgents, opt.appearance_dim);
  return b;
}

Tensor frames(Rng& rng, std::size_t t, const Tensor& base, const Tensor* extra, double extra_w, double noise) {
  const std::size_t d = base.size();
  Tensor out({t, d});
  for (std::size_t r = 0; r < t; ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      double v = base[c];
      if (extra) v += extra_w * (*extra)[c];
      out.at(r, c) = v + noise * rng.normal();
    }
  }
  return out;
}

std::string record_id(bool train, std::size_t local) {
  std::string n = std::to_string(local);
  return std::string(train ? "train" : "test") + std::string(n.size() < 5 ? 5 - n.size() : 0, '0') + n;
}

void prepare_dir(const std::filesystem::path& dir, bool force) {
  namespace fs = std::filesystem;
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw DataError(dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir)) {
      if (!force) throw DataError(dir.string() + " is not empty (pass --force to overwrite)");
      for (const char* stale : {"train", "test", "vocab.txt"}) fs::remove_all(dir / stale);
    }
  }
  fs::create_directories(dir);
}

}  // namespace

ManifestRow describe(const std::string& id, const LatentEvent& l) {
  ManifestRow row;
  row.id = id;
  row.caption = "<bos> agent_" + std::to_string(l.agent) + " verb_" + std::to_string(l.event) + " object_" +
                std::to_string(l.object) + " <eos>";
  row.attribute = "<bos> attr_" + std::to_string(l.agent % 6) + " <eos>";
  row.effect = "<bos> gets result_" + std::to_string((3 * l.event + l.agent) % 15) + " <eos>";
  row.intention = "<bos> to goal_" + std::to_string((l.event + l.object) % 12) + " <eos>";
  return row;
}

SynthRecord synth_record(const SynthOptions& opt, std::size_t index) {
  static thread_local std::uint64_t cached_seed = 0;
  static thread_local std::size_t cached_dims = 0;
  static thread_local std::optional<Bases> cached;
  const std::size_t dims = opt.motion_dim * 1000003 + opt.audio_dim * 1009 + opt.appearance_dim;
  if (!cached || cached_seed != opt.seed || cached_dims != dims) {
    cached = make_bases(opt);
    cached_seed = opt.seed;
    cached_dims = dims;
  }
  const Bases& b = *cached;

  const bool train = index < opt.n_train;
  Rng rng(derive_seed(opt.seed, index));
  SynthRecord rec;
  rec.latent.event = static_cast<int>(rng.below(kNumEvents));
  rec.latent.agent = static_cast<int>(rng.below(kNumAgents));
  rec.latent.object = static_cast<int>(rng.below(kNumObjects));
  const std::string id = record_id(train, train ? index : index - opt.n_train);
  rec.text = describe(id, rec.latent);
  rec.features.id = id;
  const auto e = static_cast<std::size_t>(rec.latent.event);
  const auto a = static_cast<std::size_t>(rec.latent.agent);
  const auto o = static_cast<std::size_t>(rec.latent.object);
  rec.features.motion = frames(rng, opt.motion_frames, b.motion[e], nullptr, 0.0, opt.noise);
  rec.features.audio = frames(rng, opt.audio_frames, b.audio[a], nullptr, 0.0, opt.noise);
  rec.features.appearance =
      frames(rng, opt.appearance_frames, b.appearance_object[o], &b.appearance_agent[a], 0.5, opt.noise);
  return rec;
}

void gen_corpus(const SynthOptions& opt, const std::filesystem::path& dir) {
  if (opt.n_train < 1 || opt.n_test < 1) throw ConfigError("gen-data needs at least one train and one test record");
  if (opt.motion_frames < 1 || opt.audio_frames < 1 || opt.appearance_frames < 1) {
    throw ConfigError("frame counts must be positive");
  }
  prepare_dir(dir, opt.force);
  Dataset train, test;
  for (std::size_t i = 0; i < opt.n_train + opt.n_test; ++i) {
    SynthRecord rec = synth_record(opt, i);
    Dataset& split = i < opt.n_train ? train : test;
    split.rows.push_back(std::move(rec.text));
    split.features.push_back(std::move(rec.features));
  }
  save_split(dir / "train", train);
  save_split(dir / "test", test);
  Vocab::build(train.rows).save(dir / "vocab.txt");
}

void save_split(const std::filesystem::path& split_dir, const Dataset& data) {
  std::filesystem::create_directories(split_dir);
  write_manifest(split_dir / "corpus.tsv", data.rows);
  TensorArchive archive;
  for (const auto& f : data.features) {
    archive.records.push_back({f.id + "/motion", f.motion});
    archive.records.push_back({f.id + "/audio", f.audio});
    archive.records.push_back({f.id + "/appearance", f.appearance});
  }
  write_archive(split_dir / "features.bin", archive);
}

Dataset load_split(const std::filesystem::path& split_dir) {
  Dataset data;
  data.rows = read_manifest(split_dir / "corpus.tsv");
  TensorArchive archive = read_archive(split_dir / "features.bin");
  std::unordered_map<std::string, Tensor*> slots;
  std::vector<std::size_t> order(data.rows.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return data.rows[x].id < data.rows[y].id; });
  std::vector<ManifestRow> rows;
  for (std::size_t i : order) rows.push_back(data.rows[i]);
  data.rows = std::move(rows);
  for (std::size_t i = 1; i < data.rows.size(); ++i) {
    if (data.rows[i].id == data.rows[i - 1].id) throw DataError("duplicate record id '" + data.rows[i].id + "'");
  }
  data.features.resize(data.rows.size());
  for (std::size_t i = 0; i < data.rows.size(); ++i) {
    FeatureBundle& f = data.features[i];
    f.id = data.rows[i].id;
    slots[f.id + "/motion"] = &f.motion;
    slots[f.id + "/audio"] = &f.audio;
    slots[f.id + "/appearance"] = &f.appearance;
  }
  for (auto& rec : archive.records) {
    auto it = slots.find(rec.name);
    if (it == slots.end()) continue;
    if (rec.tensor.rank() != 2) throw DataError("feature '" + rec.name + "' must be rank 2");
    *it->second = std::move(rec.tensor);
  }
  for (const auto& f : data.features) {
    if (f.motion.empty() || f.audio.empty() || f.appearance.empty()) {
      throw DataError("record '" + f.id + "' is missing feature tensors in " + (split_dir / "features.bin").string());
    }
  }
  return data;
}

}  // namespace hybridnet
