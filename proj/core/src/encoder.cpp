#include "hybridnet/encoder.hpp"

#include <cmath>

#include "hybridnet/error.hpp"
#include "hybridnet/ops.hpp"
#include "init.hpp"

namespace hybridnet {

const Tensor& FeatureBundle::stream(Modality m) const {
  switch (m) {
    case Modality::kMotion: return motion;
    case Modality::kAudio: return audio;
    case Modality::kAppearance: return appearance;
  }
  return appearance;
}

Tensor sinusoidal_positions(std::size_t offset, std::size_t count, std::size_t d_model) {
  Tensor pe({count, d_model});
  for (std::size_t p = 0; p < count; ++p) {
    const double pos = static_cast<double>(offset + p);
    for (std::size_t j = 0; j < d_model; ++j) {
      const double rate = std::pow(10000.0, static_cast<double>(j - j % 2) / static_cast<double>(d_model));
      pe.at(p, j) = (j % 2 == 0) ? std::sin(pos / rate) : std::cos(pos / rate);
    }
  }
  return pe;
}

Encoder::Encoder(const ModelConfig& config, ParamStore& store, Rng& rng) : config_(config) {
  const std::size_t d = config.d_model;
  for (Modality m : {Modality::kMotion, Modality::kAudio, Modality::kAppearance}) {
    if (!config.modality_active(m)) continue;
    const std::string p = "enc." + std::string(to_string(m)) + ".";
    const std::size_t in = config.input_dim(m);
    ModalityParams mp;
    mp.fc_w = store.add(p + "fc.W", init::glorot(rng, in, d));
    mp.fc_b = store.add(p + "fc.b", Tensor({d}));
    mp.lstm_wx = store.add(p + "lstm.Wx", init::glorot(rng, d, 4 * d));
    mp.lstm_wh = store.add(p + "lstm.Wh", init::glorot(rng, d, 4 * d));
    mp.lstm_b = store.add(p + "lstm.b", Tensor({4 * d}));
    mp.segment = store.add(p + "segment", init::uniform(rng, {d}, 0.1));
    modality_[static_cast<std::size_t>(m)] = mp;
  }
  if (config.fusion == Fusion::kMlp) {
    FusionMlpParams fp;
    fp.w1 = store.add("enc.fusion.W1", init::glorot(rng, d, d));
    fp.b1 = store.add("enc.fusion.b1", Tensor({d}));
    fp.w2 = store.add("enc.fusion.W2", init::glorot(rng, d, d));
    fp.b2 = store.add("enc.fusion.b2", Tensor({d}));
    fusion_ = fp;
  }
}

Var Encoder::encode_modality(Graph& g, const Tensor& features, Modality modality, std::size_t position_offset) const {
  if (!config_.modality_active(modality)) {
    throw ConfigError("modality '" + std::string(to_string(modality)) + "' is disabled in this configuration");
  }
  const std::size_t d = config_.d_model;
  const std::size_t in = config_.input_dim(modality);
  if (features.rank() != 2 || features.dim(1) != in || features.dim(0) == 0) {
    throw DimensionError(std::string(to_string(modality)) + " features " + shape_str(features.shape()) +
                         " do not match configured input dim " + std::to_string(in));
  }
  const auto& mp = modality_params(modality);
  const std::size_t frames = features.dim(0);

  Var x = add_row(matmul(g.constant(features), g.param(mp.fc_w)), g.param(mp.fc_b));
  Var xw = add_row(matmul(x, g.param(mp.lstm_wx)), g.param(mp.lstm_b));
  Var wh = g.param(mp.lstm_wh);

  Var c = g.constant(Tensor({1, d}));
  std::optional<Var> h;
  std::vector<Var> hidden;
  for (std::size_t t = 0; t < frames; ++t) {
    Var z = slice_rows(xw, t, 1);
    if (h) z = add(z, matmul(*h, wh));
    Var state = lstm_cell(z, c);
    h = slice_rows(state, 0, 1);
    c = slice_rows(state, 1, 1);
    if (config_.pooling == Pooling::kSequence) hidden.push_back(*h);
  }
  Var encoded = config_.pooling == Pooling::kSequence ? concat_rows(hidden) : *h;
  const std::size_t rows = encoded.value().dim(0);
  encoded = add(encoded, g.constant(sinusoidal_positions(position_offset, rows, d)));
  return add_row(encoded, g.param(mp.segment));
}

MultimodalFeatures Encoder::fuse(Graph& g, const std::vector<std::pair<Modality, Var>>& encoded) const {
  if (encoded.empty()) throw ConfigError("fuse: no encoded modalities");
  MultimodalFeatures mf;
  std::vector<Var> parts;
  for (const auto& [m, v] : encoded) {
    if (v.value().rank() != 2 || v.value().dim(1) != config_.d_model) {
      throw DimensionError("fuse: " + std::string(to_string(m)) + " encoding " + shape_str(v.shape()) +
                           " is not d_model=" + std::to_string(config_.d_model) + " wide");
    }
    parts.push_back(v);
    mf.segments.insert(mf.segments.end(), v.value().dim(0), m);
  }
  Var stacked = parts.size() == 1 ? parts.front() : concat_rows(parts);
  if (fusion_) {
    Var hidden = relu(add_row(matmul(stacked, g.param(fusion_->w1)), g.param(fusion_->b1)));
    stacked = add_row(matmul(hidden, g.param(fusion_->w2)), g.param(fusion_->b2));
  }
  mf.features = stacked;
  return mf;
}

MultimodalFeatures Encoder::encode(Graph& g, const FeatureBundle& bundle) const {
  std::vector<std::pair<Modality, Var>> encoded;
  std::size_t offset = 0;
  for (Modality m : {Modality::kMotion, Modality::kAudio, Modality::kAppearance}) {
    if (!config_.modality_active(m)) continue;
    Var e = encode_modality(g, bundle.stream(m), m, offset);
    offset += e.value().dim(0);
    encoded.emplace_back(m, e);
  }
  return fuse(g, encoded);
}

}  // namespace hybridnet
