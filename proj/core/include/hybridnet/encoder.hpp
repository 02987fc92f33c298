#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "hybridnet/graph.hpp"
#include "hybridnet/model_config.hpp"
#include "hybridnet/param_store.hpp"
#include "hybridnet/rng.hpp"

namespace hybridnet {

/// Per-video feature streams: motion [T3×D3], audio [T1×D1], appearance [T2×D2].
struct FeatureBundle {
  std::string id;
  Tensor motion;
  Tensor audio;
  Tensor appearance;

  const Tensor& stream(Modality m) const;
};

/// Encoder output: fused rows plus the modality each row came from.
struct MultimodalFeatures {
  Var features;
  std::vector<Modality> segments;

  std::size_t length() const { return segments.size(); }
};

/// Standard transformer sinusoidal encoding for positions
/// [offset, offset + count): even columns sin, odd columns cos.
Tensor sinusoidal_positions(std::size_t offset, std::size_t count, std::size_t d_model);

/// Multimodal fusion encoder. Each modality goes through its own
/// FC → single-layer LSTM, gets a learned segment vector and the sinusoidal
/// encoding of its positions in the fused sequence, and the results are
/// stacked in motion, audio, appearance order.
class Encoder {
 public:
  struct ModalityParams {
    ParamId fc_w, fc_b;
    ParamId lstm_wx, lstm_wh, lstm_b;
    ParamId segment;
  };
  struct FusionMlpParams {
    ParamId w1, b1, w2, b2;
  };

  Encoder(const ModelConfig& config, ParamStore& store, Rng& rng);

  /// SE_m + PE + LSTM(FC(V)). Returns [1×d] for last pooling and [T×d] for
  /// sequence pooling. `position_offset` is the index of this modality's first
  /// row within the fused sequence.
  Var encode_modality(Graph& g, const Tensor& features, Modality modality, std::size_t position_offset) const;

  /// Stacks already-encoded modalities (in the given order) and, in MLP mode,
  /// applies the per-position MLP.
  MultimodalFeatures fuse(Graph& g, const std::vector<std::pair<Modality, Var>>& encoded) const;

  /// Full encoder over the active modalities.
  MultimodalFeatures encode(Graph& g, const FeatureBundle& bundle) const;

  /// Rows produced for one modality with T input frames.
  std::size_t encoded_length(std::size_t frames) const { return config_.pooling == Pooling::kLast ? 1 : frames; }

  const ModalityParams& modality_params(Modality m) const { return modality_.at(static_cast<std::size_t>(m)); }
  const std::optional<FusionMlpParams>& fusion_params() const { return fusion_; }

 private:
  ModelConfig config_;
  std::array<ModalityParams, 3> modality_{};
  std::optional<FusionMlpParams> fusion_;
};

}  // namespace hybridnet
