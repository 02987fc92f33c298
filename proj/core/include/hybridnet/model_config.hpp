#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>

namespace hybridnet {

enum class Modality { kMotion = 0, kAudio = 1, kAppearance = 2 };
enum class Pooling { kLast, kSequence };
enum class Fusion { kConcat, kMlp };
enum class DecoderKind { kCaption = 0, kAttribute = 1, kEffect = 2, kIntention = 3 };

inline constexpr std::array<DecoderKind, 3> kCommonsenseKinds = {DecoderKind::kAttribute, DecoderKind::kEffect,
                                                                 DecoderKind::kIntention};
inline constexpr std::array<DecoderKind, 4> kAllKinds = {DecoderKind::kCaption, DecoderKind::kAttribute,
                                                         DecoderKind::kEffect, DecoderKind::kIntention};

std::string_view to_string(Modality m);
std::string_view to_string(Pooling p);
std::string_view to_string(Fusion f);
/// Short tag used in parameter names: cap, att, eff, int.
std::string_view to_string(DecoderKind k);
/// Accepts cap/att/eff/int and the long forms caption/attribute/effect/intention.
/// Throws ConfigError on anything else.
DecoderKind parse_decoder_kind(std::string_view s);
Pooling parse_pooling(std::string_view s);
Fusion parse_fusion(std::string_view s);

/// Linear-combination weights for the attention-map merge chain.
struct MergeCoefficients {
  double alpha = 0.1;
  double beta = 0.4;
  double gamma = 0.1;
};

/// Architecture hyper-parameters shared by the encoder and all decoders.
struct ModelConfig {
  std::size_t d_model = 32;
  std::size_t n_blocks = 6;
  std::size_t n_heads = 8;
  /// 0 selects 4 · d_model.
  std::size_t d_ff = 0;
  double dropout = 0.1;
  std::size_t mem_slots = 3;
  MergeCoefficients coeffs;

  bool use_mmha = true;
  bool use_crc = true;
  bool use_multimodal = true;
  bool use_multicms = true;
  /// Drops the audio stream while keeping motion and appearance.
  bool use_audio = true;
  /// Commonsense head trained when use_multicms is false.
  DecoderKind single_kind = DecoderKind::kAttribute;

  Pooling pooling = Pooling::kLast;
  Fusion fusion = Fusion::kConcat;

  std::size_t motion_dim = 16;
  std::size_t audio_dim = 8;
  std::size_t appearance_dim = 12;

  std::size_t vocab_size = 0;
  /// Longest decoder input accepted.
  std::size_t max_seq_len = 32;

  std::size_t ff_width() const { return d_ff ? d_ff : 4 * d_model; }
  std::size_t head_dim() const { return d_model / n_heads; }
  std::size_t input_dim(Modality m) const;
  bool modality_active(Modality m) const;

  /// Throws ConfigError when the combination is unusable (H ∤ d_model, zero
  /// slots, coefficients outside [0,1], ...).
  void validate() const;
};

}  // namespace hybridnet
