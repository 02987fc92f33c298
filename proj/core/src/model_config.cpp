#include "hybridnet/model_config.hpp"

#include "hybridnet/error.hpp"

namespace hybridnet {

std::string_view to_string(Modality m) {
  switch (m) {
    case Modality::kMotion: return "motion";
    case Modality::kAudio: return "audio";
    case Modality::kAppearance: return "appearance";
  }
  return "?";
}

std::string_view to_string(Pooling p) { return p == Pooling::kLast ? "last" : "sequence"; }

std::string_view to_string(Fusion f) { return f == Fusion::kConcat ? "concat" : "mlp"; }

std::string_view to_string(DecoderKind k) {
  switch (k) {
    case DecoderKind::kCaption: return "cap";
    case DecoderKind::kAttribute: return "att";
    case DecoderKind::kEffect: return "eff";
    case DecoderKind::kIntention: return "int";
  }
  return "?";
}

DecoderKind parse_decoder_kind(std::string_view s) {
  if (s == "cap" || s == "caption") return DecoderKind::kCaption;
  if (s == "att" || s == "attribute") return DecoderKind::kAttribute;
  if (s == "eff" || s == "effect") return DecoderKind::kEffect;
  if (s == "int" || s == "intention") return DecoderKind::kIntention;
  throw ConfigError("unknown decoder kind '" + std::string(s) + "'");
}

Pooling parse_pooling(std::string_view s) {
  if (s == "last") return Pooling::kLast;
  if (s == "sequence") return Pooling::kSequence;
  throw ConfigError("unknown pooling '" + std::string(s) + "' (expected last|sequence)");
}

Fusion parse_fusion(std::string_view s) {
  if (s == "concat") return Fusion::kConcat;
  if (s == "mlp") return Fusion::kMlp;
  throw ConfigError("unknown fusion '" + std::string(s) + "' (expected concat|mlp)");
}

std::size_t ModelConfig::input_dim(Modality m) const {
  switch (m) {
    case Modality::kMotion: return motion_dim;
    case Modality::kAudio: return audio_dim;
    case Modality::kAppearance: return appearance_dim;
  }
  return 0;
}

bool ModelConfig::modality_active(Modality m) const {
  if (!use_multimodal) return m == Modality::kAppearance;
  if (m == Modality::kAudio) return use_audio;
  return true;
}

void ModelConfig::validate() const {
  auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (d_model == 0) throw ConfigError("d_model must be positive");
  if (n_heads == 0 || d_model % n_heads != 0) {
    throw ConfigError("n_heads (" + std::to_string(n_heads) + ") must divide d_model (" + std::to_string(d_model) + ")");
  }
  if (n_blocks == 0) throw ConfigError("n_blocks must be positive");
  if (mem_slots == 0) throw ConfigError("mem_slots must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (!in_unit(coeffs.alpha) || !in_unit(coeffs.beta) || !in_unit(coeffs.gamma)) {
    throw ConfigError("alpha, beta and gamma must lie in [0, 1]");
  }
  if (motion_dim == 0 || audio_dim == 0 || appearance_dim == 0) throw ConfigError("feature dims must be positive");
  if (single_kind == DecoderKind::kCaption) throw ConfigError("single_kind must be a commonsense head");
  if (max_seq_len == 0) throw ConfigError("max_seq_len must be positive");
}

}  // namespace hybridnet
