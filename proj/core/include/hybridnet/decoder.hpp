#pragma once

#include <array>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hybridnet/encoder.hpp"
#include "hybridnet/graph.hpp"
#include "hybridnet/memory.hpp"
#include "hybridnet/mmha.hpp"
#include "hybridnet/model_config.hpp"

namespace hybridnet {

/// Special token ids reserved at the front of every vocabulary.
inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kUnkId = 3;

/// Per-call switches for a forward pass.
struct RunContext {
  bool train = false;
  /// Source of dropout masks; required when train is true and dropout > 0.
  Rng* dropout_rng = nullptr;
  /// When set, every block's AttentionMapSet is appended here.
  std::vector<AttentionMapSet>* trace = nullptr;
};

struct BlockOutput {
  Var x;
  Var merge;  // A_merge of this block's MMHA
};

/// Post-norm decoder block: MMHA, cross-attention over `cross_memory`, FFN,
/// each wrapped as LayerNorm(x + Dropout(sublayer(x))).
class DecoderBlock {
 public:
  struct Params {
    ParamId cq, ck, cv, co, cbo;  // cross-attention
    ParamId ff_w1, ff_b1, ff_w2, ff_b2;
    ParamId ln1_g, ln1_b, ln2_g, ln2_b, ln3_g, ln3_b;
  };

  DecoderBlock(const std::string& prefix, const ModelConfig& config, ParamStore& store, Rng& rng);

  BlockOutput forward(Graph& g, Var x, Var cross_memory, std::optional<Var> pooled_memory,
                      std::optional<Var> previous, const RunContext& ctx) const;

  const MemoryRoutedAttention& mmha() const { return mmha_; }
  const Params& params() const { return params_; }

 private:
  Var sublayer_out(Var x, Var y, ParamId gain, ParamId bias, Graph& g, const RunContext& ctx) const;

  MemoryRoutedAttention mmha_;
  Params params_{};
  std::size_t heads_;
  double scale_;
  double dropout_;
};

struct DecoderOutput {
  Var logits;  // [N×|V|]
  Var hidden;  // [N×d], final block output
};

/// Stack of decoder blocks with its own token embedding (tied to the output
/// projection) and its own memory module, whose rolled-out state is shared by
/// every block.
class Decoder {
 public:
  Decoder(DecoderKind kind, const ModelConfig& config, ParamStore& store, Rng& rng);

  /// Teacher-forced pass over `input_tokens` (starting with <bos>).
  DecoderOutput forward(Graph& g, Var cross_memory, std::span<const int> input_tokens, const RunContext& ctx) const;

  DecoderKind kind() const { return kind_; }
  ParamId embedding() const { return embed_; }
  const MemoryModule& memory() const { return memory_; }
  const std::vector<DecoderBlock>& blocks() const { return blocks_; }

 private:
  DecoderKind kind_;
  ModelConfig config_;
  ParamId embed_{};
  MemoryModule memory_;
  std::vector<DecoderBlock> blocks_;
};

/// Encoder + caption decoder + attribute/effect/intention decoders. The
/// encoder and caption decoder are shared by every commonsense path.
class HybridNet {
 public:
  /// Registers all parameters in `store` using a generator seeded with `seed`.
  HybridNet(const ModelConfig& config, ParamStore& store, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const Encoder& encoder() const { return *encoder_; }
  const Decoder& decoder(DecoderKind kind) const { return *decoders_.at(static_cast<std::size_t>(kind)); }

  MultimodalFeatures encode(Graph& g, const FeatureBundle& bundle) const;

  /// Caption decoder over the video encoding. `hidden` is the caption
  /// encoding ŝ.
  DecoderOutput caption_decode(Graph& g, Var video, std::span<const int> input_tokens, const RunContext& ctx) const;

  /// Commonsense decoder `kind` attending over [video; ŝ] (video alone when
  /// `caption_encoding` is unset or empty). Throws ConfigError for kCaption.
  DecoderOutput commonsense_decode(Graph& g, DecoderKind kind, Var video, std::optional<Var> caption_encoding,
                                   std::span<const int> input_tokens, const RunContext& ctx) const;

  /// Commonsense heads contributing to the joint objective.
  std::vector<DecoderKind> trained_commonsense() const;

 private:
  ModelConfig config_;
  std::unique_ptr<Encoder> encoder_;
  std::array<std::unique_ptr<Decoder>, 4> decoders_;
};

/// Token ids of one training example; every sequence is <bos> ... <eos>.
struct TokenizedRecord {
  std::vector<int> caption;
  std::vector<int> attribute;
  std::vector<int> effect;
  std::vector<int> intention;

  const std::vector<int>& sequence(DecoderKind k) const;
};

struct JointLoss {
  Var total;
  /// Component mean NLLs indexed by DecoderKind; NaN for inactive heads.
  std::array<double, 4> component{};
};

/// Mean token NLL of `logits` against `gold` shifted left by one (the decoder
/// was fed gold[0..n-2]); <pad> targets are skipped.
Var sequence_nll(Var logits, std::span<const int> gold);

/// L = L_cap + Σ_k L_k over the trained commonsense heads, each L the mean
/// token NLL under teacher forcing.
JointLoss joint_loss(Graph& g, const HybridNet& model, const FeatureBundle& bundle, const TokenizedRecord& gold,
                     const RunContext& ctx);

struct ParamCount {
  std::size_t total = 0;
  /// Element counts grouped by name prefix: "enc.<modality>", "enc.fusion",
  /// "dec.<kind>.embed", "dec.<kind>.mem", "dec.<kind>.block<i>".
  std::map<std::string, std::size_t> by_module;
};

ParamCount count_params(const ParamStore& store);

}  // namespace hybridnet
