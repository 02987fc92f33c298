#include "hybridnet/decoder.hpp"

#include <cmath>

#include "hybridnet/error.hpp"
#include "hybridnet/ops.hpp"
#include "init.hpp"

namespace hybridnet {

DecoderBlock::DecoderBlock(const std::string& prefix, const ModelConfig& config, ParamStore& store, Rng& rng)
    : mmha_(prefix + ".mmha", config, store, rng),
      heads_(config.n_heads),
      scale_(1.0 / std::sqrt(static_cast<double>(config.head_dim()))),
      dropout_(config.dropout) {
  const std::size_t d = config.d_model;
  const std::size_t ff = config.ff_width();
  const std::string p = prefix + ".";
  params_.cq = store.add(p + "cross.Wq", init::glorot(rng, d, d));
  params_.ck = store.add(p + "cross.Wk", init::glorot(rng, d, d));
  params_.cv = store.add(p + "cross.Wv", init::glorot(rng, d, d));
  params_.co = store.add(p + "cross.Wo", init::glorot(rng, d, d));
  params_.cbo = store.add(p + "cross.bo", Tensor({d}));
  params_.ff_w1 = store.add(p + "ffn.W1", init::glorot(rng, d, ff));
  params_.ff_b1 = store.add(p + "ffn.b1", Tensor({ff}));
  params_.ff_w2 = store.add(p + "ffn.W2", init::glorot(rng, ff, d));
  params_.ff_b2 = store.add(p + "ffn.b2", Tensor({d}));
  params_.ln1_g = store.add(p + "ln1.g", Tensor({d}, 1.0));
  params_.ln1_b = store.add(p + "ln1.b", Tensor({d}));
  params_.ln2_g = store.add(p + "ln2.g", Tensor({d}, 1.0));
  params_.ln2_b = store.add(p + "ln2.b", Tensor({d}));
  params_.ln3_g = store.add(p + "ln3.g", Tensor({d}, 1.0));
  params_.ln3_b = store.add(p + "ln3.b", Tensor({d}));
}

Var DecoderBlock::sublayer_out(Var x, Var y, ParamId gain, ParamId bias, Graph& g, const RunContext& ctx) const {
  if (ctx.train && dropout_ > 0.0) {
    if (!ctx.dropout_rng) throw ConfigError("training pass with dropout needs a dropout rng");
    y = dropout(y, dropout_, *ctx.dropout_rng);
  }
  return layer_norm(add(x, y), g.param(gain), g.param(bias));
}

BlockOutput DecoderBlock::forward(Graph& g, Var x, Var cross_memory, std::optional<Var> pooled_memory,
                                  std::optional<Var> previous, const RunContext& ctx) const {
  MmhaOutput self_attn = mmha_.forward(g, x, pooled_memory, previous);
  if (ctx.trace) ctx.trace->push_back(self_attn.maps);
  Var h = sublayer_out(x, self_attn.x_out, params_.ln1_g, params_.ln1_b, g, ctx);

  Var q = matmul(h, g.param(params_.cq));
  Var k = matmul(cross_memory, g.param(params_.ck));
  Var v = matmul(cross_memory, g.param(params_.cv));
  Var probs = softmax_rows(attention_logits(q, k, heads_, scale_));
  Var cross = add_row(matmul(attend_values(probs, v), g.param(params_.co)), g.param(params_.cbo));
  h = sublayer_out(h, cross, params_.ln2_g, params_.ln2_b, g, ctx);

  Var ff = relu(add_row(matmul(h, g.param(params_.ff_w1)), g.param(params_.ff_b1)));
  ff = add_row(matmul(ff, g.param(params_.ff_w2)), g.param(params_.ff_b2));
  h = sublayer_out(h, ff, params_.ln3_g, params_.ln3_b, g, ctx);
  return BlockOutput{h, self_attn.maps.merge};
}

Decoder::Decoder(DecoderKind kind, const ModelConfig& config, ParamStore& store, Rng& rng)
    : kind_(kind),
      config_(config),
      embed_(store.add("dec." + std::string(to_string(kind)) + ".embed",
                       init::normal(rng, {config.vocab_size, config.d_model},
                                    1.0 / std::sqrt(static_cast<double>(config.d_model))))),
      memory_("dec." + std::string(to_string(kind)) + ".mem", config, store, rng) {
  blocks_.reserve(config.n_blocks);
  for (std::size_t b = 0; b < config.n_blocks; ++b) {
    blocks_.emplace_back("dec." + std::string(to_string(kind)) + ".block" + std::to_string(b), config, store, rng);
  }
}

DecoderOutput Decoder::forward(Graph& g, Var cross_memory, std::span<const int> input_tokens,
                               const RunContext& ctx) const {
  const std::size_t n = input_tokens.size();
  if (n == 0) throw LengthError("decoder input is empty");
  if (n > config_.max_seq_len) {
    throw LengthError("decoder input of " + std::to_string(n) + " tokens exceeds max_seq_len=" +
                      std::to_string(config_.max_seq_len));
  }
  const std::size_t d = config_.d_model;
  Var table = g.param(embed_);
  Var tokens = hybridnet::embedding(table, input_tokens);
  Var x = add(scale(tokens, std::sqrt(static_cast<double>(d))), g.constant(sinusoidal_positions(0, n, d)));

  std::optional<Var> pooled;
  if (config_.use_mmha) pooled = memory_.rollout(g, tokens).pooled;

  std::optional<Var> previous;
  for (const DecoderBlock& block : blocks_) {
    BlockOutput out = block.forward(g, x, cross_memory, pooled, previous, ctx);
    x = out.x;
    previous = out.merge;
  }
  return DecoderOutput{matmul_nt(x, table), x};
}

HybridNet::HybridNet(const ModelConfig& config, ParamStore& store, std::uint64_t seed) : config_(config) {
  config_.validate();
  if (config_.vocab_size <= static_cast<std::size_t>(kUnkId)) {
    throw ConfigError("vocab_size must cover the reserved tokens, got " + std::to_string(config_.vocab_size));
  }
  Rng rng(seed);
  encoder_ = std::make_unique<Encoder>(config_, store, rng);
  for (DecoderKind k : kAllKinds) {
    decoders_[static_cast<std::size_t>(k)] = std::make_unique<Decoder>(k, config_, store, rng);
  }
}

MultimodalFeatures HybridNet::encode(Graph& g, const FeatureBundle& bundle) const {
  return encoder_->encode(g, bundle);
}

DecoderOutput HybridNet::caption_decode(Graph& g, Var video, std::span<const int> input_tokens,
                                        const RunContext& ctx) const {
  return decoder(DecoderKind::kCaption).forward(g, video, input_tokens, ctx);
}

DecoderOutput HybridNet::commonsense_decode(Graph& g, DecoderKind kind, Var video, std::optional<Var> caption_encoding,
                                            std::span<const int> input_tokens, const RunContext& ctx) const {
  if (kind == DecoderKind::kCaption) throw ConfigError("commonsense_decode called with the caption decoder");
  Var cross = video;
  if (caption_encoding && caption_encoding->value().size() > 0) cross = concat_rows({video, *caption_encoding});
  return decoder(kind).forward(g, cross, input_tokens, ctx);
}

std::vector<DecoderKind> HybridNet::trained_commonsense() const {
  if (config_.use_multicms) return {kCommonsenseKinds.begin(), kCommonsenseKinds.end()};
  return {config_.single_kind};
}

const std::vector<int>& TokenizedRecord::sequence(DecoderKind k) const {
  switch (k) {
    case DecoderKind::kCaption: return caption;
    case DecoderKind::kAttribute: return attribute;
    case DecoderKind::kEffect: return effect;
    case DecoderKind::kIntention: return intention;
  }
  return caption;
}

Var sequence_nll(Var logits, std::span<const int> gold) {
  if (gold.size() < 2) throw DataError("gold sequence needs at least <bos> and one target token");
  return cross_entropy(logits, gold.subspan(1), kPadId);
}

JointLoss joint_loss(Graph& g, const HybridNet& model, const FeatureBundle& bundle, const TokenizedRecord& gold,
                     const RunContext& ctx) {
  JointLoss out;
  out.component.fill(std::nan(""));
  auto inputs = [](const std::vector<int>& seq) {
    if (seq.size() < 2) throw DataError("gold sequence needs at least <bos> and one target token");
    return std::span<const int>(seq.data(), seq.size() - 1);
  };
  MultimodalFeatures mf = model.encode(g, bundle);
  DecoderOutput cap = model.caption_decode(g, mf.features, inputs(gold.caption), ctx);
  Var total = sequence_nll(cap.logits, gold.caption);
  out.component[0] = total.value()[0];
  for (DecoderKind k : model.trained_commonsense()) {
    const auto& seq = gold.sequence(k);
    DecoderOutput cs = model.commonsense_decode(g, k, mf.features, cap.hidden, inputs(seq), ctx);
    Var lk = sequence_nll(cs.logits, seq);
    out.component[static_cast<std::size_t>(k)] = lk.value()[0];
    total = add(total, lk);
  }
  out.total = total;
  return out;
}

ParamCount count_params(const ParamStore& store) {
  ParamCount pc;
  for (std::size_t i = 0; i < store.size(); ++i) {
    const std::string& name = store.name(i);
    const std::size_t depth = name.rfind("dec.", 0) == 0 ? 3 : 2;
    std::size_t end = 0;
    for (std::size_t k = 0; k < depth && end != std::string::npos; ++k) end = name.find('.', k == 0 ? 0 : end + 1);
    const std::string group = name.substr(0, end);
    const std::size_t n = store.value(i).size();
    pc.by_module[group] += n;
    pc.total += n;
  }
  return pc;
}

}  // namespace hybridnet
