#include "hybridnet/generate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "hybridnet/error.hpp"

namespace hybridnet {

std::vector<double> log_softmax(std::span<const double> logits) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : logits) mx = std::max(mx, v);
  double s = 0.0;
  for (double v : logits) s += std::exp(v - mx);
  const double lse = mx + std::log(s);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

GreedyResult greedy_decode(const StepLogits& step, std::size_t max_len) {
  if (max_len == 0) throw ConfigError("greedy decoding needs max_len >= 1");
  GreedyResult out;
  std::vector<int> prefix = {kBosId};
  while (out.tokens.size() < max_len) {
    const std::vector<double> logits = step(prefix);
    if (logits.empty()) throw DimensionError("decoder step returned no logits");
    std::size_t best = 0;
    for (std::size_t i = 1; i < logits.size(); ++i) {
      if (logits[i] > logits[best]) best = i;
    }
    const int tok = static_cast<int>(best);
    out.tokens.push_back(tok);
    out.log_probs.push_back(log_softmax(logits)[best]);
    if (tok == kEosId) break;
    prefix.push_back(tok);
  }
  return out;
}

Predictor::Predictor(const HybridNet& model, const ParamStore& params, std::size_t max_len_caption,
                     std::size_t max_len_commonsense)
    : model_(model),
      params_(params),
      max_caption_(max_len_caption),
      max_commonsense_(max_len_commonsense),
      kinds_(model.trained_commonsense()) {
  const std::size_t limit = model.config().max_seq_len;
  if (max_caption_ == 0 || max_commonsense_ == 0) throw ConfigError("decode lengths must be positive");
  if (max_caption_ + 1 > limit || max_commonsense_ > limit) {
    throw ConfigError("decode lengths exceed max_seq_len=" + std::to_string(limit));
  }
}

Tensor Predictor::encode(const FeatureBundle& features) const {
  Graph g(params_, nullptr, false);
  return model_.encode(g, features).features.value();
}

Tensor Predictor::caption_states(const Tensor& video, std::span<const int> caption_inputs) const {
  Graph g(params_, nullptr, false);
  return model_.caption_decode(g, g.constant(video), caption_inputs, RunContext{}).hidden.value();
}

GreedyResult Predictor::decode(DecoderKind kind, const Tensor& video, const std::optional<Tensor>& states,
                               std::size_t max_len) const {
  auto step = [&](std::span<const int> prefix) {
    Graph g(params_, nullptr, false);
    Var v = g.constant(video);
    DecoderOutput out = kind == DecoderKind::kCaption
                            ? model_.caption_decode(g, v, prefix, RunContext{})
                            : model_.commonsense_decode(g, kind, v, g.constant(*states), prefix, RunContext{});
    const Tensor& logits = out.logits.value();
    const auto last = logits.row(logits.rows() - 1);
    return std::vector<double>(last.begin(), last.end());
  };
  return greedy_decode(step, max_len);
}

void Predictor::commonsense(Prediction& out, const Tensor& video, const Tensor& states) const {
  for (DecoderKind k : kinds_) {
    out.sequences[static_cast<std::size_t>(k)] = decode(k, video, states, max_commonsense_);
  }
}

Prediction Predictor::complete_task(const FeatureBundle& features, std::span<const int> gold_caption) const {
  if (gold_caption.size() < 2 || gold_caption.front() != kBosId) {
    throw DataError("complete task for '" + features.id + "' needs a gold caption of the form <bos> ... <eos>");
  }
  Prediction out;
  out.id = features.id;
  const Tensor video = encode(features);
  const Tensor states = caption_states(video, gold_caption.first(gold_caption.size() - 1));
  GreedyResult echo;
  echo.tokens.assign(gold_caption.begin() + 1, gold_caption.end());
  echo.log_probs.assign(echo.tokens.size(), 0.0);
  out.sequences[0] = std::move(echo);
  commonsense(out, video, states);
  return out;
}

Prediction Predictor::generate_task(const FeatureBundle& features) const {
  Prediction out;
  out.id = features.id;
  const Tensor video = encode(features);
  GreedyResult caption = decode(DecoderKind::kCaption, video, std::nullopt, max_caption_);
  std::vector<int> inputs = {kBosId};
  inputs.insert(inputs.end(), caption.tokens.begin(), caption.tokens.end());
  if (caption.terminated()) inputs.pop_back();
  const Tensor states = caption_states(video, inputs);
  out.sequences[0] = std::move(caption);
  commonsense(out, video, states);
  return out;
}

}  // namespace hybridnet
