#pragma once

#include <array>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hybridnet/decoder.hpp"

namespace hybridnet {

struct GreedyResult {
  /// Emitted tokens after <bos>; ends with <eos> unless max_len was reached.
  std::vector<int> tokens;
  /// Log-probability of each emitted token under its step's distribution.
  std::vector<double> log_probs;

  bool terminated() const { return !tokens.empty() && tokens.back() == kEosId; }
};

/// Logits of the last position for a full prefix (starting with <bos>).
using StepLogits = std::function<std::vector<double>(std::span<const int> prefix)>;

/// Greedy decoding: argmax of the last logits row, ties to the lowest id,
/// stopping at <eos> or after max_len tokens. Throws ConfigError when
/// max_len is zero.
GreedyResult greedy_decode(const StepLogits& step, std::size_t max_len);

/// Log-softmax of one logits row.
std::vector<double> log_softmax(std::span<const double> logits);

struct Prediction {
  std::string id;
  /// Indexed by DecoderKind. Unset for heads that were not produced.
  std::array<std::optional<GreedyResult>, 4> sequences;
};

/// Runs the two inference task shapes against a trained model.
class Predictor {
 public:
  Predictor(const HybridNet& model, const ParamStore& params, std::size_t max_len_caption = 12,
            std::size_t max_len_commonsense = 10);

  /// Caption given: ŝ comes from teacher-forcing `gold_caption`
  /// (<bos> ... <eos>); the caption slot echoes it. Throws DataError when the
  /// caption does not start with <bos> and contain at least one more token.
  Prediction complete_task(const FeatureBundle& features, std::span<const int> gold_caption) const;

  /// Caption decoded greedily first; its hidden states form ŝ.
  Prediction generate_task(const FeatureBundle& features) const;

  /// Commonsense heads produced: the trained ones.
  const std::vector<DecoderKind>& kinds() const { return kinds_; }

 private:
  Tensor encode(const FeatureBundle& features) const;
  Tensor caption_states(const Tensor& video, std::span<const int> caption_inputs) const;
  GreedyResult decode(DecoderKind kind, const Tensor& video, const std::optional<Tensor>& caption_states,
                      std::size_t max_len) const;
  void commonsense(Prediction& out, const Tensor& video, const Tensor& states) const;

  const HybridNet& model_;
  const ParamStore& params_;
  std::size_t max_caption_;
  std::size_t max_commonsense_;
  std::vector<DecoderKind> kinds_;
};

}  // namespace hybridnet
