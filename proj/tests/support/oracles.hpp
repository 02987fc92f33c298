#pragma once

#include <string>
#include <vector>

#include "hybridnet/tensor.hpp"

namespace oracle {

using hybridnet::Tensor;
using Sentence = std::vector<std::string>;

Tensor matmul(const Tensor& a, const Tensor& b);

/// Masked 3×3 cross-correlation over [C×N×N] maps, zero padded, followed by
/// the one-down/one-right shift. Taps with dc > dr are skipped. No ReLU.
Tensor triangle_conv(const Tensor& maps, const Tensor& kernel, const Tensor& bias);

/// Per-head scaled dot products, [H×N×M].
Tensor attention_logits(const Tensor& q, const Tensor& k, std::size_t heads, double scale);

/// Row softmax where an all -inf row maps to zeros.
Tensor softmax_rows(const Tensor& a);

/// One LSTM step with gate order i, f, g, o. Returns {h, c}.
std::pair<std::vector<double>, std::vector<double>> lstm_step(const std::vector<double>& gates,
                                                             const std::vector<double>& c_prev);

// Metrics recomputed from scratch with string-keyed n-grams.
double bleu(const std::vector<Sentence>& hyps, const std::vector<std::vector<Sentence>>& refs, int n_max);
/// LCS by enumerating hypothesis subsequences (short inputs only).
std::size_t lcs_bruteforce(const Sentence& a, const Sentence& b);
double rouge_l(const Sentence& hyp, const std::vector<Sentence>& refs);
double cider(const std::vector<Sentence>& hyps, const std::vector<std::vector<Sentence>>& refs);
double meteor(const Sentence& hyp, const std::vector<Sentence>& refs);

}  // namespace oracle
