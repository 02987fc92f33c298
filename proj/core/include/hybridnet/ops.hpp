#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "hybridnet/graph.hpp"
#include "hybridnet/rng.hpp"

namespace hybridnet {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

enum class Activation { kRelu, kSigmoid, kTanh };

// Dense algebra. All ops record a backward rule on the graph of their inputs.

/// [m×k]·[k×n]. Throws DimensionError naming both shapes on mismatch.
Var matmul(Var a, Var b);
/// [m×k]·[n×k]ᵀ.
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Hadamard product.
Var mul(Var a, Var b);
/// Adds a length-c vector (shape [c] or [1×c]) to every row of `a`.
Var add_row(Var a, Var row);
Var scale(Var a, double s);
/// wa·a + wb·b.
Var lincomb(Var a, double wa, Var b, double wb);
Var sum(Var a);

Var activation(Var a, Activation kind);
inline Var relu(Var a) { return activation(a, Activation::kRelu); }
inline Var sigmoid(Var a) { return activation(a, Activation::kSigmoid); }
inline Var tanh(Var a) { return activation(a, Activation::kTanh); }

/// Row-wise softmax over the last axis. -inf entries get probability 0 and a
/// row that is entirely -inf maps to all zeros.
Var softmax_rows(Var a);

/// Normalises each row (last axis) to zero mean / unit variance, then applies
/// gain and bias.
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);

// Shape plumbing.
Var concat_rows(const std::vector<Var>& parts);
Var slice_rows(Var a, std::size_t start, std::size_t count);
/// Mean over rows: [r×c] -> [1×c].
Var mean_rows(Var a);
/// Gathers rows of `table` ([V×d]) -> [N×d].
Var embedding(Var table, std::span<const int> ids);

/// Inverted dropout with a mask drawn from `rng`. p == 0 is the identity.
Var dropout(Var a, double p, Rng& rng);

/// Mean negative log-likelihood of `targets` under row-wise softmax(logits);
/// entries equal to `ignore_index` are excluded. Throws DataError when every
/// target is ignored.
Var cross_entropy(Var logits, std::span<const int> targets, int ignore_index);

/// Four-gate LSTM cell. `gates` is [1×4d] pre-activations ordered
/// (input, forget, candidate, output); `c_prev` is [1×d]. Returns [2×d] with
/// row 0 = h_t and row 1 = c_t.
Var lstm_cell(Var gates, Var c_prev);

// Multi-head attention pieces. Heads are contiguous column blocks of width
// d / heads.

/// scale · Q_h K_hᵀ per head: q [N×d], k [M×d] -> [H×N×M].
Var attention_logits(Var q, Var k, std::size_t heads, double scale);
/// Sets logits[h,i,j] to -inf where j > i (when `causal`) or j >= key_limit.
Var attention_mask(Var logits, bool causal, std::size_t key_limit);
/// Per-head probs [H×N×M] times v [M×d], heads concatenated -> [N×d].
Var attend_values(Var probs, Var v);

/// Triangle convolution over an [H×N×N] stack of maps: 3×3 cross-correlation
/// with zero padding whose kernel taps (dr, dc) with dc > dr are never read,
/// followed by a shift of one row down and one column right (first row and
/// column zero). `kernel` is [H_out×H_in×3×3], `bias` is [H_out]. The ReLU is
/// applied separately.
Var triangle_conv(Var maps, Var kernel, Var bias);

/// True for kernel taps that the triangle convolution reads.
constexpr bool triangle_tap_active(int dr, int dc) { return dc <= dr; }

}  // namespace hybridnet
