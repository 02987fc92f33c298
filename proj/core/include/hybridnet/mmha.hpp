#pragma once

#include <optional>
#include <string>

#include "hybridnet/graph.hpp"
#include "hybridnet/model_config.hpp"
#include "hybridnet/param_store.hpp"
#include "hybridnet/rng.hpp"

namespace hybridnet {

/// Every per-head map produced by one MMHA call, each [H×N×N]. Maps that the
/// active configuration does not compute are left unset.
struct AttentionMapSet {
  Var original;                   // A_o, pre-softmax
  std::optional<Var> conditional;  // A_c
  std::optional<Var> triangle;     // A_triangle
  std::optional<Var> condition;    // A_condition
  std::optional<Var> guide;        // A_guide
  Var merge;                      // A_merge, handed to the next block
  Var out;                        // A_out = softmax(MASK(A_merge))
};

struct MergedMaps {
  Var condition;
  Var guide;
  Var merge;
};

/// A_condition = α·A_triangle + (1−α)·A_c
/// A_guide     = β·A_condition + (1−β)·A_o
/// A_merge     = γ·A_previous + (1−γ)·A_guide, or A_guide without a previous map.
MergedMaps merge_maps(Var triangle, Var conditional, Var original, std::optional<Var> previous,
                      const MergeCoefficients& coeffs);

struct MmhaOutput {
  Var x_out;
  AttentionMapSet maps;
};

/// Memory-routed multi-head self-attention.
///
/// The original map comes from the block input; the conditional map uses the
/// pooled memory state as a second query against the same keys. The
/// conditional map goes through the triangle convolution (+ReLU), the merge
/// chain mixes in the original map and the previous block's merged map, and
/// the causally masked softmax of the result weights the values.
///
/// With use_mmha off, A_merge is A_o and the memory is ignored, which is plain
/// masked self-attention. With use_crc off the previous-map term is dropped
/// (γ = 0).
class MemoryRoutedAttention {
 public:
  struct Params {
    ParamId wq, wk, wv, wq_mem;
    ParamId conv_w, conv_b;
    ParamId wo, bo;
  };

  MemoryRoutedAttention(const std::string& prefix, const ModelConfig& config, ParamStore& store, Rng& rng);

  /// A_o = (X Wq)(X Wk)ᵀ / √d_k per head.
  Var original_map(Graph& g, Var x) const;
  /// A_c = (P Wq_mem)(X Wk)ᵀ / √d_k per head, P the pooled memory [N×d].
  Var conditional_map(Graph& g, Var pooled_memory, Var x) const;
  /// ReLU(triangle_conv(A_c)).
  Var triangle(Graph& g, Var conditional) const;

  /// `pooled_memory` is required when use_mmha is on. `previous` is the prior
  /// block's A_merge, or nullopt in the first block.
  MmhaOutput forward(Graph& g, Var x, std::optional<Var> pooled_memory, std::optional<Var> previous) const;

  const Params& params() const { return params_; }

 private:
  Var logits(Var q, Var k) const;

  Params params_{};
  std::size_t heads_;
  double scale_;
  bool use_mmha_;
  bool use_crc_;
  MergeCoefficients coeffs_;
};

}  // namespace hybridnet
