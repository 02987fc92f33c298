#include "hybridnet/mmha.hpp"

#include <cmath>

#include "hybridnet/error.hpp"
#include "hybridnet/ops.hpp"
#include "init.hpp"

namespace hybridnet {

MergedMaps merge_maps(Var triangle, Var conditional, Var original, std::optional<Var> previous,
                      const MergeCoefficients& coeffs) {
  MergedMaps m;
  m.condition = lincomb(triangle, coeffs.alpha, conditional, 1.0 - coeffs.alpha);
  m.guide = lincomb(m.condition, coeffs.beta, original, 1.0 - coeffs.beta);
  m.merge = previous ? lincomb(*previous, coeffs.gamma, m.guide, 1.0 - coeffs.gamma) : m.guide;
  return m;
}

MemoryRoutedAttention::MemoryRoutedAttention(const std::string& prefix, const ModelConfig& config, ParamStore& store,
                                             Rng& rng)
    : heads_(config.n_heads),
      scale_(1.0 / std::sqrt(static_cast<double>(config.head_dim()))),
      use_mmha_(config.use_mmha),
      use_crc_(config.use_crc),
      coeffs_(config.coeffs) {
  const std::size_t d = config.d_model;
  const std::size_t h = config.n_heads;
  const std::string p = prefix + ".";
  params_.wq = store.add(p + "Wq", init::glorot(rng, d, d));
  params_.wk = store.add(p + "Wk", init::glorot(rng, d, d));
  params_.wv = store.add(p + "Wv", init::glorot(rng, d, d));
  params_.wq_mem = store.add(p + "Wq_mem", init::glorot(rng, d, d));
  Tensor kernel = init::uniform(rng, {h, h, 3, 3}, 1.0 / std::sqrt(9.0 * static_cast<double>(h)));
  for (std::size_t o = 0; o < h; ++o)
    for (std::size_t i = 0; i < h; ++i)
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc)
          if (!triangle_tap_active(dr, dc)) {
            kernel[((o * h + i) * 3 + static_cast<std::size_t>(dr + 1)) * 3 + static_cast<std::size_t>(dc + 1)] = 0.0;
          }
  params_.conv_w = store.add(p + "conv.W", std::move(kernel));
  params_.conv_b = store.add(p + "conv.b", Tensor({h}));
  params_.wo = store.add(p + "Wo", init::glorot(rng, d, d));
  params_.bo = store.add(p + "bo", Tensor({d}));
}

Var MemoryRoutedAttention::logits(Var q, Var k) const { return attention_logits(q, k, heads_, scale_); }

Var MemoryRoutedAttention::original_map(Graph& g, Var x) const {
  return logits(matmul(x, g.param(params_.wq)), matmul(x, g.param(params_.wk)));
}

Var MemoryRoutedAttention::conditional_map(Graph& g, Var pooled_memory, Var x) const {
  if (pooled_memory.shape() != x.shape()) {
    throw DimensionError("conditional map: pooled memory " + shape_str(pooled_memory.shape()) +
                         " does not match input " + shape_str(x.shape()));
  }
  return logits(matmul(pooled_memory, g.param(params_.wq_mem)), matmul(x, g.param(params_.wk)));
}

Var MemoryRoutedAttention::triangle(Graph& g, Var conditional) const {
  return relu(triangle_conv(conditional, g.param(params_.conv_w), g.param(params_.conv_b)));
}

MmhaOutput MemoryRoutedAttention::forward(Graph& g, Var x, std::optional<Var> pooled_memory,
                                          std::optional<Var> previous) const {
  const std::size_t n = x.value().dim(0);
  Var keys = matmul(x, g.param(params_.wk));
  Var values = matmul(x, g.param(params_.wv));

  MmhaOutput out;
  AttentionMapSet& maps = out.maps;
  maps.original = logits(matmul(x, g.param(params_.wq)), keys);
  if (use_mmha_) {
    if (!pooled_memory) throw ConfigError("MMHA forward needs the pooled memory state");
    if (pooled_memory->shape() != x.shape()) {
      throw DimensionError("MMHA: pooled memory " + shape_str(pooled_memory->shape()) + " does not match input " +
                           shape_str(x.shape()));
    }
    maps.conditional = logits(matmul(*pooled_memory, g.param(params_.wq_mem)), keys);
    maps.triangle = triangle(g, *maps.conditional);
    MergedMaps merged = merge_maps(*maps.triangle, *maps.conditional, maps.original,
                                   use_crc_ ? previous : std::nullopt, coeffs_);
    maps.condition = merged.condition;
    maps.guide = merged.guide;
    maps.merge = merged.merge;
  } else {
    maps.merge = maps.original;
  }
  maps.out = softmax_rows(attention_mask(maps.merge, /*causal=*/true, n));
  Var context = attend_values(maps.out, values);
  out.x_out = add_row(matmul(context, g.param(params_.wo)), g.param(params_.bo));
  return out;
}

}  // namespace hybridnet
