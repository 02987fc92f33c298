#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hybridnet/graph.hpp"
#include "hybridnet/model_config.hpp"
#include "hybridnet/param_store.hpp"
#include "hybridnet/rng.hpp"

namespace hybridnet {

/// Result of rolling the memory over a decoder input sequence.
struct MemoryRollout {
  /// states[t] is M after consuming embedding row t ([S×d]).
  std::vector<Var> states;
  /// Row t is the slot mean of states[t] ([N×d]); unset when N == 0.
  std::optional<Var> pooled;
};

/// Recurrent slot memory that records the previously generated words.
///
/// One step, given M_prev [S×d] and the last output embedding y [1×d]:
///   Z  = MHA(Q = M_prev Wq, K = [M_prev; y] Wk, V = [M_prev; y] Wv) Wo + bo
///   M' = f_mlp(Z + M_prev) + Z + M_prev
///   Gf = Y Wf + tanh(M_prev) Uf,   Gi = Y Wi + tanh(M_prev) Ui   (Y = y repeated S times)
///   M  = σ(Gf) ⊙ M_prev + σ(Gi) ⊙ tanh(M')
/// The gates carry no bias; the initial memory M₀ is trainable.
class MemoryModule {
 public:
  struct Params {
    ParamId wq, wk, wv, wo, bo;
    ParamId mlp_w1, mlp_b1, mlp_w2, mlp_b2;
    ParamId wf, uf, wi, ui;
    ParamId m0;
  };

  /// Registers parameters under `prefix` (e.g. "dec.att.mem").
  MemoryModule(const std::string& prefix, const ModelConfig& config, ParamStore& store, Rng& rng);

  /// Multi-head attention read; returns Z [S×d].
  Var attend(Graph& g, Var m_prev, Var y_prev) const;
  /// MLP-residual core; returns M'.
  Var core(Graph& g, Var z, Var m_prev) const;
  /// Forget/input gating; returns M_t.
  Var gate(Graph& g, Var m_core, Var m_prev, Var y_prev) const;
  /// attend → core → gate.
  Var step(Graph& g, Var m_prev, Var y_prev) const;

  /// Iterates step() from M₀ over the rows of `token_embeddings` ([N×d],
  /// row t = embedding of the token fed at decoder position t).
  MemoryRollout rollout(Graph& g, Var token_embeddings) const;

  const Params& params() const { return params_; }
  std::size_t slots() const { return slots_; }

 private:
  Params params_{};
  std::size_t slots_;
  std::size_t d_model_;
  std::size_t heads_;
};

}  // namespace hybridnet
