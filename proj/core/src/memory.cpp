#include "hybridnet/memory.hpp"

#include <cmath>

#include "hybridnet/error.hpp"
#include "hybridnet/ops.hpp"
#include "init.hpp"

namespace hybridnet {

MemoryModule::MemoryModule(const std::string& prefix, const ModelConfig& config, ParamStore& store, Rng& rng)
    : slots_(config.mem_slots), d_model_(config.d_model), heads_(config.n_heads) {
  const std::size_t d = config.d_model;
  const std::string p = prefix + ".";
  params_.wq = store.add(p + "Wq", init::glorot(rng, d, d));
  params_.wk = store.add(p + "Wk", init::glorot(rng, d, d));
  params_.wv = store.add(p + "Wv", init::glorot(rng, d, d));
  params_.wo = store.add(p + "Wo", init::glorot(rng, d, d));
  params_.bo = store.add(p + "bo", Tensor({d}));
  params_.mlp_w1 = store.add(p + "mlp.W1", init::glorot(rng, d, d));
  params_.mlp_b1 = store.add(p + "mlp.b1", Tensor({d}));
  params_.mlp_w2 = store.add(p + "mlp.W2", init::glorot(rng, d, d));
  params_.mlp_b2 = store.add(p + "mlp.b2", Tensor({d}));
  params_.wf = store.add(p + "Wf", init::glorot(rng, d, d));
  params_.uf = store.add(p + "Uf", init::glorot(rng, d, d));
  params_.wi = store.add(p + "Wi", init::glorot(rng, d, d));
  params_.ui = store.add(p + "Ui", init::glorot(rng, d, d));
  params_.m0 = store.add(p + "M0", Tensor({config.mem_slots, d}));
}

Var MemoryModule::attend(Graph& g, Var m_prev, Var y_prev) const {
  if (m_prev.value().rank() != 2 || m_prev.value().dim(1) != d_model_ || y_prev.value().size() != d_model_) {
    throw DimensionError("memory attend: memory " + shape_str(m_prev.shape()) + " / token " +
                         shape_str(y_prev.shape()) + " do not match d_model=" + std::to_string(d_model_));
  }
  Var mem_and_token = concat_rows({m_prev, y_prev});
  Var q = matmul(m_prev, g.param(params_.wq));
  Var k = matmul(mem_and_token, g.param(params_.wk));
  Var v = matmul(mem_and_token, g.param(params_.wv));
  const double scale = 1.0 / std::sqrt(static_cast<double>(d_model_ / heads_));
  Var probs = softmax_rows(attention_logits(q, k, heads_, scale));
  Var heads = attend_values(probs, v);
  return add_row(matmul(heads, g.param(params_.wo)), g.param(params_.bo));
}

Var MemoryModule::core(Graph& g, Var z, Var m_prev) const {
  Var residual = add(z, m_prev);
  Var hidden = relu(add_row(matmul(residual, g.param(params_.mlp_w1)), g.param(params_.mlp_b1)));
  Var mlp = add_row(matmul(hidden, g.param(params_.mlp_w2)), g.param(params_.mlp_b2));
  return add(mlp, residual);
}

Var MemoryModule::gate(Graph& g, Var m_core, Var m_prev, Var y_prev) const {
  if (y_prev.value().rank() != 2 || y_prev.value().dim(0) != 1) {
    throw DimensionError("memory gate: token embedding must be [1×d], got " + shape_str(y_prev.shape()));
  }
  Var y = y_prev;
  Var tanh_prev = tanh(m_prev);
  Var forget = add_row(matmul(tanh_prev, g.param(params_.uf)), matmul(y, g.param(params_.wf)));
  Var input = add_row(matmul(tanh_prev, g.param(params_.ui)), matmul(y, g.param(params_.wi)));
  return add(mul(sigmoid(forget), m_prev), mul(sigmoid(input), tanh(m_core)));
}

Var MemoryModule::step(Graph& g, Var m_prev, Var y_prev) const {
  Var z = attend(g, m_prev, y_prev);
  Var m_core = core(g, z, m_prev);
  return gate(g, m_core, m_prev, y_prev);
}

MemoryRollout MemoryModule::rollout(Graph& g, Var token_embeddings) const {
  MemoryRollout out;
  const Tensor& e = token_embeddings.value();
  if (e.rank() != 2 || e.dim(1) != d_model_) {
    throw DimensionError("memory rollout: embeddings " + shape_str(e.shape()) + " are not d_model=" +
                         std::to_string(d_model_) + " wide");
  }
  const std::size_t n = e.dim(0);
  if (n == 0) return out;
  Var m = g.param(params_.m0);
  std::vector<Var> pooled;
  pooled.reserve(n);
  for (std::size_t t = 0; t < n; ++t) {
    m = step(g, m, slice_rows(token_embeddings, t, 1));
    out.states.push_back(m);
    pooled.push_back(mean_rows(m));
  }
  out.pooled = n == 1 ? pooled.front() : concat_rows(pooled);
  return out;
}

}  // namespace hybridnet
