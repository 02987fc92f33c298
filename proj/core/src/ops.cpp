#include "hybridnet/ops.hpp"

#include <algorithm>
#include <cmath>

#include "hybridnet/error.hpp"
#include "kernels.hpp"

namespace hybridnet {

namespace {

Graph& graph_of(Var a) {
  if (!a.graph) throw ConfigError("op applied to a detached Var");
  return *a.graph;
}

void require_same_graph(Var a, Var b) {
  if (a.graph != b.graph) throw ConfigError("op mixes Vars from different graphs");
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
  }
}

void accumulate(Tensor& dst, const Tensor& src, double s = 1.0) {
  auto d = dst.data();
  auto x = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s * x[i];
}

}  // namespace

Var matmul(Var a, Var b) {
  require_same_graph(a, b);
  Graph& g = graph_of(a);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(av.shape()) + " and " + shape_str(bv.shape()));
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out({m, n});
  kernels::gemm_nn(m, n, k, av.ptr(), bv.ptr(), out.ptr());
  const auto ai = a.id, bi = b.id;
  return g.emit(std::move(out), {a, b}, [ai, bi, m, n, k](Graph& gr, std::uint32_t self) {
    const Tensor& dout = gr.grad(self);
    if (gr.needs_grad(ai)) kernels::gemm_nt(m, k, n, dout.ptr(), gr.value(bi).ptr(), gr.grad(ai).ptr());
    if (gr.needs_grad(bi)) kernels::gemm_tn(k, n, m, gr.value(ai).ptr(), dout.ptr(), gr.grad(bi).ptr());
  });
}

Var matmul_nt(Var a, Var b) {
  require_same_graph(a, b);
  Graph& g = graph_of(a);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(1)) {
    throw DimensionError("matmul_nt: incompatible shapes " + shape_str(av.shape()) + " and " +
                         shape_str(bv.shape()) + "ᵀ");
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(0);
  Tensor out({m, n});
  kernels::gemm_nt(m, n, k, av.ptr(), bv.ptr(), out.ptr());
  const auto ai = a.id, bi = b.id;
  return g.emit(std::move(out), {a, b}, [ai, bi, m, n, k](Graph& gr, std::uint32_t self) {
    const Tensor& dout = gr.grad(self);
    if (gr.needs_grad(ai)) kernels::gemm_nn(m, k, n, dout.ptr(), gr.value(bi).ptr(), gr.grad(ai).ptr());
    if (gr.needs_grad(bi)) kernels::gemm_tn(n, k, m, dout.ptr(), gr.value(ai).ptr(), gr.grad(bi).ptr());
  });
}

Var add(Var a, Var b) {
  require_same_graph(a, b);
  require_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  accumulate(out, b.value());
  const auto ai = a.id, bi = b.id;
  return graph_of(a).emit(std::move(out), {a, b}, [ai, bi](Graph& gr, std::uint32_t self) {
    const Tensor& dout = gr.grad(self);
    if (gr.needs_grad(ai)) accumulate(gr.grad(ai), dout);
    if (gr.needs_grad(bi)) accumulate(gr.grad(bi), dout);
  });
}

Var sub(Var a, Var b) { return lincomb(a, 1.0, b, -1.0); }

Var mul(Var a, Var b) {
  require_same_graph(a, b);
  require_same_shape("mul", a.value(), b.value());
  Tensor out = a.value();
  const auto bd = b.value().data();
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] *= bd[i];
  const auto ai = a.id, bi = b.id;
  return graph_of(a).emit(std::move(out), {a, b}, [ai, bi](Graph& gr, std::uint32_t self) {
    const auto dout = gr.grad(self).data();
    if (gr.needs_grad(ai)) {
      auto ga = gr.grad(ai).data();
      const auto bv = gr.value(bi).data();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += dout[i] * bv[i];
    }
    if (gr.needs_grad(bi)) {
      auto gb = gr.grad(bi).data();
      const auto av = gr.value(ai).data();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += dout[i] * av[i];
    }
  });
}

Var add_row(Var a, Var row) {
  require_same_graph(a, row);
  const Tensor& av = a.value();
  const Tensor& rv = row.value();
  const std::size_t c = av.cols();
  if (rv.size() != c || (rv.rank() == 2 && rv.dim(0) != 1) || rv.rank() > 2) {
    throw DimensionError("add_row: cannot broadcast " + shape_str(rv.shape()) + " over " + shape_str(av.shape()));
  }
  Tensor out = av;
  const std::size_t r = av.rows();
  for (std::size_t i = 0; i < r; ++i) {
    double* o = out.ptr() + i * c;
    for (std::size_t j = 0; j < c; ++j) o[j] += rv[j];
  }
  const auto ai = a.id, ri = row.id;
  return graph_of(a).emit(std::move(out), {a, row}, [ai, ri, r, c](Graph& gr, std::uint32_t self) {
    const Tensor& dout = gr.grad(self);
    if (gr.needs_grad(ai)) accumulate(gr.grad(ai), dout);
    if (gr.needs_grad(ri)) {
      Tensor& gv = gr.grad(ri);
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) gv[j] += dout[i * c + j];
      }
    }
  });
}

Var scale(Var a, double s) {
  Tensor out = a.value();
  for (auto& x : out.data()) x *= s;
  const auto ai = a.id;
  return graph_of(a).emit(std::move(out), {a}, [ai, s](Graph& gr, std::uint32_t self) {
    accumulate(gr.grad(ai), gr.grad(self), s);
  });
}

Var lincomb(Var a, double wa, Var b, double wb) {
  require_same_graph(a, b);
  require_same_shape("lincomb", a.value(), b.value());
  Tensor out(a.shape());
  const auto ad = a.value().data();
  const auto bd = b.value().data();
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = wa * ad[i] + wb * bd[i];
  const auto ai = a.id, bi = b.id;
  return graph_of(a).emit(std::move(out), {a, b}, [ai, bi, wa, wb](Graph& gr, std::uint32_t self) {
    const Tensor& dout = gr.grad(self);
    if (gr.needs_grad(ai)) accumulate(gr.grad(ai), dout, wa);
    if (gr.needs_grad(bi)) accumulate(gr.grad(bi), dout, wb);
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double x : a.value().data()) s += x;
  const auto ai = a.id;
  return graph_of(a).emit(Tensor({1}, std::vector<double>{s}), {a}, [ai](Graph& gr, std::uint32_t self) {
    const double d = gr.grad(self)[0];
    for (auto& x : gr.grad(ai).data()) x += d;
  });
}

Var activation(Var a, Activation kind) {
  Tensor out = a.value();
  for (auto& x : out.data()) {
    switch (kind) {
      case Activation::kRelu: x = x > 0.0 ? x : 0.0; break;
      case Activation::kSigmoid: x = 1.0 / (1.0 + std::exp(-x)); break;
      case Activation::kTanh: x = std::tanh(x); break;
    }
  }
  const auto ai = a.id;
  return graph_of(a).emit(std::move(out), {a}, [ai, kind](Graph& gr, std::uint32_t self) {
    const auto dout = gr.grad(self).data();
    const auto y = gr.value(self).data();
    auto ga = gr.grad(ai).data();
    for (std::size_t i = 0; i < ga.size(); ++i) {
      switch (kind) {
        case Activation::kRelu: ga[i] += y[i] > 0.0 ? dout[i] : 0.0; break;
        case Activation::kSigmoid: ga[i] += dout[i] * y[i] * (1.0 - y[i]); break;
        case Activation::kTanh: ga[i] += dout[i] * (1.0 - y[i] * y[i]); break;
      }
    }
  });
}

Var softmax_rows(Var a) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  const std::size_t r = av.rows(), c = av.cols();
  for (std::size_t i = 0; i < r; ++i) {
    const double* x = av.ptr() + i * c;
    double* y = out.ptr() + i * c;
    double m = kNegInf;
    for (std::size_t j = 0; j < c; ++j) m = std::max(m, x[j]);
    if (m == kNegInf) continue;  // fully masked row stays zero
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      y[j] = x[j] == kNegInf ? 0.0 : std::exp(x[j] - m);
      s += y[j];
    }
    for (std::size_t j = 0; j < c; ++j) y[j] /= s;
  }
  const auto ai = a.id;
  return graph_of(a).emit(std::move(out), {a}, [ai, r, c](Graph& gr, std::uint32_t self) {
    const Tensor& dout = gr.grad(self);
    const Tensor& y = gr.value(self);
    Tensor& ga = gr.grad(ai);
    for (std::size_t i = 0; i < r; ++i) {
      const double* yi = y.ptr() + i * c;
      const double* di = dout.ptr() + i * c;
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += yi[j] * di[j];
      double* gi = ga.ptr() + i * c;
      for (std::size_t j = 0; j < c; ++j) gi[j] += yi[j] * (di[j] - dot);
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  require_same_graph(x, gain);
  require_same_graph(x, bias);
  const Tensor& xv = x.value();
  const std::size_t r = xv.rows(), d = xv.cols();
  if (gain.value().size() != d || bias.value().size() != d) {
    throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" + shape_str(bias.shape()) +
                         " do not match last extent of " + shape_str(xv.shape()));
  }
  if (!(eps > 0.0)) throw ConfigError("layer_norm: eps must be positive");
  Tensor out(xv.shape());
  Tensor xhat(xv.shape());
  std::vector<double> inv_std(r);
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  for (std::size_t i = 0; i < r; ++i) {
    const double* xi = xv.ptr() + i * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += xi[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xi[j] - mean) * (xi[j] - mean);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[i] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xi[j] - mean) * is;
      xhat[i * d + j] = h;
      out[i * d + j] = h * gv[j] + bv[j];
    }
  }
  const auto xi = x.id, gi = gain.id, bi = bias.id;
  return graph_of(x).emit(
      std::move(out), {x, gain, bias},
      [xi, gi, bi, r, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph& gr, std::uint32_t self) {
        const Tensor& dout = gr.grad(self);
        if (gr.needs_grad(gi)) {
          Tensor& gg = gr.grad(gi);
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < d; ++j) gg[j] += dout[i * d + j] * xhat[i * d + j];
        }
        if (gr.needs_grad(bi)) {
          Tensor& gb = gr.grad(bi);
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < d; ++j) gb[j] += dout[i * d + j];
        }
        if (gr.needs_grad(xi)) {
          const Tensor& gv = gr.value(gi);
          Tensor& gx = gr.grad(xi);
          const double inv_d = 1.0 / static_cast<double>(d);
          for (std::size_t i = 0; i < r; ++i) {
            double mean_dh = 0.0, mean_dh_h = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = dout[i * d + j] * gv[j];
              mean_dh += dh;
              mean_dh_h += dh * xhat[i * d + j];
            }
            mean_dh *= inv_d;
            mean_dh_h *= inv_d;
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = dout[i * d + j] * gv[j];
              gx[i * d + j] += inv_std[i] * (dh - mean_dh - xhat[i * d + j] * mean_dh_h);
            }
          }
        }
      });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t c = parts.front().value().cols();
  std::size_t total = 0;
  for (const Var& p : parts) {
    require_same_graph(parts.front(), p);
    const Tensor& v = p.value();
    if (v.rank() > 2 || v.cols() != c) {
      throw DimensionError("concat_rows: column mismatch " + shape_str(parts.front().shape()) + " vs " +
                           shape_str(v.shape()));
    }
    total += v.rows();
  }
  Tensor out({total, c});
  std::vector<std::pair<std::uint32_t, std::size_t>> offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    std::copy(v.data().begin(), v.data().end(), out.ptr() + off * c);
    offsets.emplace_back(p.id, off);
    off += v.rows();
  }
  return graph_of(parts.front())
      .emit(std::move(out), parts, [offsets = std::move(offsets), c](Graph& gr, std::uint32_t self) {
        const Tensor& dout = gr.grad(self);
        for (const auto& [id, row0] : offsets) {
          if (!gr.needs_grad(id)) continue;
          Tensor& gp = gr.grad(id);
          const double* src = dout.ptr() + row0 * c;
          for (std::size_t k = 0; k < gp.size(); ++k) gp[k] += src[k];
        }
      });
}

Var slice_rows(Var a, std::size_t start, std::size_t count) {
  const Tensor& av = a.value();
  if (av.rank() != 2 || start + count > av.dim(0)) {
    throw DimensionError("slice_rows: rows [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") out of range for " + shape_str(av.shape()));
  }
  const std::size_t c = av.dim(1);
  Tensor out({count, c});
  std::copy(av.ptr() + start * c, av.ptr() + (start + count) * c, out.ptr());
  const auto ai = a.id;
  return graph_of(a).emit(std::move(out), {a}, [ai, start, c](Graph& gr, std::uint32_t self) {
    const Tensor& dout = gr.grad(self);
    double* dst = gr.grad(ai).ptr() + start * c;
    for (std::size_t k = 0; k < dout.size(); ++k) dst[k] += dout[k];
  });
}

Var mean_rows(Var a) {
  const Tensor& av = a.value();
  require_rank("mean_rows", av, 2);
  const std::size_t r = av.dim(0), c = av.dim(1);
  if (r == 0) throw DimensionError("mean_rows: empty input");
  Tensor out({1, c});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += av.at(i, j);
  const double inv = 1.0 / static_cast<double>(r);
  for (auto& x : out.data()) x *= inv;
  const auto ai = a.id;
  return graph_of(a).emit(std::move(out), {a}, [ai, r, c, inv](Graph& gr, std::uint32_t self) {
    const Tensor& dout = gr.grad(self);
    Tensor& ga = gr.grad(ai);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga.at(i, j) += dout[j] * inv;
  });
}

Var embedding(Var table, std::span<const int> ids) {
  const Tensor& tv = table.value();
  require_rank("embedding", tv, 2);
  const std::size_t vocab = tv.dim(0), d = tv.dim(1);
  Tensor out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw DimensionError("embedding: token id " + std::to_string(ids[i]) + " outside vocabulary of " +
                           std::to_string(vocab));
    }
    std::copy_n(tv.ptr() + static_cast<std::size_t>(ids[i]) * d, d, out.ptr() + i * d);
  }
  const auto ti = table.id;
  std::vector<int> idv(ids.begin(), ids.end());
  return graph_of(table).emit(std::move(out), {table}, [ti, d, idv = std::move(idv)](Graph& gr, std::uint32_t self) {
    const Tensor& dout = gr.grad(self);
    Tensor& gt = gr.grad(ti);
    for (std::size_t i = 0; i < idv.size(); ++i) {
      double* dst = gt.ptr() + static_cast<std::size_t>(idv[i]) * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += dout[i * d + j];
    }
  });
}

Var dropout(Var a, double p, Rng& rng) {
  if (p <= 0.0) return a;
  if (p >= 1.0) throw ConfigError("dropout probability must be < 1");
  const double keep = 1.0 / (1.0 - p);
  Tensor mask(a.shape());
  for (auto& m : mask.data()) m = rng.uniform() >= p ? keep : 0.0;
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  const auto ai = a.id;
  return graph_of(a).emit(std::move(out), {a}, [ai, mask = std::move(mask)](Graph& gr, std::uint32_t self) {
    const Tensor& dout = gr.grad(self);
    Tensor& ga = gr.grad(ai);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += dout[i] * mask[i];
  });
}

Var cross_entropy(Var logits, std::span<const int> targets, int ignore_index) {
  const Tensor& lv = logits.value();
  require_rank("cross_entropy", lv, 2);
  const std::size_t n = lv.dim(0), v = lv.dim(1);
  if (targets.size() != n) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                         shape_str(lv.shape()));
  }
  Tensor probs({n, v});
  std::size_t counted = 0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* x = lv.ptr() + i * v;
    double m = kNegInf;
    for (std::size_t j = 0; j < v; ++j) m = std::max(m, x[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < v; ++j) s += std::exp(x[j] - m);
    const double lse = m + std::log(s);
    for (std::size_t j = 0; j < v; ++j) probs[i * v + j] = std::exp(x[j] - lse);
    if (targets[i] == ignore_index) continue;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= v) {
      throw DimensionError("cross_entropy: target id " + std::to_string(targets[i]) + " outside vocabulary");
    }
    total += lse - x[targets[i]];
    ++counted;
  }
  if (counted == 0) throw DataError("cross_entropy: every target position is padding; loss undefined");
  const double inv = 1.0 / static_cast<double>(counted);
  const auto li = logits.id;
  std::vector<int> tv(targets.begin(), targets.end());
  return graph_of(logits).emit(
      Tensor({1}, std::vector<double>{total * inv}), {logits},
      [li, n, v, inv, ignore_index, tv = std::move(tv), probs = std::move(probs)](Graph& gr, std::uint32_t self) {
        const double d = gr.grad(self)[0] * inv;
        Tensor& gl = gr.grad(li);
        for (std::size_t i = 0; i < n; ++i) {
          if (tv[i] == ignore_index) continue;
          for (std::size_t j = 0; j < v; ++j) gl[i * v + j] += d * probs[i * v + j];
          gl[i * v + static_cast<std::size_t>(tv[i])] -= d;
        }
      });
}

Var lstm_cell(Var gates, Var c_prev) {
  require_same_graph(gates, c_prev);
  const Tensor& z = gates.value();
  const Tensor& cp = c_prev.value();
  const std::size_t d = cp.size();
  if (z.size() != 4 * d) {
    throw DimensionError("lstm_cell: gates " + shape_str(z.shape()) + " incompatible with cell " + shape_str(cp.shape()));
  }
  auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  // Saved activations: i, f, g, o, tanh(c).
  Tensor acts({5, d});
  Tensor out({2, d});
  for (std::size_t j = 0; j < d; ++j) {
    const double ig = sig(z[j]);
    const double fg = sig(z[d + j]);
    const double gg = std::tanh(z[2 * d + j]);
    const double og = sig(z[3 * d + j]);
    const double c = fg * cp[j] + ig * gg;
    const double tc = std::tanh(c);
    acts.at(0, j) = ig;
    acts.at(1, j) = fg;
    acts.at(2, j) = gg;
    acts.at(3, j) = og;
    acts.at(4, j) = tc;
    out.at(0, j) = og * tc;
    out.at(1, j) = c;
  }
  const auto zi = gates.id, ci = c_prev.id;
  return graph_of(gates).emit(std::move(out), {gates, c_prev},
                              [zi, ci, d, acts = std::move(acts)](Graph& gr, std::uint32_t self) {
                                const Tensor& dout = gr.grad(self);
                                const Tensor& cp = gr.value(ci);
                                const bool need_z = gr.needs_grad(zi);
                                const bool need_c = gr.needs_grad(ci);
                                for (std::size_t j = 0; j < d; ++j) {
                                  const double ig = acts.at(0, j), fg = acts.at(1, j), gg = acts.at(2, j);
                                  const double og = acts.at(3, j), tc = acts.at(4, j);
                                  const double dh = dout.at(0, j);
                                  const double dc = dout.at(1, j) + dh * og * (1.0 - tc * tc);
                                  if (need_z) {
                                    Tensor& gz = gr.grad(zi);
                                    gz[j] += dc * gg * ig * (1.0 - ig);
                                    gz[d + j] += dc * cp[j] * fg * (1.0 - fg);
                                    gz[2 * d + j] += dc * ig * (1.0 - gg * gg);
                                    gz[3 * d + j] += dh * tc * og * (1.0 - og);
                                  }
                                  if (need_c) gr.grad(ci)[j] += dc * fg;
                                }
                              });
}

Var attention_logits(Var q, Var k, std::size_t heads, double scale) {
  require_same_graph(q, k);
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  require_rank("attention_logits", qv, 2);
  require_rank("attention_logits", kv, 2);
  const std::size_t n = qv.dim(0), m = kv.dim(0), d = qv.dim(1);
  if (kv.dim(1) != d) {
    throw DimensionError("attention_logits: query " + shape_str(qv.shape()) + " and key " + shape_str(kv.shape()) +
                         " widths differ");
  }
  if (heads == 0 || d % heads != 0) {
    throw DimensionError("attention_logits: " + std::to_string(heads) + " heads do not divide width " +
                         std::to_string(d));
  }
  const std::size_t dk = d / heads;
  Tensor out({heads, n, m});
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < n; ++i) {
      const double* qi = qv.ptr() + i * d + h * dk;
      for (std::size_t j = 0; j < m; ++j) {
        const double* kj = kv.ptr() + j * d + h * dk;
        double s = 0.0;
        for (std::size_t t = 0; t < dk; ++t) s += qi[t] * kj[t];
        out.at(h, i, j) = s * scale;
      }
    }
  }
  const auto qi = q.id, ki = k.id;
  return graph_of(q).emit(std::move(out), {q, k}, [qi, ki, heads, n, m, d, dk, scale](Graph& gr, std::uint32_t self) {
    const Tensor& dout = gr.grad(self);
    const Tensor& qv = gr.value(qi);
    const Tensor& kv = gr.value(ki);
    const bool nq = gr.needs_grad(qi), nk = gr.needs_grad(ki);
    Tensor* gq = nq ? &gr.grad(qi) : nullptr;
    Tensor* gk = nk ? &gr.grad(ki) : nullptr;
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
          const double g = dout.at(h, i, j) * scale;
          if (g == 0.0) continue;
          const std::size_t qo = i * d + h * dk, ko = j * d + h * dk;
          for (std::size_t t = 0; t < dk; ++t) {
            if (gq) (*gq)[qo + t] += g * kv[ko + t];
            if (gk) (*gk)[ko + t] += g * qv[qo + t];
          }
        }
      }
    }
  });
}

Var attention_mask(Var logits, bool causal, std::size_t key_limit) {
  const Tensor& lv = logits.value();
  require_rank("attention_mask", lv, 3);
  const std::size_t heads = lv.dim(0), n = lv.dim(1), m = lv.dim(2);
  Tensor out = lv;
  auto masked = [causal, key_limit](std::size_t i, std::size_t j) { return (causal && j > i) || j >= key_limit; };
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j)
        if (masked(i, j)) out.at(h, i, j) = kNegInf;
  const auto li = logits.id;
  return graph_of(logits).emit(std::move(out), {logits}, [li, heads, n, m, masked](Graph& gr, std::uint32_t self) {
    const Tensor& dout = gr.grad(self);
    Tensor& gl = gr.grad(li);
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j)
          if (!masked(i, j)) gl.at(h, i, j) += dout.at(h, i, j);
  });
}

Var attend_values(Var probs, Var v) {
  require_same_graph(probs, v);
  const Tensor& pv = probs.value();
  const Tensor& vv = v.value();
  require_rank("attend_values", pv, 3);
  require_rank("attend_values", vv, 2);
  const std::size_t heads = pv.dim(0), n = pv.dim(1), m = pv.dim(2), d = vv.dim(1);
  if (vv.dim(0) != m || heads == 0 || d % heads != 0) {
    throw DimensionError("attend_values: probabilities " + shape_str(pv.shape()) + " incompatible with values " +
                         shape_str(vv.shape()));
  }
  const std::size_t dk = d / heads;
  Tensor out({n, d});
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < n; ++i) {
      double* oi = out.ptr() + i * d + h * dk;
      for (std::size_t j = 0; j < m; ++j) {
        const double p = pv.at(h, i, j);
        if (p == 0.0) continue;  // masked keys never touch the output
        const double* vj = vv.ptr() + j * d + h * dk;
        for (std::size_t t = 0; t < dk; ++t) oi[t] += p * vj[t];
      }
    }
  }
  const auto pi = probs.id, vi = v.id;
  return graph_of(probs).emit(std::move(out), {probs, v}, [pi, vi, heads, n, m, d, dk](Graph& gr, std::uint32_t self) {
    const Tensor& dout = gr.grad(self);
    const Tensor& pv = gr.value(pi);
    const Tensor& vv = gr.value(vi);
    const bool np = gr.needs_grad(pi), nv = gr.needs_grad(vi);
    Tensor* gp = np ? &gr.grad(pi) : nullptr;
    Tensor* gv = nv ? &gr.grad(vi) : nullptr;
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < n; ++i) {
        const double* di = dout.ptr() + i * d + h * dk;
        for (std::size_t j = 0; j < m; ++j) {
          const std::size_t vo = j * d + h * dk;
          if (gp) {
            double s = 0.0;
            for (std::size_t t = 0; t < dk; ++t) s += di[t] * vv[vo + t];
            gp->at(h, i, j) += s;
          }
          if (gv) {
            const double p = pv.at(h, i, j);
            if (p == 0.0) continue;
            for (std::size_t t = 0; t < dk; ++t) (*gv)[vo + t] += p * di[t];
          }
        }
      }
    }
  });
}

Var triangle_conv(Var maps, Var kernel, Var bias) {
  require_same_graph(maps, kernel);
  require_same_graph(maps, bias);
  const Tensor& a = maps.value();
  const Tensor& w = kernel.value();
  const Tensor& b = bias.value();
  require_rank("triangle_conv", a, 3);
  const std::size_t cin = a.dim(0), n = a.dim(1);
  if (a.dim(2) != n) throw DimensionError("triangle_conv: maps must be square, got " + shape_str(a.shape()));
  if (w.rank() != 4 || w.dim(1) != cin || w.dim(2) != 3 || w.dim(3) != 3) {
    throw DimensionError("triangle_conv: kernel " + shape_str(w.shape()) + " incompatible with maps " +
                         shape_str(a.shape()));
  }
  const std::size_t cout = w.dim(0);
  if (b.size() != cout) throw DimensionError("triangle_conv: bias " + shape_str(b.shape()) + " for " + std::to_string(cout) + " channels");

  auto widx = [cin](std::size_t o, std::size_t i, int dr, int dc) {
    return ((o * cin + i) * 3 + static_cast<std::size_t>(dr + 1)) * 3 + static_cast<std::size_t>(dc + 1);
  };
  const long ln = static_cast<long>(n);
  Tensor out({cout, n, n});
  // Output cell (r+1, c+1) holds the convolution centred on input cell (r, c).
  for (std::size_t o = 0; o < cout; ++o) {
    for (long r = 0; r + 1 < ln; ++r) {
      for (long c = 0; c + 1 < ln; ++c) {
        double s = b[o];
        for (std::size_t i = 0; i < cin; ++i) {
          for (int dr = -1; dr <= 1; ++dr) {
            const long rr = r + dr;
            if (rr < 0 || rr >= ln) continue;
            for (int dc = -1; dc <= 1; ++dc) {
              if (!triangle_tap_active(dr, dc)) continue;
              const long cc = c + dc;
              if (cc < 0 || cc >= ln) continue;
              s += w[widx(o, i, dr, dc)] * a.at(i, static_cast<std::size_t>(rr), static_cast<std::size_t>(cc));
            }
          }
        }
        out.at(o, static_cast<std::size_t>(r + 1), static_cast<std::size_t>(c + 1)) = s;
      }
    }
  }
  const auto ai = maps.id, wi = kernel.id, bi = bias.id;
  return graph_of(maps).emit(std::move(out), {maps, kernel, bias},
                             [ai, wi, bi, cin, cout, ln, widx](Graph& gr, std::uint32_t self) {
    const Tensor& dout = gr.grad(self);
    const Tensor& a = gr.value(ai);
    const Tensor& w = gr.value(wi);
    Tensor* ga = gr.needs_grad(ai) ? &gr.grad(ai) : nullptr;
    Tensor* gw = gr.needs_grad(wi) ? &gr.grad(wi) : nullptr;
    Tensor* gb = gr.needs_grad(bi) ? &gr.grad(bi) : nullptr;
    for (std::size_t o = 0; o < cout; ++o) {
      for (long r = 0; r + 1 < ln; ++r) {
        for (long c = 0; c + 1 < ln; ++c) {
          const double g = dout.at(o, static_cast<std::size_t>(r + 1), static_cast<std::size_t>(c + 1));
          if (gb) (*gb)[o] += g;
          for (std::size_t i = 0; i < cin; ++i) {
            for (int dr = -1; dr <= 1; ++dr) {
              const long rr = r + dr;
              if (rr < 0 || rr >= ln) continue;
              for (int dc = -1; dc <= 1; ++dc) {
                if (!triangle_tap_active(dr, dc)) continue;
                const long cc = c + dc;
                if (cc < 0 || cc >= ln) continue;
                const auto ur = static_cast<std::size_t>(rr), uc = static_cast<std::size_t>(cc);
                if (ga) ga->at(i, ur, uc) += g * w[widx(o, i, dr, dc)];
                if (gw) (*gw)[widx(o, i, dr, dc)] += g * a.at(i, ur, uc);
              }
            }
          }
        }
      }
    }
  });
}

}  // namespace hybridnet
