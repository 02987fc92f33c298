#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "hybridnet/graph.hpp"
#include "hybridnet/param_store.hpp"

namespace hybridnet {

/// Builds a scalar loss on the given graph from the parameters bound to it.
/// Must be a deterministic function of the parameter values.
using LossFn = std::function<Var(Graph&)>;

struct GradCheckOptions {
  double eps = 1e-5;
  double tol = 1e-6;
  /// Denominator floor of the relative error, so entries whose true gradient
  /// is ~0 are judged on absolute error instead.
  double floor = 1e-8;
  /// When nonzero, at most this many entries per tensor are probed (evenly
  /// strided). Zero probes every entry.
  std::size_t max_entries_per_param = 0;
};

struct ParamGradReport {
  std::string name;
  std::size_t entries_checked = 0;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
};

struct GradCheckReport {
  std::vector<ParamGradReport> params;
  double max_rel_err = 0.0;
  std::size_t entries_checked = 0;
  bool passed = false;
};

/// Relative error |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor);

/// Compares the analytic gradient of `loss_fn` against central differences
/// (f(θ+ε) − f(θ−ε)) / 2ε for every parameter entry of `params`. The store is
/// perturbed in place and restored. Throws DeterminismError when two
/// evaluations at the same point disagree.
GradCheckReport grad_check(const LossFn& loss_fn, ParamStore& params, const GradCheckOptions& options = {});

}  // namespace hybridnet
