#include "hybridnet/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "hybridnet/error.hpp"

namespace hybridnet {

namespace {

double evaluate(const LossFn& loss_fn, const ParamStore& params) {
  Graph g(params, nullptr, /*grad_enabled=*/false);
  return loss_fn(g).value()[0];
}

}  // namespace

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport grad_check(const LossFn& loss_fn, ParamStore& params, const GradCheckOptions& options) {
  GradBuffer analytic(params);
  double base = 0.0;
  {
    Graph g(params, &analytic, /*grad_enabled=*/true);
    Var loss = loss_fn(g);
    base = loss.value()[0];
    g.backward(loss);
  }
  const double again = evaluate(loss_fn, params);
  if (std::memcmp(&base, &again, sizeof(double)) != 0) {
    throw DeterminismError("loss function is not deterministic: " + std::to_string(base) + " vs " +
                           std::to_string(again));
  }

  GradCheckReport report;
  for (std::size_t p = 0; p < params.size(); ++p) {
    ParamGradReport pr;
    pr.name = params.name(p);
    Tensor& value = params.value(p);
    const std::size_t n = value.size();
    std::size_t stride = 1;
    if (options.max_entries_per_param && n > options.max_entries_per_param) {
      stride = (n + options.max_entries_per_param - 1) / options.max_entries_per_param;
    }
    for (std::size_t k = 0; k < n; k += stride) {
      const double saved = value[k];
      value[k] = saved + options.eps;
      const double up = evaluate(loss_fn, params);
      value[k] = saved - options.eps;
      const double down = evaluate(loss_fn, params);
      value[k] = saved;
      const double numeric = (up - down) / (2.0 * options.eps);
      const double a = analytic[p][k];
      pr.max_rel_err = std::max(pr.max_rel_err, relative_error(a, numeric, options.floor));
      pr.max_abs_err = std::max(pr.max_abs_err, std::abs(a - numeric));
      ++pr.entries_checked;
    }
    report.max_rel_err = std::max(report.max_rel_err, pr.max_rel_err);
    report.entries_checked += pr.entries_checked;
    report.params.push_back(std::move(pr));
  }
  report.passed = report.max_rel_err < options.tol;
  return report;
}

}  // namespace hybridnet
