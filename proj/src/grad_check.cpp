#include "ctxasr/grad_check.hpp"

#include <cmath>

namespace ctxasr {

GradCheckReport grad_check(const std::vector<std::pair<std::string, Tensor>>& params,
                           const std::function<Tensor()>& loss_fn,
                           double eps) {
  for (auto& [name, p] : params) {
    if (!p.requires_grad()) fail("grad_check: parameter '" + name + "' does not require grad");
    const_cast<Tensor&>(p).zero_grad();
  }

  Tensor loss = loss_fn();
  if (loss.size() != 1) fail("grad_check: loss is not scalar");
  if (!std::isfinite(loss.item())) fail("grad_check: non-finite loss at unperturbed parameters");
  backward(loss);

  // Snapshot analytic gradients before the graph is dropped.
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto& [name, p] : params) {
    std::span<const double> g = p.grad();
    if (g.empty())
      analytic.emplace_back(static_cast<std::size_t>(p.size()), 0.0);
    else
      analytic.emplace_back(g.begin(), g.end());
  }

  GradCheckReport report;
  NoGradGuard no_grad;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const std::string& name = params[pi].first;
    Tensor p = params[pi].second;
    std::span<double> v = p.values_mut();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double orig = v[i];
      v[i] = orig + eps;
      const double up = loss_fn().item();
      v[i] = orig - eps;
      const double down = loss_fn().item();
      v[i] = orig;
      if (!std::isfinite(up) || !std::isfinite(down))
        fail("grad_check: non-finite loss while perturbing '" + name + "'[" + std::to_string(i) + "]");
      const double cd = (up - down) / (2.0 * eps);
      const double an = analytic[pi][i];
      // Floor at 1e-5: the central-difference oracle resolves |f|*ulp/(2*eps)
      // ~ 1e-10 absolute, so differences on gradients smaller than this are
      // quantization noise, while any systematic error still shows up.
      const double denom = std::max({std::fabs(an), std::fabs(cd), 1e-5});
      const double rel = std::fabs(an - cd) / denom;
      ++report.checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = name;
        report.worst_index = static_cast<std::int64_t>(i);
        report.worst_analytic = an;
        report.worst_numeric = cd;
      }
    }
  }
  return report;
}

}  // namespace ctxasr
