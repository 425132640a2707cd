#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "ctxasr/tensor.hpp"

namespace ctxasr {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;     // parameter name of the worst element
  std::int64_t worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::int64_t checked = 0;    // total elements compared
  bool ok(double tol) const { return max_rel_err < tol; }
};

// Compares the analytic gradient of a scalar loss against central finite
// differences, parameter element by parameter element.
//
// `loss_fn` must rebuild the graph on every call (fresh forward pass) and be
// deterministic given the current parameter values. `params` are the leaves
// to differentiate with respect to; their values are perturbed in place and
// restored. Relative error per element is
//   |analytic - cd| / max(|analytic|, |cd|, 1e-5).
// Throws if any loss evaluation is non-finite, naming the parameter being
// perturbed at the time.
GradCheckReport grad_check(const std::vector<std::pair<std::string, Tensor>>& params,
                           const std::function<Tensor()>& loss_fn,
                           double eps = 1e-5);

}  // namespace ctxasr
