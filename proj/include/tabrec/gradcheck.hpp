#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tabrec/graph.hpp"
#include "tabrec/rng.hpp"

namespace tabrec {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst;  // coordinate where the worst error occurred
  int checked = 0;
  bool passed(double tol) const { return max_rel_err < tol; }
};

// Central differences against a caller-supplied analytic gradient.
// h = h_scale * max(1, |theta_i|); relative error uses a floor of 1e-6 in
// the denominator so near-zero gradients are compared absolutely. The
// default step matches the model-level oracle; per-op checks use a finer
// step because their tolerance is tighter than the truncation error of
// h = 1e-4 on curved objectives.
GradCheckResult finite_diff_check(
    const std::function<double(const std::vector<double>&)>& f,
    const std::vector<double>& theta, const std::vector<double>& analytic,
    int max_coords, Rng& rng, const std::string& label,
    double h_scale = 1e-4);

// Builds a scalar objective from a set of input arrays; every input is
// treated as differentiable.
using BuildFn = std::function<Tensor<double>(
    Graph<double>&, const std::vector<Tensor<double>>&)>;

GradCheckResult check_build(const BuildFn& build,
                            std::vector<Array<double>> inputs, int max_coords,
                            Rng& rng, const std::string& label,
                            double h_scale = 1e-5);

// Registry of differentiable-op checks; each op is exercised on n_shapes
// random shapes and the worst result is returned.
std::vector<std::string> gradcheck_op_names();
GradCheckResult gradcheck_op(const std::string& name, uint64_t seed,
                             int n_shapes);

}  // namespace tabrec
