#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "maeface/ndgrad/tape.hpp"

namespace maeface {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;     // flat coordinate (over all checked tensors)
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  bool passed = true;
};

// |analytic - numeric| / max(|analytic|, |numeric|, floor). The floor keeps
// vanishing gradients from turning roundoff into a relative blow-up.
double relative_error(double analytic, double numeric, double floor = 1e-5);

using ScalarFn = std::function<Var<double>(Var<double>)>;

// Central differences on every coordinate of x.
GradCheckReport grad_check(const ScalarFn& f, const Tensor<double>& x, double h = 1e-5, double tol = 1e-4);

// Several leaves; `coords[i]` lists the coordinates of leaf i to probe (all
// coordinates when empty).
using MultiFn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;
GradCheckReport grad_check(const MultiFn& f, const std::vector<Tensor<double>>& leaves,
                           const std::vector<std::vector<std::size_t>>& coords, double h = 1e-5, double tol = 1e-4);

}  // namespace maeface
