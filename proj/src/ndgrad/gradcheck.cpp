#include "maeface/ndgrad/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace maeface {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport grad_check(const ScalarFn& f, const Tensor<double>& x, double h, double tol) {
  MultiFn wrapped = [&f](Tape<double>&, const std::vector<Var<double>>& leaves) { return f(leaves[0]); };
  return grad_check(wrapped, {x}, {{}}, h, tol);
}

GradCheckReport grad_check(const MultiFn& f, const std::vector<Tensor<double>>& leaves,
                           const std::vector<std::vector<std::size_t>>& coords, double h, double tol) {
  std::vector<std::vector<double>> analytic;
  {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& t : leaves) vars.push_back(tape.leaf(t, true));
    Var<double> loss = f(tape, vars);
    tape.backward(loss);
    for (const auto& v : vars) {
      std::vector<double> g = tape.grad(v);
      if (g.empty()) g.assign(v.value().numel(), 0.0);
      analytic.push_back(std::move(g));
    }
  }

  auto evaluate = [&f](const std::vector<Tensor<double>>& inputs) {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& t : inputs) vars.push_back(tape.leaf(t, false));
    return f(tape, vars).value().item();
  };

  GradCheckReport report;
  std::vector<Tensor<double>> probe = leaves;
  std::size_t offset = 0;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    std::vector<std::size_t> idx;
    if (li < coords.size() && !coords[li].empty()) {
      idx = coords[li];
    } else {
      idx.resize(leaves[li].numel());
      std::iota(idx.begin(), idx.end(), std::size_t{0});
    }
    for (std::size_t i : idx) {
      const double orig = probe[li][i];
      probe[li][i] = orig + h;
      const double up = evaluate(probe);
      probe[li][i] = orig - h;
      const double down = evaluate(probe);
      probe[li][i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double err = relative_error(analytic[li][i], numeric);
      ++report.checked;
      if (err > report.max_rel_error || !std::isfinite(err)) {
        report.max_rel_error = std::isfinite(err) ? err : INFINITY;
        report.worst_index = offset + i;
        report.worst_analytic = analytic[li][i];
        report.worst_numeric = numeric;
      }
    }
    offset += leaves[li].numel();
  }
  report.passed = report.max_rel_error <= tol;
  return report;
}

}  // namespace maeface
