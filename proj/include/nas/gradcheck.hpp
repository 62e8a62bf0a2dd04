#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "nas/tensor.hpp"

namespace nas {

struct GradCheckReport {
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;
  std::size_t coords_checked = 0;
  std::size_t worst_leaf = 0;
  std::size_t worst_coord = 0;

  bool ok(double tol) const { return max_rel_err <= tol; }
};

// Central-difference verification of reverse-mode gradients.
//
// `build` must construct a scalar loss from the given leaves on the supplied
// graph; it is re-invoked many times with perturbed leaf values, so it must
// be a pure function of the leaf data.  The per-coordinate error is
// |analytic - numeric| / max(1, |analytic|): absolute for small gradients,
// relative for large ones.
inline GradCheckReport check_gradients(
    const std::function<Tensor(Graph&)>& build, const std::vector<Tensor>& leaves,
    double h = 1e-5, std::size_t max_coords_per_leaf = 64) {
  GradCheckReport report;

  std::vector<std::vector<double>> analytic(leaves.size());
  {
    Graph g;
    for (Tensor leaf : leaves) {  // handles share storage; copies suffice
      NAS_CHECK(leaf.requires_grad(), ContractError,
                "check_gradients: every leaf must require grad");
      leaf.zero_grad();
    }
    Tensor loss = build(g);
    NAS_CHECK(loss.numel() == 1, ContractError, "check_gradients: loss must be scalar");
    g.backward(loss);
    for (std::size_t li = 0; li < leaves.size(); ++li) {
      Tensor leaf = leaves[li];
      analytic[li] = leaf.has_grad() ? leaf.grad() : std::vector<double>(leaf.numel(), 0.0);
    }
  }

  auto eval = [&]() {
    Graph g;
    NoGradGuard guard(g);
    return build(g).value();
  };

  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Tensor leaf = leaves[li];
    const std::size_t n = leaf.numel();
    const std::size_t step = std::max<std::size_t>(1, n / std::max<std::size_t>(1, max_coords_per_leaf));
    for (std::size_t c = 0; c < n; c += step) {
      const double saved = leaf.data()[c];
      leaf.data()[c] = saved + h;
      const double fp = eval();
      leaf.data()[c] = saved - h;
      const double fm = eval();
      leaf.data()[c] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[li][c];
      const double abs_err = std::abs(a - numeric);
      const double rel_err = abs_err / std::max(1.0, std::abs(a));
      if (rel_err > report.max_rel_err) {
        report.max_rel_err = rel_err;
        report.worst_leaf = li;
        report.worst_coord = c;
      }
      report.max_abs_err = std::max(report.max_abs_err, abs_err);
      ++report.coords_checked;
    }
  }
  return report;
}

}  // namespace nas
