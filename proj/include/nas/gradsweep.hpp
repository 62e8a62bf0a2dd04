#pragma once

#include <string>
#include <vector>

namespace nas {

// One entry of the finite-difference sweep: an op or loss checked against
// central differences over several independent random trials, keeping the
// worst relative error seen.
struct GradSweepItem {
  std::string name;
  double tolerance = 1e-5;
  double max_rel_err = 0.0;
  std::size_t trials = 0;

  bool ok() const { return max_rel_err <= tolerance; }
};

// Sweeps the full differentiable surface: every graph op that training
// exercises plus the four classification losses (the losses run with their
// default margins active and use the looser 1e-4 tolerance).  `seeds`
// independent trials per item.
std::vector<GradSweepItem> run_gradient_sweep(std::size_t seeds = 20);

}  // namespace nas
