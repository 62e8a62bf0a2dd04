#pragma once

#include <cstddef>
#include <map>
#include <string>

#include "nas/arch.hpp"

namespace nas {

enum class LatencyMode { kAnalytic, kWallclock };

// Per-layer cost model: cost = a * (multiply-accumulate count) + b.
struct CostCoeffs {
  double a = 1.0;
  double b = 0.0;
};

// Latency model plus the parameters of the controller's score
//   reward = arcsin(min(1, accuracy * (latency / target)^q)).
// Analytic latency lives in abstract cost units (MACs by default); the target
// must be expressed in the same units.
struct LatencyModel {
  LatencyMode mode = LatencyMode::kAnalytic;
  std::map<std::string, CostCoeffs> cost_table;  // keyed by PlanOp::cost_key
  CostCoeffs default_coeffs;                     // applied when a key is absent
  double target = 1.0;                           // same units as the latency
  double q = -0.07;                              // latency exponent, <= 0

  const CostCoeffs& coeffs_for(const std::string& cost_key) const;
  void validate() const;
};

struct RewardRecord {
  double accuracy = 0.0;
  double latency = 0.0;
  double reward = 0.0;
  bool clamped = false;  // true iff the pre-arcsin argument exceeded 1
};

// Deterministic cost-model latency: sum over plan layers of a * macs + b.
double analytic_latency(const NetworkPlan& plan, const LatencyModel& model);

// Median of five timed eval-mode forward passes on a fixed zero probe batch.
// Machine-dependent by nature: use only for profiling studies, never in
// reproducible runs.
double wallclock_latency(const NetworkPlan& plan, SharedParams& shared,
                         std::size_t probe_batch = 1);

// Dispatches on model.mode; wallclock mode requires the parameter store.
double measure_latency(const NetworkPlan& plan, const LatencyModel& model,
                       SharedParams* shared = nullptr);

// accuracy must lie in [0, 1] and latency must be positive.  The argument of
// arcsin is clamped to 1 (and the event flagged) so the controller always
// receives a finite score in [0, pi/2].
RewardRecord compute_reward(double accuracy, double latency, const LatencyModel& model);

// Text rows "op_name a b"; '#' starts a comment, blank lines are skipped.
std::map<std::string, CostCoeffs> load_cost_table(const std::string& path);

}  // namespace nas
