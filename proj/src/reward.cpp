#include "nas/reward.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "nas/common.hpp"
#include "nas/tensor.hpp"

namespace nas {

const CostCoeffs& LatencyModel::coeffs_for(const std::string& cost_key) const {
  const auto it = cost_table.find(cost_key);
  return it == cost_table.end() ? default_coeffs : it->second;
}

void LatencyModel::validate() const {
  NAS_CHECK(q <= 0.0, ConfigError, "latency exponent q must be <= 0, got " + std::to_string(q));
  NAS_CHECK(target > 0.0, ConfigError, "target latency must be positive");
  NAS_CHECK(default_coeffs.a >= 0.0 && default_coeffs.b >= 0.0, ConfigError,
            "default cost coefficients must be non-negative");
  for (const auto& [name, c] : cost_table)
    NAS_CHECK(c.a >= 0.0 && c.b >= 0.0, ConfigError,
              "cost coefficients for '" + name + "' must be non-negative");
}

double analytic_latency(const NetworkPlan& plan, const LatencyModel& model) {
  double total = 0.0;
  for (const PlanOp& op : plan.ops) {
    const CostCoeffs& c = model.coeffs_for(op.cost_key);
    total += c.a * static_cast<double>(op.macs) + c.b;
  }
  return total;
}

double wallclock_latency(const NetworkPlan& plan, SharedParams& shared,
                         std::size_t probe_batch) {
  NAS_CHECK(probe_batch >= 1, ContractError, "probe batch must hold at least one sample");
  std::array<double, 5> runs{};
  const Tensor probe = Tensor::zeros(
      {probe_batch, plan.input_shape[0], plan.input_shape[1], plan.input_shape[2]});
  for (double& r : runs) {
    Graph g;
    NoGradGuard guard(g);
    const auto t0 = std::chrono::steady_clock::now();
    (void)forward_plan(g, plan, shared, probe, false);
    const auto t1 = std::chrono::steady_clock::now();
    r = std::chrono::duration<double>(t1 - t0).count();
  }
  std::sort(runs.begin(), runs.end());
  // Median of five; floor away a zero-resolution clock reading so the
  // latency invariant (strictly positive) holds on every platform.
  return std::max(runs[2], 1e-12);
}

double measure_latency(const NetworkPlan& plan, const LatencyModel& model,
                       SharedParams* shared) {
  if (model.mode == LatencyMode::kAnalytic) return analytic_latency(plan, model);
  NAS_CHECK(shared != nullptr, ContractError,
            "wallclock latency needs the parameter store to run forward passes");
  return wallclock_latency(plan, *shared);
}

RewardRecord compute_reward(double accuracy, double latency, const LatencyModel& model) {
  NAS_CHECK(accuracy >= 0.0 && accuracy <= 1.0, ContractError,
            "accuracy must lie in [0, 1], got " + std::to_string(accuracy));
  NAS_CHECK(latency > 0.0, ContractError, "latency must be positive");
  const double z = accuracy * std::pow(latency / model.target, model.q);
  RewardRecord rec;
  rec.accuracy = accuracy;
  rec.latency = latency;
  rec.clamped = z > 1.0;
  rec.reward = std::asin(std::min(z, 1.0));
  return rec;
}

std::map<std::string, CostCoeffs> load_cost_table(const std::string& path) {
  std::ifstream in(path);
  NAS_CHECK(in.good(), DataError, "cannot open cost table '" + path + "'");
  std::map<std::string, CostCoeffs> table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream row(line);
    std::string name;
    if (!(row >> name)) continue;  // blank or comment-only line
    const std::string where = "cost table line " + std::to_string(line_no);
    CostCoeffs c;
    std::string extra;
    NAS_CHECK(static_cast<bool>(row >> c.a >> c.b) && !(row >> extra), ParseError,
              where + ": expected 'op_name a b'");
    NAS_CHECK(c.a >= 0.0 && c.b >= 0.0, ConfigError,
              where + ": coefficients must be non-negative");
    NAS_CHECK(table.emplace(name, c).second, ParseError,
              where + ": duplicate op '" + name + "'");
  }
  return table;
}

}  // namespace nas
