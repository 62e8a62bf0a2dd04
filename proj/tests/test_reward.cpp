#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>

#include "doctest.h"
#include "nas/arch.hpp"
#include "nas/common.hpp"
#include "nas/reward.hpp"
#include "nas/rng.hpp"

using namespace nas;

namespace {

constexpr double kPi = 3.14159265358979323846;

SupernetConfig two_node_config() {
  SupernetConfig cfg;
  cfg.num_nodes = 2;
  cfg.input_size = 8;
  cfg.stem_channels = 4;
  cfg.num_classes = 10;
  return cfg;
}

NetworkPlan plan_of(const std::string& arch, const SupernetConfig& cfg, std::uint64_t seed) {
  SharedParams shared(cfg, seed);
  return compile(ArchEncoding::decode(arch), shared, {cfg.in_channels, cfg.input_size,
                                                      cfg.input_size}, cfg.num_classes);
}

std::string write_temp(const std::string& name, const std::string& body) {
  const std::string path = "./" + name;
  std::ofstream out(path);
  out << body;
  return path;
}

}  // namespace

TEST_CASE("identical architectures have identical analytic latency") {
  const SupernetConfig cfg = two_node_config();
  const LatencyModel model;
  // Two independently initialized stores: the cost depends only on structure.
  const double a = analytic_latency(plan_of("1|3:0", cfg, 7), model);
  const double b = analytic_latency(plan_of("1|3:0", cfg, 99), model);
  CHECK(a == b);
  CHECK(a > 0.0);
}

TEST_CASE("upgrading a separable conv from 3x3 to 5x5 never reduces cost or size") {
  const LatencyModel model;
  const SupernetConfig small = two_node_config();
  const NetworkPlan narrow = plan_of("0|2", small, 5);
  const NetworkPlan wide = plan_of("1|2", small, 5);
  CHECK(analytic_latency(wide, model) > analytic_latency(narrow, model));
  CHECK(wide.total_params > narrow.total_params);

  // Same property on the full-size default space, swapping an interior node.
  const SupernetConfig full;
  const NetworkPlan base = plan_of("0|1:0|3:0,1|2|0:1,3", full, 5);
  const NetworkPlan upgraded = plan_of("0|1:0|3:0,1|2|1:1,3", full, 5);
  CHECK(analytic_latency(upgraded, model) > analytic_latency(base, model));
  CHECK(upgraded.total_params > base.total_params);
}

TEST_CASE("analytic latency of a two-node plan equals the hand-summed cost") {
  // Arch "0|2" on 8x8 input, 4 stem channels, 10 classes.  The plan, op by
  // op, with macs counted by hand from the published formulas:
  //   stem conv 3x3      4*3*9*64   = 6912     stem bn    2*4*64 = 512
  //   node0 pre 1x1      4*4*64     = 1024     dw 3x3     4*9*64 = 2304
  //   node0 pw 1x1       4*4*64     = 1024     bn          512   relu 256
  //   reduce0 path1 pool 4*1*16     = 64       path1 conv 4*4*16 = 256
  //   reduce0 shift      0                     path2 conv        = 256
  //   reduce0 concat     0
  //   node1 avgpool 3x3  8*9*16     = 1152     pw 1x1     8*8*16 = 1024
  //   node1 bn           2*8*16     = 256
  //   merge 1x1          8*8*16     = 1024     dropblock 0
  //   gap                8*16       = 128      fc      8*10+10   = 90
  const NetworkPlan plan = plan_of("0|2", two_node_config(), 11);
  REQUIRE(plan.ops.size() == 19);
  CHECK(plan.total_macs == 16794);

  LatencyModel unit;  // a = 1, b = 0 for every op
  CHECK(analytic_latency(plan, unit) == 16794.0);

  LatencyModel affine;
  affine.default_coeffs = CostCoeffs{0.5, 2.0};
  CHECK(analytic_latency(plan, affine) == 0.5 * 16794.0 + 19 * 2.0);

  // Only the seven full convolutions (stem, node0 pre/pw, two reduction
  // paths, node1 pw, merge): 6912+1024+1024+256+256+1024+1024 = 11520.
  LatencyModel conv_only;
  conv_only.default_coeffs = CostCoeffs{0.0, 0.0};
  conv_only.cost_table["conv"] = CostCoeffs{1.0, 0.0};
  CHECK(analytic_latency(plan, conv_only) == 11520.0);
}

TEST_CASE("reward hits the exact values at the boundary points") {
  LatencyModel model;
  model.target = 3.0;

  RewardRecord perfect = compute_reward(1.0, 3.0, model);
  CHECK(std::abs(perfect.reward - kPi / 2) < 1e-12);
  CHECK_FALSE(perfect.clamped);

  RewardRecord half = compute_reward(0.5, 3.0, model);
  CHECK(std::abs(half.reward - kPi / 6) < 1e-12);

  for (double q : {0.0, -0.07, -0.2})
    for (double latency : {1.5, 3.0, 22.5}) {
      model.q = q;
      RewardRecord zero = compute_reward(0.0, latency, model);
      CHECK(zero.reward == 0.0);
      CHECK_FALSE(zero.clamped);
    }
}

TEST_CASE("frozen value at ninety percent accuracy and double the target") {
  LatencyModel model;
  model.target = 2.5;
  model.q = -0.07;
  const RewardRecord rec = compute_reward(0.9, 5.0, model);
  // z = 0.9 * 2^(-0.07) = 0.857374198239543650..., arcsin(z) below.
  CHECK(std::abs(rec.reward - 1.0301461061542853831) < 1e-12);
  CHECK_FALSE(rec.clamped);
  CHECK(rec.accuracy == 0.9);
  CHECK(rec.latency == 5.0);
}

TEST_CASE("the clamp flag fires exactly when the argument exceeds one") {
  LatencyModel model;  // q = -0.07
  model.target = 4.0;

  // Faster than target with q < 0 pushes the argument above 1.
  RewardRecord fast = compute_reward(1.0, 2.0, model);
  CHECK(fast.clamped);
  CHECK(fast.reward == std::asin(1.0));

  // Exactly on target: argument is exactly the accuracy, never clamped.
  CHECK_FALSE(compute_reward(1.0, 4.0, model).clamped);
  CHECK_FALSE(compute_reward(0.999999, 4.0, model).clamped);

  // q = 0 ignores latency entirely, so clamping is impossible.
  model.q = 0.0;
  CHECK_FALSE(compute_reward(1.0, 0.001, model).clamped);
  CHECK(compute_reward(0.25, 0.001, model).reward == std::asin(0.25));
}

TEST_CASE("reward is monotone in accuracy and anti-monotone in latency") {
  Rng rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    LatencyModel model;
    model.target = 1.7;
    model.q = -0.2 * rng.uniform01();  // q in [-0.2, 0]
    const double acc = rng.uniform01();
    const double lat = 0.1 + 3.9 * rng.uniform01();

    const double base = compute_reward(acc, lat, model).reward;
    const double more_acc = acc + (1.0 - acc) * rng.uniform01();
    CHECK(compute_reward(more_acc, lat, model).reward >= base);
    const double more_lat = lat + 3.0 * rng.uniform01();
    CHECK(compute_reward(acc, more_lat, model).reward <= base);
  }
}

TEST_CASE("the score amplifies small gains near perfect accuracy") {
  // d(arcsin z)/dz = 1/sqrt(1-z^2) > 1 for z in (0.9, 1): a fixed accuracy
  // improvement moves the score more when accuracy is already high.
  LatencyModel model;
  model.target = 1.0;
  const double h = 1e-5;
  for (double z = 0.905; z < 0.996; z += 0.01) {
    const double up = compute_reward(z + h, 1.0, model).reward;
    const double down = compute_reward(z - h, 1.0, model).reward;
    CHECK((up - down) / (2 * h) > 1.0);
  }
}

TEST_CASE("reward stays within its bounds under fuzzing") {
  Rng rng(77);
  for (int trial = 0; trial < 2000; ++trial) {
    LatencyModel model;
    model.target = 0.05 + 5.0 * rng.uniform01();
    model.q = -0.5 * rng.uniform01();
    const double acc = rng.uniform01();
    const double lat = 0.01 + 6.0 * rng.uniform01();
    const RewardRecord rec = compute_reward(acc, lat, model);
    CHECK(rec.reward >= 0.0);
    CHECK(rec.reward <= kPi / 2 + 1e-15);
    if (rec.clamped) CHECK(rec.reward == std::asin(1.0));
  }
}

TEST_CASE("invalid accuracy or latency violates the contract") {
  const LatencyModel model;
  CHECK_THROWS_AS(compute_reward(-0.1, 1.0, model), ContractError);
  CHECK_THROWS_AS(compute_reward(1.1, 1.0, model), ContractError);
  CHECK_THROWS_AS(compute_reward(0.5, 0.0, model), ContractError);
  CHECK_THROWS_AS(compute_reward(0.5, -2.0, model), ContractError);
}

TEST_CASE("model validation rejects bad exponents, targets, and coefficients") {
  LatencyModel model;
  model.validate();  // defaults are fine

  LatencyModel positive_q = model;
  positive_q.q = 0.1;
  CHECK_THROWS_AS(positive_q.validate(), ConfigError);

  LatencyModel zero_target = model;
  zero_target.target = 0.0;
  CHECK_THROWS_AS(zero_target.validate(), ConfigError);

  LatencyModel bad_default = model;
  bad_default.default_coeffs.a = -1.0;
  CHECK_THROWS_AS(bad_default.validate(), ConfigError);

  LatencyModel bad_row = model;
  bad_row.cost_table["conv"] = CostCoeffs{1.0, -0.5};
  CHECK_THROWS_AS(bad_row.validate(), ConfigError);
}

TEST_CASE("cost tables load from their text format") {
  const std::string path = write_temp("cost_table_ok.txt",
                                      "# per-op coefficients\n"
                                      "conv 2.5 1.0\n"
                                      "\n"
                                      "depthwise 1.25 0.5   # trailing comment\n"
                                      "fc 0 3\n");
  const auto table = load_cost_table(path);
  REQUIRE(table.size() == 3);
  CHECK(table.at("conv").a == 2.5);
  CHECK(table.at("conv").b == 1.0);
  CHECK(table.at("depthwise").a == 1.25);
  CHECK(table.at("fc").b == 3.0);
  std::remove(path.c_str());

  LatencyModel model;
  model.cost_table = table;
  CHECK(model.coeffs_for("conv").a == 2.5);
  // Unknown ops fall back to the default coefficients.
  CHECK(model.coeffs_for("gap").a == model.default_coeffs.a);
}

TEST_CASE("malformed cost tables are rejected with the right error") {
  CHECK_THROWS_AS(load_cost_table("./no_such_cost_table.txt"), DataError);

  const std::string missing = write_temp("cost_missing.txt", "conv 1.0\n");
  CHECK_THROWS_AS(load_cost_table(missing), ParseError);
  std::remove(missing.c_str());

  const std::string extra = write_temp("cost_extra.txt", "conv 1.0 2.0 3.0\n");
  CHECK_THROWS_AS(load_cost_table(extra), ParseError);
  std::remove(extra.c_str());

  const std::string negative = write_temp("cost_negative.txt", "conv -1.0 0.0\n");
  CHECK_THROWS_AS(load_cost_table(negative), ConfigError);
  std::remove(negative.c_str());

  const std::string duplicate = write_temp("cost_duplicate.txt", "conv 1 0\nconv 2 0\n");
  CHECK_THROWS_AS(load_cost_table(duplicate), ParseError);
  std::remove(duplicate.c_str());
}

TEST_CASE("wallclock mode times real forwards and needs the store") {
  const SupernetConfig cfg = two_node_config();
  SharedParams shared(cfg, 3);
  const NetworkPlan plan = compile(ArchEncoding::decode("0|2"), shared,
                                   {cfg.in_channels, cfg.input_size, cfg.input_size},
                                   cfg.num_classes);
  LatencyModel model;
  model.mode = LatencyMode::kWallclock;
  CHECK_THROWS_AS(measure_latency(plan, model, nullptr), ContractError);
  CHECK(measure_latency(plan, model, &shared) > 0.0);
  CHECK(wallclock_latency(plan, shared, 2) > 0.0);

  // Analytic dispatch never touches the store.
  model.mode = LatencyMode::kAnalytic;
  CHECK(measure_latency(plan, model, nullptr) == 16794.0);
}
