#include <catch2/catch_amalgamated.hpp>

#include "laneflow/pde_estimator.hpp"
#include "support/scenarios.hpp"

using namespace laneflow;
using namespace laneflow::pde;
using namespace laneflow::sim;

namespace {

PdeParams test_params() {
  PdeParams p;
  p.free_flow_speed = 13.89;
  return p;
}

}  // namespace

TEST_CASE("breakpoint detection") {
  PdeParams params = test_params();
  const std::size_t T = 160;

  SECTION("all-zero occupancy yields no breakpoints") {
    std::vector<double> occ(T, 0.0), speed(T, -1.0);
    std::vector<CycleRecord> cycles = {{0, 10, 55, 150, 0}};
    auto bp = detect_breakpoints(occ, speed, cycles, params);
    REQUIRE(bp.size() == 1);
    CHECK(!bp[0].a);
    CHECK(!bp[0].b);
  }

  SECTION("constructed series: occupancy 1 during [20,50] of red, recovery at 62") {
    std::vector<double> occ(T, 0.0), speed(T, -1.0);
    for (std::size_t s = 20; s <= 50; ++s) {
      occ[s] = 1.0;
      speed[s] = 0.0;
    }
    for (std::size_t s = 62; s < 80; ++s) {
      occ[s] = 0.3;
      speed[s] = 10.0;  // above half of free flow
    }
    std::vector<CycleRecord> cycles = {{0, 10, 55, 150, 0}};
    auto bp = detect_breakpoints(occ, speed, cycles, params);
    REQUIRE(bp[0].a.has_value());
    REQUIRE(bp[0].b.has_value());
    CHECK(*bp[0].a == 20);
    CHECK(*bp[0].b == 62);
  }

  SECTION("occupancy below threshold during red means fallback mode") {
    std::vector<double> occ(T, 0.0), speed(T, -1.0);
    for (std::size_t s = 20; s <= 50; ++s) {
      occ[s] = 0.5;  // queue never parks on the detector
      speed[s] = 0.0;
    }
    std::vector<CycleRecord> cycles = {{0, 10, 55, 150, 0}};
    auto bp = detect_breakpoints(occ, speed, cycles, params);
    CHECK(!bp[0].a);
  }

  SECTION("fast traffic over the loop is not a queue even at high occupancy") {
    std::vector<double> occ(T, 0.9), speed(T, 12.0);
    std::vector<CycleRecord> cycles = {{0, 10, 55, 150, 0}};
    auto bp = detect_breakpoints(occ, speed, cycles, params);
    CHECK(!bp[0].a);
  }
}

TEST_CASE("shockwave queue geometry") {
  PdeParams params = test_params();

  SECTION("queue tail exactly at the detector with zero additional growth") {
    // The growth characteristic reaches the detector exactly at green onset
    // and B sits exactly one wave-traversal later: the estimate is the
    // detector offset worth of vehicles.
    int R = 0, G = 55;
    int B = G + static_cast<int>(125.0 / params.backward_wave_speed);  // 80
    Breakpoints bp;
    bp.a = G;
    bp.b = B;
    auto est = shockwave_max_queue(bp, R, G, 146, 125.0, 750.0, params);
    REQUIRE(est.has_value());
    CHECK(est->max_queue_estimate == Catch::Approx(125.0 / params.jam_spacing));
    CHECK(est->estimate_time == G);
    CHECK(est->mode == EstimateMode::Shockwave);
  }

  SECTION("missing breakpoints mean no shockwave estimate") {
    Breakpoints none;
    CHECK(!shockwave_max_queue(none, 0, 30, 146, 125.0, 750.0, params).has_value());
    Breakpoints only_a;
    only_a.a = 20;
    CHECK(!shockwave_max_queue(only_a, 0, 30, 146, 125.0, 750.0, params).has_value());
  }

  SECTION("degenerate characteristics fall back") {
    // growth as fast as the discharge wave: no finite intersection
    Breakpoints bp;
    bp.a = 25;  // v1 = 5 m/s
    bp.b = 55;  // w = 5 m/s
    CHECK(!shockwave_max_queue(bp, 0, 30, 146, 125.0, 750.0, params).has_value());
  }

  SECTION("estimates clamp to lane capacity") {
    Breakpoints bp;
    bp.a = 40;  // v1 = 3.125 m/s, jam at green onset would span 94 m
    bp.b = 55;  // w = 5 m/s
    auto est = shockwave_max_queue(bp, 0, 30, 146, 125.0, 60.0, params);
    REQUIRE(est.has_value());
    CHECK(est->max_queue_estimate == Catch::Approx(60.0 / params.jam_spacing));
  }
}

TEST_CASE("deficit redistribution") {
  SECTION("stated example") {
    auto out = input_output_estimate({3, -2, 5});
    REQUIRE(out.size() == 3);
    CHECK(out[0] == Catch::Approx(2.0));
    CHECK(out[1] == 0.0);
    CHECK(out[2] == Catch::Approx(4.0));
  }
  SECTION("no negatives means no change") {
    auto out = input_output_estimate({4, 1, 2});
    CHECK(out[0] == 4.0);
    CHECK(out[1] == 1.0);
    CHECK(out[2] == 2.0);
  }
  SECTION("all negative clamps to zero") {
    auto out = input_output_estimate({-1, -1, -1});
    for (double v : out) CHECK(v == 0.0);
  }
  SECTION("deficit larger than one lane's surplus cascades") {
    auto out = input_output_estimate({1, -5, 6});
    CHECK(out[0] == 0.0);
    CHECK(out[1] == 0.0);
    CHECK(out[2] == Catch::Approx(2.0));
  }
  SECTION("road totals are conserved whenever the raw sum is nonnegative") {
    Rng rng(77);
    for (int trial = 0; trial < 500; ++trial) {
      std::size_t n = 1 + rng.uniform_index(5);
      std::vector<double> raw(n);
      double sum = 0.0;
      for (double& v : raw) {
        v = std::floor(rng.uniform(-6.0, 10.0));
        sum += v;
      }
      auto out = input_output_estimate(raw);
      double out_sum = 0.0;
      for (double v : out) {
        REQUIRE(v >= 0.0);
        out_sum += v;
      }
      REQUIRE(out_sum == Catch::Approx(std::max(0.0, sum)).margin(1e-9));
    }
  }
}

TEST_CASE("empty network gives all-zero input-output estimates") {
  auto net = graph::build_grid(1, 1, 1, 750.0, true);
  auto plans = default_signal_plans(net);
  auto log = run(net, {}, plans, 5, 400);
  auto estimates = liu_estimate(log, PdeParams::defaults_for(net));
  CHECK(!estimates.empty());
  for (const auto& est : estimates) {
    CHECK(est.max_queue_estimate == 0.0);
    CHECK(est.mode == EstimateMode::InputOutput);
  }
}

TEST_CASE("single-lane oracle: shockwave accuracy and input-output exactness") {
  auto sc = scenarios::build_liu_single_lane_scenario();
  auto params = PdeParams::defaults_for(sc.net);
  auto outcome = scenarios::evaluate_liu_scenario(sc, params);

  INFO("shockwave cycles: " << outcome.shockwave_cycles
                            << ", within 2: " << outcome.shockwave_within_two
                            << ", worst: " << outcome.shockwave_worst_error);
  INFO("io cycles: " << outcome.io_cycles << ", exact: " << outcome.io_exact);
  REQUIRE(outcome.shockwave_cycles >= 5);
  REQUIRE(outcome.io_cycles >= 5);
  CHECK(outcome.shockwave_within_two * 10 >= outcome.shockwave_cycles * 9);
  CHECK(outcome.io_exact == outcome.io_cycles);
}

TEST_CASE("estimates stay within lane capacity and shockwave mode implies a red breakpoint") {
  auto sc = scenarios::build_liu_single_lane_scenario();
  auto params = PdeParams::defaults_for(sc.net);
  SimOptions opt;
  opt.lane_changes = false;
  auto log = run(sc.net, sc.trips, sc.signals, 9, sc.duration, opt);
  auto estimates = liu_estimate(log, params);
  for (const auto& est : estimates) {
    auto lane = static_cast<std::size_t>(est.lane);
    double capacity = log.network.lanes[lane].length / params.jam_spacing;
    REQUIRE(est.max_queue_estimate >= 0.0);
    REQUIRE(est.max_queue_estimate <= capacity);
    const auto& cyc = log.lanes[lane].cycles[static_cast<std::size_t>(est.cycle_id)];
    REQUIRE(est.estimate_time >= cyc.start_second);
    REQUIRE(est.estimate_time < cyc.end_second);
    if (est.mode == EstimateMode::Shockwave) {
      auto bp = detect_breakpoints(log.lanes[lane].advance_occupancy,
                                   log.lanes[lane].advance_speed, log.lanes[lane].cycles, params);
      REQUIRE(bp[static_cast<std::size_t>(est.cycle_id)].a.has_value());
      REQUIRE(*bp[static_cast<std::size_t>(est.cycle_id)].a < cyc.green_onset);
    }
  }
}
