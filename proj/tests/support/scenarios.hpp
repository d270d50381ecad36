#pragma once

// Shared test scenarios: deterministic setups reused by unit tests and the
// acceptance suite.

#include <vector>

#include "laneflow/microsim.hpp"
#include "laneflow/pde_estimator.hpp"

namespace laneflow::scenarios {

/// Two-phase plan with custom green splits (north-south first).
inline std::vector<sim::SignalController> custom_two_phase(const graph::RoadNetwork& net,
                                                           int ns_green, int ew_green,
                                                           int clearance) {
  std::vector<sim::SignalController> out;
  for (int x = 0; x < net.intersection_count; ++x) {
    std::vector<int> ns, ew;
    for (const auto& road : net.roads) {
      if (road.to_intersection != x) continue;
      auto& bucket = graph::is_north_south(road.heading) ? ns : ew;
      for (int lane : road.lanes) bucket.push_back(lane);
    }
    if (ns.empty() && ew.empty()) continue;
    std::sort(ns.begin(), ns.end());
    std::sort(ew.begin(), ew.end());
    sim::SignalController c;
    c.intersection = x;
    c.cycle_length = ns_green + ew_green + 2 * clearance;
    c.phases = {{ns_green, ns}, {clearance, {}}, {ew_green, ew}, {clearance, {}}};
    c.validate();
    out.push_back(std::move(c));
  }
  return out;
}

/// Single-lane oracle scenario for the shockwave estimator: one intersection,
/// one lane per road (lane changes impossible), a long green for the
/// north-south stream, and a demand profile with a saturated first half
/// (queues past the advance detector) and an unsaturated second half.
struct LiuScenario {
  graph::RoadNetwork net;
  std::vector<sim::Trip> trips;
  std::vector<sim::SignalController> signals;
  int duration = 3600;
  int focus_lane = -1;  // the saturated approach
};

inline LiuScenario build_liu_single_lane_scenario() {
  LiuScenario sc;
  sc.net = graph::build_grid(1, 1, 1, 750.0, true);
  sc.signals = custom_two_phase(sc.net, 80, 60, 3);

  int entry = -1, exit = -1;
  for (const auto& road : sc.net.roads) {
    if (road.entry && road.heading == graph::Heading::South) entry = road.id;
    if (road.exit && road.heading == graph::Heading::South) exit = road.id;
  }
  sc.focus_lane = sc.net.roads[static_cast<std::size_t>(entry)].lanes[0];

  // Saturated regime: one vehicle every 3.6 s (about 18 arrivals per 66 s
  // red, queue tail beyond the 125 m detector). The switch to one every 12 s
  // falls exactly on a red onset so no cycle straddles both regimes.
  const double heavy_end = 80.0 + 12.0 * 146.0;
  for (double d = 0.0; d < heavy_end; d += 3.6) sc.trips.push_back({d, entry, exit, 1.0});
  for (double d = heavy_end; d < 3500.0; d += 12.0) sc.trips.push_back({d, entry, exit, 1.0});
  return sc;
}

struct LiuOutcome {
  int shockwave_cycles = 0;
  int shockwave_within_two = 0;
  double shockwave_worst_error = 0.0;
  int io_cycles = 0;
  int io_exact = 0;
};

/// Runs the scenario and scores the estimator on the focus lane: shockwave
/// cycles against the true per-cycle max queue, input-output cycles against
/// the true vehicles-in-zone count at the estimator's snapshot second.
inline LiuOutcome evaluate_liu_scenario(const LiuScenario& sc, const pde::PdeParams& params) {
  sim::SimOptions opt;
  opt.lane_changes = false;
  auto log = sim::run(sc.net, sc.trips, sc.signals, 1234, sc.duration, opt);
  auto estimates = pde::liu_estimate(log, params);

  LiuOutcome out;
  const auto& series = log.lanes[static_cast<std::size_t>(sc.focus_lane)];
  for (const auto& est : estimates) {
    if (est.lane != sc.focus_lane) continue;
    const auto& cyc = series.cycles[static_cast<std::size_t>(est.cycle_id)];
    if (est.mode == pde::EstimateMode::Shockwave) {
      double err = std::abs(est.max_queue_estimate - static_cast<double>(cyc.max_queue));
      out.shockwave_cycles += 1;
      out.shockwave_worst_error = std::max(out.shockwave_worst_error, err);
      if (err <= 2.0) out.shockwave_within_two += 1;
    } else {
      int snapshot = cyc.green_onset > cyc.start_second ? cyc.green_onset - 1
                                                        : cyc.end_second - 1;
      int zone = series.zone_count[static_cast<std::size_t>(snapshot)];
      out.io_cycles += 1;
      if (est.max_queue_estimate == static_cast<double>(zone)) out.io_exact += 1;
    }
  }
  return out;
}

}  // namespace laneflow::scenarios
