#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "laneflow/common.hpp"
#include "laneflow/microsim.hpp"

namespace laneflow::pde {

/// Operating constants of the shockwave / input-output queue estimator.
struct PdeParams {
  double free_flow_speed = 13.89;    // m/s
  double backward_wave_speed = 5.0;  // m/s, fallback when B is unusable
  double jam_spacing = 7.5;          // m per queued vehicle
  double saturation_headway = 2.0;   // s per vehicle
  double occupancy_breakpoint_threshold = 0.8;
  double breakpoint_speed_ceiling = 1.0;  // m/s, "speed about zero" during red
  double recovery_speed_fraction = 0.5;   // of free flow, defines breakpoint B
  int sustain_seconds = 3;

  void validate() const {
    require(free_flow_speed > 0 && backward_wave_speed > 0 && jam_spacing > 0 &&
                saturation_headway > 0 && occupancy_breakpoint_threshold > 0,
            "pde params: all parameters must be strictly positive");
    require(jam_spacing >= sim::kVehicleLength + sim::kMinGap,
            "pde params: jam_spacing must cover vehicle length plus minimum gap");
  }

  static PdeParams defaults_for(const graph::RoadNetwork& net) {
    PdeParams p;
    if (!net.lanes.empty()) p.free_flow_speed = net.lanes[0].speed_limit;
    return p;
  }
};

enum class EstimateMode { Shockwave, InputOutput };

inline const char* mode_name(EstimateMode m) {
  return m == EstimateMode::Shockwave ? "shockwave" : "input_output";
}

struct CycleEstimate {
  int lane = -1;
  int cycle_id = -1;
  double max_queue_estimate = 0.0;  // vehicles
  int estimate_time = 0;            // second
  EstimateMode mode = EstimateMode::InputOutput;
};

/// Up to two breakpoints per cycle at the advance detector: A marks the
/// queue-arrival shock (sustained high occupancy at near-zero speed during
/// red), B marks the discharge-wave arrival (sustained speed recovery during
/// green). Cycles without A report neither.
struct Breakpoints {
  std::optional<int> a;
  std::optional<int> b;
};

inline std::vector<Breakpoints> detect_breakpoints(const std::vector<double>& advance_occupancy,
                                                   const std::vector<double>& advance_speed,
                                                   const std::vector<sim::CycleRecord>& cycles,
                                                   const PdeParams& params) {
  params.validate();
  std::size_t T = advance_occupancy.size();
  require(advance_speed.size() == T, "detect_breakpoints: misaligned series");
  std::vector<Breakpoints> out(cycles.size());

  auto queued_at = [&](std::size_t s) {
    return advance_occupancy[s] >= params.occupancy_breakpoint_threshold &&
           advance_speed[s] >= 0.0 && advance_speed[s] < params.breakpoint_speed_ceiling;
  };

  for (std::size_t c = 0; c < cycles.size(); ++c) {
    const auto& cyc = cycles[c];
    if (cyc.green_onset < 0) continue;
    auto red_end = static_cast<std::size_t>(cyc.green_onset);
    auto cycle_end = static_cast<std::size_t>(std::min<int>(cyc.end_second, static_cast<int>(T)));

    // A: first second of a sustained queued run starting during red (the run
    // itself may extend into green).
    for (auto s = static_cast<std::size_t>(cyc.start_second); s < red_end; ++s) {
      bool ok = true;
      for (int k = 0; k < params.sustain_seconds; ++k) {
        std::size_t idx = s + static_cast<std::size_t>(k);
        if (idx >= T || !queued_at(idx)) {
          ok = false;
          break;
        }
      }
      if (ok) {
        out[c].a = static_cast<int>(s);
        break;
      }
    }
    if (!out[c].a) continue;

    // B: first green second whose next `sustain` observed speed readings all
    // clear the recovery threshold. Seconds with nothing over the loop
    // (speed sentinel -1) neither extend nor break the run.
    double thr = params.recovery_speed_fraction * params.free_flow_speed;
    for (auto s = red_end; s < cycle_end; ++s) {
      if (advance_speed[s] < thr) continue;
      int seen = 0;
      bool ok = true;
      for (std::size_t idx = s; idx < T && seen < params.sustain_seconds; ++idx) {
        if (advance_speed[idx] < 0.0) continue;  // empty second
        if (advance_speed[idx] < thr) {
          ok = false;
          break;
        }
        ++seen;
      }
      if (ok && seen == params.sustain_seconds) {
        out[c].b = static_cast<int>(s);
        break;
      }
    }
  }
  return out;
}

/// Shockwave estimate from the two measured breakpoints. The queue-growth
/// characteristic starts at the stopbar at red onset and is fitted through
/// A; the discharge characteristic starts at the stopbar at green onset with
/// speed measured from B. The stopbar-anchored jam spans the region between
/// them, so its length v1*(t-R) - w*(t-G) peaks exactly at green onset; that
/// peak is the reported maximum queue. The characteristics must intersect
/// (w > v1), otherwise the discharge never consumes the jam and the
/// estimator falls back to input-output accounting.
inline std::optional<CycleEstimate> shockwave_max_queue(const Breakpoints& bp, int red_onset,
                                                        int green_onset, int cycle_end,
                                                        double detector_offset, double lane_length,
                                                        const PdeParams& params) {
  if (!bp.a || !bp.b) return std::nullopt;
  int a = *bp.a, b = *bp.b;
  if (a <= red_onset || green_onset <= red_onset) return std::nullopt;
  double v1 = detector_offset / static_cast<double>(a - red_onset);
  double w = b > green_onset ? detector_offset / static_cast<double>(b - green_onset)
                             : params.backward_wave_speed;
  if (w <= v1) return std::nullopt;  // parallel or diverging characteristics
  double x = std::clamp(v1 * static_cast<double>(green_onset - red_onset), 0.0, lane_length);
  CycleEstimate est;
  est.max_queue_estimate = x / params.jam_spacing;
  est.mode = EstimateMode::Shockwave;
  est.estimate_time = std::clamp(green_onset, red_onset, cycle_end - 1);
  return est;
}

/// Even redistribution of negative input-output balances across a road:
/// negatives are zeroed and their total deficit is split evenly over the
/// lanes holding a surplus (iteratively, so no lane is pushed negative).
/// Roads with no surplus lanes clamp to zero.
inline std::vector<double> input_output_estimate(std::vector<double> raw) {
  double deficit = 0.0;
  for (double& v : raw)
    if (v < 0.0) {
      deficit += -v;
      v = 0.0;
    }
  while (deficit > 1e-12) {
    std::size_t surplus = 0;
    for (double v : raw)
      if (v > 0.0) ++surplus;
    if (surplus == 0) break;
    double share = deficit / static_cast<double>(surplus);
    bool exhausted_someone = false;
    for (double& v : raw) {
      if (v <= 0.0) continue;
      double take = std::min(v, share);
      v -= take;
      deficit -= take;
      if (take < share) exhausted_someone = true;
    }
    if (!exhausted_someone) break;  // everyone paid the full share
  }
  return raw;
}

namespace detail {

/// Per-second estimator balance with clearance resets: whenever the balance
/// touches zero (or goes negative) during green, the counters re-anchor.
inline std::vector<double> balance_series(const sim::LaneSeries& s) {
  std::size_t T = s.cum_advance_crossings.size();
  std::vector<double> bal(T, 0.0);
  long offset = 0;
  for (std::size_t t = 0; t < T; ++t) {
    long raw = s.cum_advance_crossings[t] - s.cum_stopbar_crossings[t];
    if (s.green[t] != 0 && raw - offset <= 0) offset = raw;
    bal[t] = static_cast<double>(raw - offset);
  }
  return bal;
}

}  // namespace detail

/// Per-lane, per-cycle maximum-queue estimates for a whole simulation log.
/// Shockwave mode wherever both breakpoints exist; otherwise the road-level
/// input-output accounting, timestamped at the cycle's green-to-red
/// transition.
inline std::vector<CycleEstimate> liu_estimate(const sim::SimulationLog& log,
                                               const PdeParams& params) {
  params.validate();
  std::vector<CycleEstimate> out;
  const auto& net = log.network;

  std::vector<std::vector<double>> balances(net.lane_count());
  std::vector<std::vector<Breakpoints>> breakpoints(net.lane_count());
  for (std::size_t lane = 0; lane < net.lane_count(); ++lane) {
    const auto& s = log.lanes[lane];
    balances[lane] = detail::balance_series(s);
    breakpoints[lane] =
        detect_breakpoints(s.advance_occupancy, s.advance_speed, s.cycles, params);
  }

  for (const auto& road : net.roads) {
    if (road.lanes.empty()) continue;
    std::size_t cycle_count = log.lanes[static_cast<std::size_t>(road.lanes[0])].cycles.size();
    for (int lane : road.lanes)
      require(log.lanes[static_cast<std::size_t>(lane)].cycles.size() == cycle_count,
              "liu_estimate: lanes of road ", road.id, " disagree on cycle count");

    for (std::size_t c = 0; c < cycle_count; ++c) {
      // raw input-output balances at the last red second of the cycle
      std::vector<double> raw(road.lanes.size(), 0.0);
      for (std::size_t k = 0; k < road.lanes.size(); ++k) {
        auto lane = static_cast<std::size_t>(road.lanes[k]);
        const auto& cyc = log.lanes[lane].cycles[c];
        int snapshot = cyc.green_onset > cyc.start_second ? cyc.green_onset - 1
                                                          : cyc.end_second - 1;
        raw[k] = balances[lane][static_cast<std::size_t>(snapshot)];
      }
      std::vector<double> io = input_output_estimate(raw);

      for (std::size_t k = 0; k < road.lanes.size(); ++k) {
        auto lane = static_cast<std::size_t>(road.lanes[k]);
        const auto& cyc = log.lanes[lane].cycles[c];
        double capacity = net.lanes[lane].length / params.jam_spacing;
        auto shock = shockwave_max_queue(
            breakpoints[lane][c], cyc.start_second, cyc.green_onset, cyc.end_second,
            sim::kAdvanceOffset, net.lanes[lane].length, params);
        CycleEstimate est;
        est.lane = static_cast<int>(lane);
        est.cycle_id = cyc.cycle_id;
        if (shock) {
          est.max_queue_estimate = std::min(shock->max_queue_estimate, capacity);
          est.estimate_time = shock->estimate_time;
          est.mode = EstimateMode::Shockwave;
        } else {
          est.max_queue_estimate = std::clamp(io[k], 0.0, capacity);
          est.estimate_time = cyc.start_second;
          est.mode = EstimateMode::InputOutput;
        }
        out.push_back(est);
      }
    }
  }
  std::sort(out.begin(), out.end(), [](const CycleEstimate& a, const CycleEstimate& b) {
    return a.lane != b.lane ? a.lane < b.lane : a.cycle_id < b.cycle_id;
  });
  return out;
}

}  // namespace laneflow::pde
