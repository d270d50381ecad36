#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <vector>

#include "laneflow/common.hpp"
#include "laneflow/lane_graph.hpp"

namespace laneflow::sim {

using graph::RoadNetwork;

// Vehicle and dynamics constants.
inline constexpr double kVehicleLength = 5.0;   // m
inline constexpr double kMinGap = 2.5;          // m, standstill gap
inline constexpr double kAccel = 2.6;           // m/s^2
inline constexpr double kDecel = 4.5;           // m/s^2, comfortable braking
inline constexpr double kImperfection = 0.5;    // dawdling fraction of accel
inline constexpr double kDt = 1.0;              // s, fixed tick
inline constexpr double kLoopLength = 1.0;      // m, effective detector loop
inline constexpr double kAdvanceOffset = 125.0; // m upstream of the stopbar
inline constexpr double kQueueSpeed = 0.1;      // m/s, stopped threshold
inline constexpr double kStopSnap = 1e-3;       // m/s, below this a crawl is a stop
inline constexpr double kQueueGap = 9.5;        // m, front-to-front platoon gap
inline constexpr double kMandatoryZone = 200.0; // m, forced lane-change window

struct Trip {
  double depart = 0.0;  // s
  int entry_road = -1;
  int exit_road = -1;
  double speed_factor = 1.0;
};

struct Phase {
  int duration = 0;             // s
  std::vector<int> green_lanes; // sorted lane ids
};

struct SignalController {
  int intersection = -1;
  int cycle_length = 0;
  int offset = 0;
  std::vector<Phase> phases;

  bool green(int lane, int second) const {
    int t = (second + offset) % cycle_length;
    for (const Phase& p : phases) {
      if (t < p.duration)
        return std::binary_search(p.green_lanes.begin(), p.green_lanes.end(), lane);
      t -= p.duration;
    }
    return false;
  }

  void validate() const {
    int sum = 0;
    for (const Phase& p : phases) sum += p.duration;
    require(sum == cycle_length, "signal plan: phase durations sum to ", sum, ", expected cycle ",
            cycle_length);
  }
};

/// Fixed-time two-phase plans: north-south green, clearance, east-west green,
/// clearance. One controller per internal intersection.
inline std::vector<SignalController> default_signal_plans(const RoadNetwork& net,
                                                          int green_seconds = 27,
                                                          int all_red_seconds = 3) {
  std::vector<SignalController> out;
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
    SignalController c;
    c.intersection = x;
    c.cycle_length = 2 * (green_seconds + all_red_seconds);
    c.phases = {{green_seconds, ns}, {all_red_seconds, {}}, {green_seconds, ew},
                {all_red_seconds, {}}};
    c.validate();
    out.push_back(std::move(c));
  }
  return out;
}

/// Seeded random demand: one trip every `headway` seconds from a random entry
/// road to a random reachable exit road, with a clipped Gaussian speed factor.
inline std::vector<Trip> generate_demand(const RoadNetwork& net, std::uint64_t seed,
                                         double headway, double duration) {
  require(headway > 0.0, "generate_demand: headway must be > 0");
  require(!net.entry_roads.empty() && !net.exit_roads.empty(),
          "generate_demand: network has no entry or exit roads");

  // Road-level reachability so each trip draws an exit it can actually reach.
  std::size_t R = net.roads.size();
  std::vector<std::vector<int>> succ(R);
  for (const auto& c : net.connections) {
    int a = net.lanes[static_cast<std::size_t>(c.from_lane)].road_id;
    int b = net.lanes[static_cast<std::size_t>(c.to_lane)].road_id;
    auto& v = succ[static_cast<std::size_t>(a)];
    if (std::find(v.begin(), v.end(), b) == v.end()) v.push_back(b);
  }
  std::vector<std::vector<int>> reachable_exits(R);
  for (int e : net.entry_roads) {
    std::vector<char> seen(R, 0);
    std::vector<int> stack = {e};
    seen[static_cast<std::size_t>(e)] = 1;
    while (!stack.empty()) {
      int r = stack.back();
      stack.pop_back();
      for (int nxt : succ[static_cast<std::size_t>(r)])
        if (!seen[static_cast<std::size_t>(nxt)]) {
          seen[static_cast<std::size_t>(nxt)] = 1;
          stack.push_back(nxt);
        }
    }
    for (int x : net.exit_roads)
      if (seen[static_cast<std::size_t>(x)]) reachable_exits[static_cast<std::size_t>(e)].push_back(x);
  }

  Rng rng(seed);
  std::vector<Trip> trips;
  auto count = static_cast<std::size_t>(duration / headway);
  trips.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Trip t;
    t.depart = static_cast<double>(i) * headway;
    t.entry_road = net.entry_roads[rng.uniform_index(net.entry_roads.size())];
    const auto& exits = reachable_exits[static_cast<std::size_t>(t.entry_road)];
    require(!exits.empty(), "generate_demand: entry road ", t.entry_road, " reaches no exit");
    t.exit_road = exits[rng.uniform_index(exits.size())];
    t.speed_factor = std::clamp(rng.normal(1.0, 0.1), 0.2, 2.0);
    trips.push_back(t);
  }
  return trips;
}

struct Vehicle {
  int id = -1;
  std::vector<int> route;  // road ids
  std::size_t route_pos = 0;
  int lane = -1;
  double pos = 0.0;  // front bumper, meters from lane start
  double speed = 0.0;
  double length = kVehicleLength;
  double speed_factor = 1.0;
  int lane_change_cooldown = 0;
};

struct DetectorLayout {
  std::vector<double> advance_pos;  // per lane
  std::vector<double> stopbar_pos;  // per lane
};

/// Two loop detectors per lane: one at the stopbar, one 125 m upstream.
inline DetectorLayout place_detectors(const RoadNetwork& net) {
  DetectorLayout layout;
  layout.advance_pos.reserve(net.lane_count());
  layout.stopbar_pos.reserve(net.lane_count());
  for (const auto& lane : net.lanes) {
    require(lane.length > kAdvanceOffset, "place_detectors: lane ", lane.id, " is ", lane.length,
            " m, needs > ", kAdvanceOffset);
    layout.stopbar_pos.push_back(lane.length);
    layout.advance_pos.push_back(lane.length - kAdvanceOffset);
  }
  return layout;
}

struct CycleRecord {
  int cycle_id = 0;
  int start_second = 0;  // red onset (green-to-red transition)
  int green_onset = -1;  // first green second inside the cycle
  int end_second = 0;    // exclusive; equals the next red onset
  int max_queue = 0;     // vehicles
};

struct LaneSeries {
  std::vector<double> stopbar_occupancy;
  std::vector<double> stopbar_speed;  // -1 when nothing observed
  std::vector<double> advance_occupancy;
  std::vector<double> advance_speed;
  std::vector<std::uint8_t> green;
  std::vector<int> n_veh_seen;
  std::vector<int> queue_count;
  std::vector<int> zone_count;  // vehicles between the advance line and the stopbar
  std::vector<long> cum_advance_crossings;
  std::vector<long> cum_stopbar_crossings;
  std::vector<int> cycle_id;  // -1 outside any complete-cycle bookkeeping
  std::vector<CycleRecord> cycles;
};

struct SimulationLog {
  RoadNetwork network;
  std::vector<SignalController> signals;
  int duration = 0;
  std::uint64_t seed = 0;
  std::vector<LaneSeries> lanes;
  std::vector<long> inserted_cum;  // per second, after the tick
  std::vector<long> present;
  std::vector<long> exited_cum;
};

struct SimOptions {
  bool lane_changes = true;
};

/// Single-threaded microscopic simulation. Deterministic for a fixed
/// (network, demand, signal plans, seed).
class Simulation {
 public:
  Simulation(const RoadNetwork& net, std::vector<Trip> demand,
             std::vector<SignalController> signals, std::uint64_t seed, SimOptions options = {})
      : net_(net),
        signals_(std::move(signals)),
        options_(options),
        rng_(seed ^ 0x51ed2701a4b1c9f3ULL),
        layout_(place_detectors(net)) {
    pending_ = std::move(demand);
    std::stable_sort(pending_.begin(), pending_.end(),
                     [](const Trip& a, const Trip& b) { return a.depart < b.depart; });
    lanes_.resize(net_.lane_count());
    controller_of_lane_.assign(net_.lane_count(), -1);
    for (std::size_t s = 0; s < signals_.size(); ++s)
      for (const auto& road : net_.roads)
        if (road.to_intersection == signals_[s].intersection)
          for (int lane : road.lanes)
            controller_of_lane_[static_cast<std::size_t>(lane)] = static_cast<int>(s);
    log_.network = net_;
    log_.signals = signals_;
    log_.seed = seed;
    log_.lanes.resize(net_.lane_count());
    prev_green_.assign(net_.lane_count(), 2);  // 2 = unknown before first tick
    open_cycle_start_.assign(net_.lane_count(), -1);
    open_cycle_max_.assign(net_.lane_count(), 0);
    open_cycle_green_onset_.assign(net_.lane_count(), -1);
    cum_in_.assign(net_.lane_count(), 0);
    cum_out_.assign(net_.lane_count(), 0);
  }

  int time() const { return time_; }
  long inserted() const { return inserted_; }
  long exited() const { return exited_; }

  long on_network() const {
    long n = 0;
    for (const auto& l : lanes_) n += static_cast<long>(l.size());
    return n;
  }

  const std::vector<Vehicle>& lane_vehicles(int lane) const {
    return lanes_[static_cast<std::size_t>(lane)];
  }

  bool lane_green(int lane, int second) const {
    int c = controller_of_lane_[static_cast<std::size_t>(lane)];
    if (c < 0) return true;  // unsignalized lane end (network boundary)
    return signals_[static_cast<std::size_t>(c)].green(lane, second);
  }

  bool lane_signalized(int lane) const {
    return controller_of_lane_[static_cast<std::size_t>(lane)] >= 0;
  }

  /// Advances the simulation by one 1-second tick.
  void step() {
    int t = time_;
    if (options_.lane_changes) apply_lane_changes(t);
    plan_speeds(t);
    move_vehicles(t);
    insert_pending(t);
    record(t);
    time_ += 1;
  }

  const SimulationLog& log() const { return log_; }
  SimulationLog take_log() { return std::move(log_); }

 private:
  struct Motion {
    int vehicle = -1;
    double x0 = 0.0;
    double x1 = 0.0;
    double speed = 0.0;
  };

  double lane_length(int lane) const {
    return net_.lanes[static_cast<std::size_t>(lane)].length;
  }

  // Next road on the route after the vehicle's current one, or -1.
  int next_road(const Vehicle& v) const {
    if (v.route_pos + 1 >= v.route.size()) return -1;
    return v.route[v.route_pos + 1];
  }

  // Connected lane on road `road` reachable from `lane`, preferring the
  // lowest target index; -1 when no connection exists.
  int connection_target(int lane, int road) const {
    int best = -1;
    for (const auto& c : net_.connections) {
      if (c.from_lane != lane) continue;
      if (net_.lanes[static_cast<std::size_t>(c.to_lane)].road_id != road) continue;
      if (best < 0 || c.to_lane < best) best = c.to_lane;
    }
    return best;
  }

  bool lane_serves_next_road(const Vehicle& v) const {
    int nxt = next_road(v);
    if (nxt < 0) return true;
    return connection_target(v.lane, nxt) >= 0;
  }

  // Krauss safe speed, capped by the one-step-stoppable bound so the
  // zero-collision invariant survives even when a leader halts instantly
  // (blocked transfers, sudden red).
  static double safe_speed(double gap, double leader_speed, double own_speed) {
    if (gap <= 0.0) return 0.0;
    double brick = gap / kDt;
    double krauss = leader_speed + (gap - leader_speed * kDt) / (own_speed / kDecel + kDt);
    return std::max(0.0, std::min(brick, krauss));
  }

  // Gap to whatever limits this vehicle: same-lane leader, or the lane end
  // (signal / next-lane tail / network exit).
  double allowed_speed(const Vehicle& v, std::size_t idx_on_lane, int t) const {
    const auto& lane_vec = lanes_[static_cast<std::size_t>(v.lane)];
    double len = lane_length(v.lane);
    double bound = std::numeric_limits<double>::infinity();
    if (idx_on_lane > 0) {
      const Vehicle& leader = lane_vec[idx_on_lane - 1];
      bound = safe_speed(leader.pos - leader.length - kMinGap - v.pos, leader.speed, v.speed);
    } else {
      int nxt = next_road(v);
      if (nxt < 0) {
        // exit road: free outflow across the boundary
        bound = std::numeric_limits<double>::infinity();
      } else if (!lane_green(v.lane, t) || connection_target(v.lane, nxt) < 0) {
        bound = safe_speed(len - v.pos, 0.0, v.speed);
      } else {
        int target = connection_target(v.lane, nxt);
        const auto& tv = lanes_[static_cast<std::size_t>(target)];
        if (tv.empty()) {
          bound = std::numeric_limits<double>::infinity();
        } else {
          const Vehicle& tail = tv.back();
          // distance available: to the end of this lane plus the space behind
          // the next lane's tail (may be negative if the tail straddles).
          double gap = (len - v.pos) + (tail.pos - tail.length - kMinGap);
          bound = safe_speed(gap, tail.speed, v.speed);
        }
      }
    }
    return bound;
  }

  void plan_speeds(int t) {
    planned_.assign(net_.lane_count(), {});
    for (std::size_t lane = 0; lane < lanes_.size(); ++lane) {
      auto& vec = lanes_[lane];
      auto& plans = planned_[lane];
      plans.reserve(vec.size());
      for (std::size_t i = 0; i < vec.size(); ++i) {
        Vehicle& v = vec[i];
        double vmax = net_.lanes[lane].speed_limit * v.speed_factor;
        double dawdle = rng_.uniform() * kImperfection * kAccel * kDt;
        double accel_cap = v.speed + kAccel * kDt - dawdle;
        double next = std::min({allowed_speed(v, i, t), accel_cap, vmax});
        if (next < kStopSnap) next = 0.0;
        plans.push_back(next);
      }
    }
  }

  void move_vehicles(int t) {
    motions_.assign(net_.lane_count(), {});
    for (std::size_t lane = 0; lane < lanes_.size(); ++lane) {
      auto& vec = lanes_[lane];
      double len = lane_length(lane_id(lane));
      double bound = std::numeric_limits<double>::infinity();
      std::size_t write = 0;
      for (std::size_t i = 0; i < vec.size(); ++i) {
        Vehicle v = vec[i];
        double x0 = v.pos;
        double planned_v = planned_[lane][i];
        bool clamped = false;
        double x1 = x0 + planned_v * kDt;
        if (x1 > bound) {
          x1 = std::max(bound, x0);
          clamped = true;
        }
        bool left_lane = false;
        if (x1 > len) {
          int nxt = next_road(v);
          double crossing_speed = clamped ? (x1 - x0) / kDt : planned_v;
          if (nxt < 0) {
            // crosses the network boundary
            motions_[lane].push_back({v.id, x0, x1, crossing_speed});
            cum_out_[lane] += 1;
            exited_ += 1;
            left_lane = true;
          } else {
            int target = lane_green(static_cast<int>(lane), t)
                             ? connection_target(static_cast<int>(lane), nxt)
                             : -1;
            double entry_pos = x1 - len;
            if (target >= 0 && transfer_possible(target, entry_pos)) {
              motions_[lane].push_back({v.id, x0, x1, crossing_speed});
              bound = len + entry_pos - v.length - kMinGap;
              v.pos = entry_pos;
              v.speed = crossing_speed;
              v.lane = target;
              v.route_pos += 1;
              incoming_.push_back(v);
              cum_out_[lane] += 1;
              left_lane = true;
            } else {
              double stop = std::min(len, bound);
              x1 = std::max(stop, x0);
              clamped = true;
            }
          }
        }
        if (!left_lane) {
          v.pos = x1;
          v.speed = clamped ? (x1 - x0) / kDt : planned_v;
          motions_[lane].push_back({v.id, x0, x1, v.speed});
          if (x0 <= layout_.advance_pos[lane] && x1 > layout_.advance_pos[lane])
            cum_in_[lane] += 1;
          bound = v.pos - v.length - kMinGap;
          vec[write++] = v;
        } else {
          if (x0 <= layout_.advance_pos[lane] && x1 > layout_.advance_pos[lane])
            cum_in_[lane] += 1;
        }
      }
      vec.resize(write);
    }
    // Insert transferred vehicles into their new lanes, keeping front-first
    // order. Processing order is deterministic (old lane id, then position).
    for (Vehicle& v : incoming_) {
      auto& vec = lanes_[static_cast<std::size_t>(v.lane)];
      auto it = std::find_if(vec.begin(), vec.end(),
                             [&](const Vehicle& o) { return o.pos < v.pos; });
      vec.insert(it, v);
    }
    incoming_.clear();
  }

  bool transfer_possible(int target, double entry_pos) const {
    double tail_rear = std::numeric_limits<double>::infinity();
    const auto& vec = lanes_[static_cast<std::size_t>(target)];
    if (!vec.empty()) tail_rear = vec.back().pos - vec.back().length;
    // vehicles already transferred into `target` this tick are the real tail
    for (const Vehicle& v : incoming_)
      if (v.lane == target) tail_rear = std::min(tail_rear, v.pos - v.length);
    return tail_rear - kMinGap >= entry_pos;
  }

  void apply_lane_changes(int t) {
    for (std::size_t lane = 0; lane < lanes_.size(); ++lane) {
      auto& vec = lanes_[lane];
      for (std::size_t i = 0; i < vec.size();) {
        Vehicle& v = vec[i];
        if (moved_this_tick_.count(v.id)) {
          ++i;
          continue;
        }
        if (v.lane_change_cooldown > 0) v.lane_change_cooldown -= 1;
        int target = lane_change_target(v, i, t);
        if (target < 0) {
          ++i;
          continue;
        }
        Vehicle moved = v;
        moved.lane = target;
        moved.lane_change_cooldown = 5;
        vec.erase(vec.begin() + static_cast<long>(i));
        auto& tvec = lanes_[static_cast<std::size_t>(target)];
        auto it = std::find_if(tvec.begin(), tvec.end(),
                               [&](const Vehicle& o) { return o.pos < moved.pos; });
        tvec.insert(it, moved);
        moved_this_tick_.insert(moved.id);
      }
    }
    moved_this_tick_.clear();
  }

  // Returns the adjacent lane to move into this tick, or -1.
  int lane_change_target(const Vehicle& v, std::size_t idx_on_lane, int t) const {
    const auto& lane = net_.lanes[static_cast<std::size_t>(v.lane)];
    const auto& road = net_.roads[static_cast<std::size_t>(lane.road_id)];
    if (road.lanes.size() < 2) return -1;
    double len = lane_length(v.lane);
    int nxt = next_road(v);

    bool mandatory = false;
    int direction = 0;
    if (nxt >= 0 && len - v.pos <= kMandatoryZone && connection_target(v.lane, nxt) < 0) {
      // nearest lane on this road that connects to the next route road
      int best_dist = std::numeric_limits<int>::max();
      for (std::size_t k = 0; k < road.lanes.size(); ++k) {
        int cand = road.lanes[k];
        if (connection_target(cand, nxt) < 0) continue;
        int dist = std::abs(static_cast<int>(k) - lane.index_on_road);
        if (dist < best_dist) {
          best_dist = dist;
          direction = (static_cast<int>(k) > lane.index_on_road) ? 1 : -1;
        }
      }
      if (direction != 0) mandatory = true;
      if (!mandatory) return -1;
    }

    auto try_side = [&](int dir, bool lenient) -> int {
      int target_index = lane.index_on_road + dir;
      if (target_index < 0 || target_index >= static_cast<int>(road.lanes.size())) return -1;
      int target = road.lanes[static_cast<std::size_t>(target_index)];
      const auto& tvec = lanes_[static_cast<std::size_t>(target)];
      const Vehicle* leader = nullptr;
      const Vehicle* follower = nullptr;
      for (const auto& o : tvec) {
        if (o.pos >= v.pos) leader = &o;  // list is front-first
        else {
          follower = &o;
          break;
        }
      }
      if (leader && leader->pos - leader->length - kMinGap < v.pos) return -1;
      if (follower) {
        double margin = lenient ? 0.0 : 0.5 * follower->speed;
        if (v.pos - v.length - kMinGap - margin < follower->pos) return -1;
      }
      return target;
    };

    if (mandatory) return try_side(direction, true);

    if (v.lane_change_cooldown > 0) return -1;
    if (nxt >= 0 && len - v.pos <= kMandatoryZone) return -1;  // keep the turn lane

    // Discretionary: adjacent lane must offer a clear speed advantage.
    double here = allowed_speed(v, idx_on_lane, t);
    double vmax = lane.speed_limit * v.speed_factor;
    here = std::min(here, vmax);
    for (int dir : {1, -1}) {
      int target_index = lane.index_on_road + dir;
      if (target_index < 0 || target_index >= static_cast<int>(road.lanes.size())) continue;
      int target = road.lanes[static_cast<std::size_t>(target_index)];
      // prospective speed on the target lane, limited by its leader
      const auto& tvec = lanes_[static_cast<std::size_t>(target)];
      const Vehicle* leader = nullptr;
      for (const auto& o : tvec)
        if (o.pos >= v.pos) leader = &o;
        else break;
      double there = vmax;
      if (leader)
        there = std::min(there, safe_speed(leader->pos - leader->length - kMinGap - v.pos,
                                           leader->speed, v.speed));
      if (there >= here + 5.0) {
        int ok = try_side(dir, false);
        if (ok >= 0) return ok;
      }
    }
    return -1;
  }

  void insert_pending(int t) {
    std::size_t write = 0;
    for (std::size_t i = 0; i < pending_.size(); ++i) {
      Trip& trip = pending_[i];
      if (trip.depart >= static_cast<double>(t + 1)) {
        pending_[write++] = trip;
        continue;
      }
      if (!try_insert(trip)) pending_[write++] = trip;
    }
    pending_.resize(write);
  }

  bool try_insert(const Trip& trip) {
    const auto& route = route_between(trip.entry_road, trip.exit_road);
    if (route.empty()) return false;
    const auto& road = net_.roads[static_cast<std::size_t>(trip.entry_road)];
    int second_road = route.size() > 1 ? route[1] : -1;

    // candidate lanes: those serving the first turn first, then the rest;
    // ties broken by occupancy then index.
    std::vector<int> candidates;
    for (int lane : road.lanes)
      if (second_road < 0 || connection_target(lane, second_road) >= 0) candidates.push_back(lane);
    for (int lane : road.lanes)
      if (std::find(candidates.begin(), candidates.end(), lane) == candidates.end())
        candidates.push_back(lane);
    std::stable_sort(candidates.begin(), candidates.end(), [&](int a, int b) {
      return lanes_[static_cast<std::size_t>(a)].size() < lanes_[static_cast<std::size_t>(b)].size();
    });

    const double entry_front = kVehicleLength;
    for (int lane : candidates) {
      auto& vec = lanes_[static_cast<std::size_t>(lane)];
      double space = vec.empty()
                         ? std::numeric_limits<double>::infinity()
                         : vec.back().pos - vec.back().length - kMinGap - entry_front;
      if (space < 0.0) continue;
      Vehicle v;
      v.id = next_vehicle_id_++;
      v.route = route;
      v.route_pos = 0;
      v.lane = lane;
      v.pos = entry_front;
      v.speed_factor = trip.speed_factor;
      double vmax = net_.lanes[static_cast<std::size_t>(lane)].speed_limit * v.speed_factor;
      v.speed = std::min(vmax, vec.empty() ? vmax : std::max(0.0, space));
      vec.push_back(v);  // smallest position: back of the front-first list
      inserted_ += 1;
      return true;
    }
    return false;
  }

  const std::vector<int>& route_between(int from_road, int to_road) {
    auto key = std::make_pair(from_road, to_road);
    auto it = route_cache_.find(key);
    if (it != route_cache_.end()) return it->second;

    // Dijkstra over roads, free-flow travel time weights.
    std::size_t R = net_.roads.size();
    std::vector<std::vector<int>> succ(R);
    for (const auto& c : net_.connections) {
      int a = net_.lanes[static_cast<std::size_t>(c.from_lane)].road_id;
      int b = net_.lanes[static_cast<std::size_t>(c.to_lane)].road_id;
      auto& v = succ[static_cast<std::size_t>(a)];
      if (std::find(v.begin(), v.end(), b) == v.end()) v.push_back(b);
    }
    std::vector<double> dist(R, std::numeric_limits<double>::infinity());
    std::vector<int> prev(R, -1);
    using Item = std::pair<double, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
    dist[static_cast<std::size_t>(from_road)] = 0.0;
    heap.push({0.0, from_road});
    while (!heap.empty()) {
      auto [d, r] = heap.top();
      heap.pop();
      if (d > dist[static_cast<std::size_t>(r)]) continue;
      if (r == to_road) break;
      for (int nxt : succ[static_cast<std::size_t>(r)]) {
        const auto& road = net_.roads[static_cast<std::size_t>(nxt)];
        double w = road.length / net_.lanes[static_cast<std::size_t>(road.lanes[0])].speed_limit;
        double nd = d + w;
        auto ni = static_cast<std::size_t>(nxt);
        if (nd < dist[ni] - 1e-12) {
          dist[ni] = nd;
          prev[ni] = r;
          heap.push({nd, nxt});
        }
      }
    }
    std::vector<int> route;
    if (std::isfinite(dist[static_cast<std::size_t>(to_road)])) {
      for (int r = to_road; r >= 0; r = prev[static_cast<std::size_t>(r)]) route.push_back(r);
      std::reverse(route.begin(), route.end());
    }
    return route_cache_.emplace(key, std::move(route)).first->second;
  }

  void record(int t) {
    auto ts = static_cast<std::size_t>(t);
    log_.inserted_cum.resize(ts + 1);
    log_.present.resize(ts + 1);
    log_.exited_cum.resize(ts + 1);
    log_.inserted_cum[ts] = inserted_;
    log_.present[ts] = on_network();
    log_.exited_cum[ts] = exited_;

    for (std::size_t lane = 0; lane < lanes_.size(); ++lane) {
      LaneSeries& s = log_.lanes[lane];
      const auto& vec = lanes_[lane];

      // detector sampling from the per-tick movement intervals
      // A 1 m loop centered at p is covered while the vehicle body overlaps
      // it, i.e. while the front lies in [p - loop/2, p + length + loop/2).
      auto sample = [&](double p) {
        double occupied = 0.0, speed_time = 0.0;
        for (const Motion& m : motions_[lane]) {
          double lo = p - 0.5 * kLoopLength, hi = p + kVehicleLength + 0.5 * kLoopLength;
          double tau = 0.0;
          if (m.speed <= 1e-9) {
            tau = (m.x0 >= lo && m.x0 < hi) ? 1.0 : 0.0;
          } else {
            double enter = std::max(m.x0, lo);
            double leave = std::min(m.x1, hi);
            tau = leave > enter ? std::min((leave - enter) / m.speed, 1.0) : 0.0;
          }
          occupied += tau;
          speed_time += tau * m.speed;
        }
        double occ = std::min(1.0, occupied);
        double spd = occupied > 0.0 ? speed_time / occupied : -1.0;
        return std::make_pair(occ, spd);
      };
      auto [so, ss] = sample(layout_.stopbar_pos[lane]);
      auto [ao, as] = sample(layout_.advance_pos[lane]);
      s.stopbar_occupancy.push_back(so);
      s.stopbar_speed.push_back(ss);
      s.advance_occupancy.push_back(ao);
      s.advance_speed.push_back(as);

      bool green = lane_green(static_cast<int>(lane), t);
      s.green.push_back(green ? 1 : 0);
      s.n_veh_seen.push_back(static_cast<int>(vec.size()));

      // queue: contiguous stopped platoon reaching the stopbar
      int queue = 0;
      double expected_front = lane_length(static_cast<int>(lane));
      for (const Vehicle& v : vec) {
        if (v.speed < kQueueSpeed && expected_front - v.pos <= kQueueGap) {
          queue += 1;
          expected_front = v.pos - v.length;
        } else {
          break;
        }
      }
      s.queue_count.push_back(queue);

      int zone = 0;
      for (const Vehicle& v : vec)
        if (v.pos > layout_.advance_pos[lane]) zone += 1;
      s.zone_count.push_back(zone);
      s.cum_advance_crossings.push_back(cum_in_[lane]);
      s.cum_stopbar_crossings.push_back(cum_out_[lane]);

      // cycle bookkeeping: a cycle runs from one green-to-red transition to
      // the next; only complete cycles are kept.
      int cyc = -1;
      if (lane_signalized(static_cast<int>(lane))) {
        std::uint8_t prev = prev_green_[lane];
        std::uint8_t cur = green ? 1 : 0;
        if (prev == 1 && cur == 0) {
          if (open_cycle_start_[lane] >= 0) {
            CycleRecord rec;
            rec.cycle_id = static_cast<int>(s.cycles.size());
            rec.start_second = open_cycle_start_[lane];
            rec.green_onset = open_cycle_green_onset_[lane];
            rec.end_second = t;
            rec.max_queue = open_cycle_max_[lane];
            s.cycles.push_back(rec);
          }
          open_cycle_start_[lane] = t;
          open_cycle_max_[lane] = 0;
          open_cycle_green_onset_[lane] = -1;
        }
        prev_green_[lane] = cur;
        if (open_cycle_start_[lane] >= 0) {
          cyc = static_cast<int>(s.cycles.size());  // id the cycle will get
          open_cycle_max_[lane] = std::max(open_cycle_max_[lane], queue);
          if (cur == 1 && open_cycle_green_onset_[lane] < 0)
            open_cycle_green_onset_[lane] = t;
        }
      }
      s.cycle_id.push_back(cyc);
    }
  }

  int lane_id(std::size_t idx) const { return static_cast<int>(idx); }

  RoadNetwork net_;
  std::vector<SignalController> signals_;
  SimOptions options_;
  Rng rng_;
  DetectorLayout layout_;
  std::vector<std::vector<Vehicle>> lanes_;  // per lane, front-first
  std::vector<Trip> pending_;
  std::vector<std::vector<double>> planned_;
  std::vector<std::vector<Motion>> motions_;
  std::vector<Vehicle> incoming_;
  std::set<int> moved_this_tick_;
  std::vector<int> controller_of_lane_;
  std::map<std::pair<int, int>, std::vector<int>> route_cache_;
  std::vector<std::uint8_t> prev_green_;
  std::vector<int> open_cycle_start_;
  std::vector<int> open_cycle_max_;
  std::vector<int> open_cycle_green_onset_;
  std::vector<long> cum_in_;
  std::vector<long> cum_out_;
  SimulationLog log_;
  long inserted_ = 0;
  long exited_ = 0;
  int next_vehicle_id_ = 0;
  int time_ = 0;
};

using TickObserver = std::function<void(const Simulation&, int)>;

/// Runs a complete simulation and returns its log. The observer, when given,
/// is called after every tick with the post-tick state.
inline SimulationLog run(const RoadNetwork& net, std::vector<Trip> demand,
                         std::vector<SignalController> signals, std::uint64_t seed,
                         int duration_seconds, SimOptions options = {},
                         const TickObserver& observer = {}) {
  Simulation sim(net, std::move(demand), std::move(signals), seed, options);
  for (int t = 0; t < duration_seconds; ++t) {
    sim.step();
    if (observer) observer(sim, t);
  }
  SimulationLog log = sim.take_log();
  log.duration = duration_seconds;
  return log;
}

}  // namespace laneflow::sim
