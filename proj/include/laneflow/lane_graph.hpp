#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "laneflow/common.hpp"
#include "laneflow/tensor.hpp"

namespace laneflow::graph {

enum class Heading : std::uint8_t { North = 0, East = 1, South = 2, West = 3 };

inline Heading right_of(Heading h) { return static_cast<Heading>((static_cast<int>(h) + 1) % 4); }
inline Heading left_of(Heading h) { return static_cast<Heading>((static_cast<int>(h) + 3) % 4); }
inline Heading reverse_of(Heading h) { return static_cast<Heading>((static_cast<int>(h) + 2) % 4); }
inline bool is_north_south(Heading h) { return h == Heading::North || h == Heading::South; }

inline const char* heading_name(Heading h) {
  switch (h) {
    case Heading::North: return "north";
    case Heading::East: return "east";
    case Heading::South: return "south";
    case Heading::West: return "west";
  }
  return "?";
}

struct Lane {
  int id = -1;
  int road_id = -1;
  int index_on_road = 0;  // 0 = rightmost
  double length = 0.0;
  double speed_limit = 0.0;
};

struct Road {
  int id = -1;
  int from_intersection = -1;  // -1 = network boundary
  int to_intersection = -1;    // -1 = network boundary
  Heading heading = Heading::North;
  double length = 0.0;
  std::vector<int> lanes;  // lane ids, index 0 = rightmost
  bool entry = false;
  bool exit = false;
};

struct Connection {
  int from_lane = -1;
  int to_lane = -1;
};

/// Lane-level directed road network. All values are immutable after
/// construction; lane and road ids equal their vector positions, which fixes
/// the node ordering.
struct RoadNetwork {
  std::vector<Lane> lanes;
  std::vector<Road> roads;
  std::vector<Connection> connections;
  std::vector<int> entry_roads;
  std::vector<int> exit_roads;
  int intersection_count = 0;

  std::size_t lane_count() const { return lanes.size(); }

  /// Lane ids reachable from `lane` through one turn connection.
  std::vector<int> lane_successors(int lane) const {
    std::vector<int> out;
    for (const auto& c : connections)
      if (c.from_lane == lane) out.push_back(c.to_lane);
    return out;
  }

  bool has_connection(int from, int to) const {
    for (const auto& c : connections)
      if (c.from_lane == from && c.to_lane == to) return true;
    return false;
  }
};

enum class EdgeType : std::uint8_t { Self = 0, Downstream = 1, Upstream = 2, Neighbor = 3 };

inline const char* edge_type_name(EdgeType t) {
  switch (t) {
    case EdgeType::Self: return "self";
    case EdgeType::Downstream: return "downstream";
    case EdgeType::Upstream: return "upstream";
    case EdgeType::Neighbor: return "neighbor";
  }
  return "?";
}

inline std::optional<EdgeType> edge_type_from_name(const std::string& s) {
  if (s == "self") return EdgeType::Self;
  if (s == "downstream") return EdgeType::Downstream;
  if (s == "upstream") return EdgeType::Upstream;
  if (s == "neighbor") return EdgeType::Neighbor;
  return std::nullopt;
}

/// Typed adjacency stack. Matrices hold 0/1 doubles so they can double as
/// attention masks. A flattened stack keeps a single union matrix and an
/// empty type list.
struct MultiAdjacency {
  std::size_t n = 0;
  std::vector<EdgeType> types;
  std::vector<Tensor> matrices;
  bool flattened = false;

  std::size_t depth() const { return matrices.size(); }

  std::string label(std::size_t d) const {
    return flattened ? std::string("any") : std::string(edge_type_name(types.at(d)));
  }
};

namespace detail {

struct LinkKey {
  int a = 0, b = 0;  // intersection ids, directed a -> b
  auto operator<=>(const LinkKey&) const = default;
};

/// Shared grid assembler. `removed` lists internal directed links to omit.
inline RoadNetwork assemble_grid(int rows, int cols, int lanes_per_road, double road_length,
                                 bool with_perimeter, const std::set<LinkKey>& removed) {
  require(rows >= 1 && cols >= 1, "build_grid: rows and cols must be >= 1, got ", rows, "x",
          cols);
  require(lanes_per_road >= 1, "build_grid: lanes_per_road must be >= 1, got ", lanes_per_road);
  require(road_length > 0.0, "build_grid: road_length must be > 0, got ", road_length);

  RoadNetwork net;
  net.intersection_count = rows * cols;
  const double speed_limit = 13.89;  // 50 km/h urban default

  auto inter_id = [&](int r, int c) { return r * cols + c; };

  auto add_road = [&](int from, int to, Heading h, bool entry, bool exit) {
    Road road;
    road.id = static_cast<int>(net.roads.size());
    road.from_intersection = from;
    road.to_intersection = to;
    road.heading = h;
    road.length = road_length;
    road.entry = entry;
    road.exit = exit;
    for (int k = 0; k < lanes_per_road; ++k) {
      Lane lane;
      lane.id = static_cast<int>(net.lanes.size());
      lane.road_id = road.id;
      lane.index_on_road = k;
      lane.length = road_length;
      lane.speed_limit = speed_limit;
      road.lanes.push_back(lane.id);
      net.lanes.push_back(lane);
    }
    if (entry) net.entry_roads.push_back(road.id);
    if (exit) net.exit_roads.push_back(road.id);
    net.roads.push_back(std::move(road));
  };

  // Internal links, both directions unless removed. Grid row 0 is the north
  // edge, so increasing row moves south.
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      if (c + 1 < cols) {
        int a = inter_id(r, c), b = inter_id(r, c + 1);
        if (!removed.count({a, b})) add_road(a, b, Heading::East, false, false);
        if (!removed.count({b, a})) add_road(b, a, Heading::West, false, false);
      }
      if (r + 1 < rows) {
        int a = inter_id(r, c), b = inter_id(r + 1, c);
        if (!removed.count({a, b})) add_road(a, b, Heading::South, false, false);
        if (!removed.count({b, a})) add_road(b, a, Heading::North, false, false);
      }
    }
  }

  // Perimeter roads attach at every boundary side of every boundary
  // intersection: one inbound (entry) and one outbound (exit) road.
  if (with_perimeter) {
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        int x = inter_id(r, c);
        if (r == 0) {  // north side open
          add_road(-1, x, Heading::South, true, false);
          add_road(x, -1, Heading::North, false, true);
        }
        if (c + 1 == cols) {  // east side open
          add_road(-1, x, Heading::West, true, false);
          add_road(x, -1, Heading::East, false, true);
        }
        if (r + 1 == rows) {  // south side open
          add_road(-1, x, Heading::North, true, false);
          add_road(x, -1, Heading::South, false, true);
        }
        if (c == 0) {  // west side open
          add_road(-1, x, Heading::East, true, false);
          add_road(x, -1, Heading::West, false, true);
        }
      }
    }
  }

  // Turn connections. Rightmost lane serves right + straight, middle lanes go
  // straight, leftmost serves straight + left.
  for (const Road& in : net.roads) {
    if (in.to_intersection < 0) continue;
    const Road* straight = nullptr;
    const Road* right = nullptr;
    const Road* left = nullptr;
    for (const Road& out : net.roads) {
      if (out.from_intersection != in.to_intersection) continue;
      if (out.heading == in.heading) straight = &out;
      if (out.heading == right_of(in.heading)) right = &out;
      if (out.heading == left_of(in.heading)) left = &out;
    }
    int L = lanes_per_road;
    for (int k = 0; k < L; ++k) {
      int from = in.lanes[static_cast<std::size_t>(k)];
      if (k == 0 && right) net.connections.push_back({from, right->lanes[0]});
      if (straight)
        net.connections.push_back({from, straight->lanes[static_cast<std::size_t>(k)]});
      if (k == L - 1 && left)
        net.connections.push_back({from, left->lanes[static_cast<std::size_t>(L - 1)]});
    }
  }

  return net;
}

/// Every lane must lie on some entry-to-exit path.
inline bool fully_connected(const RoadNetwork& net) {
  if (net.entry_roads.empty() || net.exit_roads.empty()) return false;
  std::size_t n = net.lane_count();
  std::vector<std::vector<int>> succ(n), pred(n);
  for (const auto& c : net.connections) {
    succ[static_cast<std::size_t>(c.from_lane)].push_back(c.to_lane);
    pred[static_cast<std::size_t>(c.to_lane)].push_back(c.from_lane);
  }
  auto bfs = [&](const std::vector<int>& seeds, const std::vector<std::vector<int>>& adj) {
    std::vector<char> seen(n, 0);
    std::vector<int> queue = seeds;
    for (int s : seeds) seen[static_cast<std::size_t>(s)] = 1;
    while (!queue.empty()) {
      int v = queue.back();
      queue.pop_back();
      for (int w : adj[static_cast<std::size_t>(v)])
        if (!seen[static_cast<std::size_t>(w)]) {
          seen[static_cast<std::size_t>(w)] = 1;
          queue.push_back(w);
        }
    }
    return seen;
  };
  std::vector<int> entry_lanes, exit_lanes;
  for (int r : net.entry_roads)
    for (int l : net.roads[static_cast<std::size_t>(r)].lanes) entry_lanes.push_back(l);
  for (int r : net.exit_roads)
    for (int l : net.roads[static_cast<std::size_t>(r)].lanes) exit_lanes.push_back(l);
  auto from_entry = bfs(entry_lanes, succ);
  auto to_exit = bfs(exit_lanes, pred);
  for (std::size_t i = 0; i < n; ++i)
    if (!from_entry[i] || !to_exit[i]) return false;
  return true;
}

}  // namespace detail

/// Regular grid of bidirectional roads with optional perimeter entry/exit
/// roads attached at every open boundary side.
inline RoadNetwork build_grid(int rows, int cols, int lanes_per_road, double road_length,
                              bool with_perimeter) {
  return detail::assemble_grid(rows, cols, lanes_per_road, road_length, with_perimeter, {});
}

/// Irregular grid-like network: start from the smallest square grid reaching
/// `target_intersections`, then remove a seeded random subset (up to 30%) of
/// internal directed links. Retries with fresh subsets if entry-to-exit
/// connectivity breaks.
inline RoadNetwork build_random_grid(std::uint64_t seed, int target_intersections,
                                     double road_length, int lanes_per_road) {
  require(target_intersections >= 2, "build_random_grid: target_intersections must be >= 2");
  int g = 1;
  while (g * g < target_intersections) ++g;
  Rng rng(seed ^ 0x9d2c5680a5b3c0deULL);

  std::vector<detail::LinkKey> internal;
  for (int r = 0; r < g; ++r)
    for (int c = 0; c < g; ++c) {
      if (c + 1 < g) {
        internal.push_back({r * g + c, r * g + c + 1});
        internal.push_back({r * g + c + 1, r * g + c});
      }
      if (r + 1 < g) {
        internal.push_back({r * g + c, (r + 1) * g + c});
        internal.push_back({(r + 1) * g + c, r * g + c});
      }
    }

  const int max_attempts = 50;
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    std::vector<detail::LinkKey> pool = internal;
    for (std::size_t i = pool.size(); i > 1; --i)
      std::swap(pool[i - 1], pool[rng.uniform_index(i)]);
    std::size_t max_remove = std::max<std::size_t>(1, pool.size() * 3 / 10);
    std::size_t remove_count = 1 + rng.uniform_index(max_remove);
    std::set<detail::LinkKey> removed(pool.begin(), pool.begin() + static_cast<long>(remove_count));
    RoadNetwork net = detail::assemble_grid(g, g, lanes_per_road, road_length, true, removed);
    if (detail::fully_connected(net)) return net;
  }
  fail("build_random_grid: no connected network found in ", max_attempts, " attempts (seed ",
       seed, ")");
}

/// Typed adjacency matrices for the requested edge types, in order.
inline MultiAdjacency adjacency_matrices(const RoadNetwork& net,
                                         const std::vector<EdgeType>& types) {
  require(!types.empty(), "adjacency_matrices: types must be non-empty");
  for (std::size_t i = 0; i < types.size(); ++i)
    for (std::size_t j = i + 1; j < types.size(); ++j)
      require(types[i] != types[j], "adjacency_matrices: duplicate edge type ",
              edge_type_name(types[i]));

  std::size_t n = net.lane_count();
  MultiAdjacency adj;
  adj.n = n;
  adj.types = types;
  for (EdgeType t : types) {
    Tensor m({n, n});
    switch (t) {
      case EdgeType::Self:
        m = Tensor::identity(n);
        break;
      case EdgeType::Downstream:
        for (const auto& c : net.connections)
          m.at(static_cast<std::size_t>(c.from_lane), static_cast<std::size_t>(c.to_lane)) = 1.0;
        break;
      case EdgeType::Upstream:
        for (const auto& c : net.connections)
          m.at(static_cast<std::size_t>(c.to_lane), static_cast<std::size_t>(c.from_lane)) = 1.0;
        break;
      case EdgeType::Neighbor:
        for (const Road& r : net.roads)
          for (int a : r.lanes)
            for (int b : r.lanes)
              if (a != b) m.at(static_cast<std::size_t>(a), static_cast<std::size_t>(b)) = 1.0;
        break;
    }
    adj.matrices.push_back(std::move(m));
  }
  return adj;
}

/// Union of all edge types into a single untyped adjacency (D = 1).
inline MultiAdjacency flatten(const MultiAdjacency& adj) {
  require(adj.depth() >= 1, "flatten: empty adjacency");
  MultiAdjacency out;
  out.n = adj.n;
  out.flattened = true;
  Tensor u({adj.n, adj.n});
  for (const Tensor& m : adj.matrices)
    for (std::size_t i = 0; i < u.numel(); ++i)
      if (m[i] != 0.0) u[i] = 1.0;
  out.matrices.push_back(std::move(u));
  return out;
}

/// Flattened union with directionality dropped: entry (i,j) = 1 iff i and j
/// are related in either direction by any edge type.
inline Tensor union_symmetric(const MultiAdjacency& adj) {
  Tensor u({adj.n, adj.n});
  for (const Tensor& m : adj.matrices)
    for (std::size_t i = 0; i < adj.n; ++i)
      for (std::size_t j = 0; j < adj.n; ++j)
        if (m.at(i, j) != 0.0) {
          u.at(i, j) = 1.0;
          u.at(j, i) = 1.0;
        }
  return u;
}

// ---- JSON serialization -----------------------------------------------

inline nlohmann::json network_to_json(const RoadNetwork& net) {
  nlohmann::json j;
  j["format"] = "laneflow-network";
  j["version"] = 1;
  j["intersections"] = net.intersection_count;
  auto& lanes = j["lanes"] = nlohmann::json::array();
  for (const Lane& l : net.lanes)
    lanes.push_back({{"id", l.id},
                     {"road", l.road_id},
                     {"index", l.index_on_road},
                     {"length", l.length},
                     {"speed_limit", l.speed_limit}});
  auto& roads = j["roads"] = nlohmann::json::array();
  for (const Road& r : net.roads)
    roads.push_back({{"id", r.id},
                     {"from", r.from_intersection},
                     {"to", r.to_intersection},
                     {"heading", heading_name(r.heading)},
                     {"length", r.length},
                     {"entry", r.entry},
                     {"exit", r.exit},
                     {"lanes", r.lanes}});
  auto& conns = j["connections"] = nlohmann::json::array();
  for (const Connection& c : net.connections)
    conns.push_back(nlohmann::json::array({c.from_lane, c.to_lane}));
  return j;
}

inline RoadNetwork network_from_json(const nlohmann::json& j) {
  require(j.value("format", "") == "laneflow-network", "network: not a laneflow network file");
  RoadNetwork net;
  net.intersection_count = j.at("intersections").get<int>();
  for (const auto& l : j.at("lanes")) {
    Lane lane;
    lane.id = l.at("id").get<int>();
    lane.road_id = l.at("road").get<int>();
    lane.index_on_road = l.at("index").get<int>();
    lane.length = l.at("length").get<double>();
    lane.speed_limit = l.at("speed_limit").get<double>();
    require(lane.id == static_cast<int>(net.lanes.size()), "network: lane ids must be dense");
    net.lanes.push_back(lane);
  }
  for (const auto& r : j.at("roads")) {
    Road road;
    road.id = r.at("id").get<int>();
    road.from_intersection = r.at("from").get<int>();
    road.to_intersection = r.at("to").get<int>();
    std::string h = r.at("heading").get<std::string>();
    if (h == "north") road.heading = Heading::North;
    else if (h == "east") road.heading = Heading::East;
    else if (h == "south") road.heading = Heading::South;
    else if (h == "west") road.heading = Heading::West;
    else fail("network: bad heading '", h, "'");
    road.length = r.at("length").get<double>();
    road.entry = r.at("entry").get<bool>();
    road.exit = r.at("exit").get<bool>();
    road.lanes = r.at("lanes").get<std::vector<int>>();
    require(road.id == static_cast<int>(net.roads.size()), "network: road ids must be dense");
    if (road.entry) net.entry_roads.push_back(road.id);
    if (road.exit) net.exit_roads.push_back(road.id);
    net.roads.push_back(std::move(road));
  }
  for (const auto& c : j.at("connections")) net.connections.push_back({c.at(0), c.at(1)});
  return net;
}

inline void save_network(const RoadNetwork& net, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), "network: cannot open ", path, " for writing");
  out << network_to_json(net).dump(2) << "\n";
}

inline RoadNetwork load_network(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "network: cannot open ", path);
  nlohmann::json j;
  in >> j;
  return network_from_json(j);
}

}  // namespace laneflow::graph
