#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "laneflow/microsim.hpp"
#include "laneflow/pde_estimator.hpp"

namespace laneflow::io {

namespace fs = std::filesystem;

inline std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

class CsvReader {
 public:
  explicit CsvReader(const std::string& path) : in_(path), path_(path) {
    require(in_.good(), "csv: cannot open ", path);
    std::string header;
    std::getline(in_, header);
  }

  bool next(std::vector<std::string>& fields) {
    std::string line;
    if (!std::getline(in_, line)) return false;
    if (line.empty()) return next(fields);
    fields = split_csv_line(line);
    return true;
  }

 private:
  std::ifstream in_;
  std::string path_;
};

// ---- simulation log ---------------------------------------------------

/// Writes a simulation run directory: network copy, per-second CSV series,
/// cycle records, and a reproducibility manifest.
inline void write_log(const sim::SimulationLog& log, const std::string& dir) {
  fs::create_directories(dir);
  graph::save_network(log.network, (fs::path(dir) / "network.json").string());

  {
    std::ofstream out(fs::path(dir) / "detectors.csv");
    out << "lane,kind,second,occupancy,speed\n";
    for (std::size_t lane = 0; lane < log.lanes.size(); ++lane) {
      const auto& s = log.lanes[lane];
      for (std::size_t t = 0; t < s.stopbar_occupancy.size(); ++t) {
        out << lane << ",stopbar," << t << ',' << fmt(s.stopbar_occupancy[t]) << ','
            << fmt(s.stopbar_speed[t]) << "\n";
        out << lane << ",advance," << t << ',' << fmt(s.advance_occupancy[t]) << ','
            << fmt(s.advance_speed[t]) << "\n";
      }
    }
  }
  {
    std::ofstream out(fs::path(dir) / "ground_truth.csv");
    out << "lane,second,n_veh_seen,queue,cycle_id,max_queue_flag\n";
    for (std::size_t lane = 0; lane < log.lanes.size(); ++lane) {
      const auto& s = log.lanes[lane];
      for (std::size_t t = 0; t < s.n_veh_seen.size(); ++t) {
        bool is_cycle_end = false;
        for (const auto& c : s.cycles)
          if (static_cast<int>(t) == c.end_second - 1) is_cycle_end = true;
        out << lane << ',' << t << ',' << s.n_veh_seen[t] << ',' << s.queue_count[t] << ','
            << s.cycle_id[t] << ',' << (is_cycle_end ? 1 : 0) << "\n";
      }
    }
  }
  {
    std::ofstream out(fs::path(dir) / "signals.csv");
    out << "lane,second,green\n";
    for (std::size_t lane = 0; lane < log.lanes.size(); ++lane) {
      const auto& s = log.lanes[lane];
      for (std::size_t t = 0; t < s.green.size(); ++t)
        out << lane << ',' << t << ',' << static_cast<int>(s.green[t]) << "\n";
    }
  }
  {
    std::ofstream out(fs::path(dir) / "crossings.csv");
    out << "lane,second,cum_advance,cum_stopbar,vehicles_in_zone\n";
    for (std::size_t lane = 0; lane < log.lanes.size(); ++lane) {
      const auto& s = log.lanes[lane];
      for (std::size_t t = 0; t < s.zone_count.size(); ++t)
        out << lane << ',' << t << ',' << s.cum_advance_crossings[t] << ','
            << s.cum_stopbar_crossings[t] << ',' << s.zone_count[t] << "\n";
    }
  }
  {
    std::ofstream out(fs::path(dir) / "cycles.csv");
    out << "lane,cycle_id,start_second,green_onset,end_second,max_queue\n";
    for (std::size_t lane = 0; lane < log.lanes.size(); ++lane)
      for (const auto& c : log.lanes[lane].cycles)
        out << lane << ',' << c.cycle_id << ',' << c.start_second << ',' << c.green_onset << ','
            << c.end_second << ',' << c.max_queue << "\n";
  }
  {
    std::ofstream out(fs::path(dir) / "conservation.csv");
    out << "second,inserted_cum,present,exited_cum\n";
    for (std::size_t t = 0; t < log.inserted_cum.size(); ++t)
      out << t << ',' << log.inserted_cum[t] << ',' << log.present[t] << ','
          << log.exited_cum[t] << "\n";
  }
  {
    nlohmann::json manifest;
    manifest["format"] = "laneflow-run";
    manifest["version"] = kVersion;
    manifest["seed"] = log.seed;
    manifest["duration"] = log.duration;
    manifest["network_file"] = "network.json";
    auto& sigs = manifest["signals"] = nlohmann::json::array();
    for (const auto& c : log.signals) {
      nlohmann::json sj = {{"intersection", c.intersection},
                           {"cycle_length", c.cycle_length},
                           {"offset", c.offset},
                           {"phases", nlohmann::json::array()}};
      for (const auto& p : c.phases)
        sj["phases"].push_back({{"duration", p.duration}, {"green_lanes", p.green_lanes}});
      sigs.push_back(sj);
    }
    std::ofstream out(fs::path(dir) / "manifest.json");
    out << manifest.dump(2) << "\n";
  }
}

/// Reads a run directory back into a SimulationLog.
inline sim::SimulationLog read_log(const std::string& dir) {
  sim::SimulationLog log;
  log.network = graph::load_network((fs::path(dir) / "network.json").string());

  nlohmann::json manifest;
  {
    std::ifstream in(fs::path(dir) / "manifest.json");
    require(in.good(), "run: missing manifest.json in ", dir);
    in >> manifest;
  }
  require(manifest.value("format", "") == "laneflow-run", "run: ", dir,
          " is not a simulation run directory");
  log.seed = manifest.at("seed").get<std::uint64_t>();
  log.duration = manifest.at("duration").get<int>();
  for (const auto& sj : manifest.at("signals")) {
    sim::SignalController c;
    c.intersection = sj.at("intersection").get<int>();
    c.cycle_length = sj.at("cycle_length").get<int>();
    c.offset = sj.at("offset").get<int>();
    for (const auto& pj : sj.at("phases"))
      c.phases.push_back(
          {pj.at("duration").get<int>(), pj.at("green_lanes").get<std::vector<int>>()});
    log.signals.push_back(std::move(c));
  }

  std::size_t n = log.network.lane_count();
  auto T = static_cast<std::size_t>(log.duration);
  log.lanes.resize(n);
  for (auto& s : log.lanes) {
    s.stopbar_occupancy.resize(T);
    s.stopbar_speed.resize(T);
    s.advance_occupancy.resize(T);
    s.advance_speed.resize(T);
    s.green.resize(T);
    s.n_veh_seen.resize(T);
    s.queue_count.resize(T);
    s.zone_count.resize(T);
    s.cum_advance_crossings.resize(T);
    s.cum_stopbar_crossings.resize(T);
    s.cycle_id.resize(T);
  }

  {
    CsvReader r((fs::path(dir) / "detectors.csv").string());
    std::vector<std::string> f;
    while (r.next(f)) {
      auto lane = static_cast<std::size_t>(std::stoul(f[0]));
      auto t = static_cast<std::size_t>(std::stoul(f[2]));
      auto& s = log.lanes[lane];
      if (f[1] == "stopbar") {
        s.stopbar_occupancy[t] = std::stod(f[3]);
        s.stopbar_speed[t] = std::stod(f[4]);
      } else {
        s.advance_occupancy[t] = std::stod(f[3]);
        s.advance_speed[t] = std::stod(f[4]);
      }
    }
  }
  {
    CsvReader r((fs::path(dir) / "ground_truth.csv").string());
    std::vector<std::string> f;
    while (r.next(f)) {
      auto lane = static_cast<std::size_t>(std::stoul(f[0]));
      auto t = static_cast<std::size_t>(std::stoul(f[1]));
      auto& s = log.lanes[lane];
      s.n_veh_seen[t] = std::stoi(f[2]);
      s.queue_count[t] = std::stoi(f[3]);
      s.cycle_id[t] = std::stoi(f[4]);
    }
  }
  {
    CsvReader r((fs::path(dir) / "signals.csv").string());
    std::vector<std::string> f;
    while (r.next(f))
      log.lanes[std::stoul(f[0])].green[std::stoul(f[1])] =
          static_cast<std::uint8_t>(std::stoi(f[2]));
  }
  {
    CsvReader r((fs::path(dir) / "crossings.csv").string());
    std::vector<std::string> f;
    while (r.next(f)) {
      auto lane = static_cast<std::size_t>(std::stoul(f[0]));
      auto t = static_cast<std::size_t>(std::stoul(f[1]));
      auto& s = log.lanes[lane];
      s.cum_advance_crossings[t] = std::stol(f[2]);
      s.cum_stopbar_crossings[t] = std::stol(f[3]);
      s.zone_count[t] = std::stoi(f[4]);
    }
  }
  {
    CsvReader r((fs::path(dir) / "cycles.csv").string());
    std::vector<std::string> f;
    while (r.next(f)) {
      sim::CycleRecord c;
      c.cycle_id = std::stoi(f[1]);
      c.start_second = std::stoi(f[2]);
      c.green_onset = std::stoi(f[3]);
      c.end_second = std::stoi(f[4]);
      c.max_queue = std::stoi(f[5]);
      log.lanes[std::stoul(f[0])].cycles.push_back(c);
    }
  }
  {
    CsvReader r((fs::path(dir) / "conservation.csv").string());
    std::vector<std::string> f;
    log.inserted_cum.resize(T);
    log.present.resize(T);
    log.exited_cum.resize(T);
    while (r.next(f)) {
      auto t = static_cast<std::size_t>(std::stoul(f[0]));
      log.inserted_cum[t] = std::stol(f[1]);
      log.present[t] = std::stol(f[2]);
      log.exited_cum[t] = std::stol(f[3]);
    }
  }
  return log;
}

// ---- cycle estimates ----------------------------------------------------

inline void write_estimates(const std::vector<pde::CycleEstimate>& estimates,
                            const std::string& path) {
  std::ofstream out(path);
  require(out.good(), "estimates: cannot open ", path, " for writing");
  out << "lane,cycle,second,estimate,mode\n";
  for (const auto& e : estimates)
    out << e.lane << ',' << e.cycle_id << ',' << e.estimate_time << ','
        << fmt(e.max_queue_estimate) << ',' << pde::mode_name(e.mode) << "\n";
}

inline std::vector<pde::CycleEstimate> read_estimates(const std::string& path) {
  std::vector<pde::CycleEstimate> out;
  CsvReader r(path);
  std::vector<std::string> f;
  while (r.next(f)) {
    pde::CycleEstimate e;
    e.lane = std::stoi(f[0]);
    e.cycle_id = std::stoi(f[1]);
    e.estimate_time = std::stoi(f[2]);
    e.max_queue_estimate = std::stod(f[3]);
    e.mode = f[4] == "shockwave" ? pde::EstimateMode::Shockwave : pde::EstimateMode::InputOutput;
    out.push_back(e);
  }
  return out;
}

}  // namespace laneflow::io
