#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "laneflow/sim_io.hpp"
#include "laneflow/tensor.hpp"

namespace laneflow::data {

namespace fs = std::filesystem;

inline constexpr double kMissingValue = -1.0;

/// One simulation's worth of binned model data.
/// x features per lane-bin: stopbar occupancy, stopbar speed, advance
/// occupancy, advance speed, green fraction, queue-estimate feature.
/// y targets: per-cycle max queue (masked where undefined), mean vehicle
/// count.
struct Sample {
  std::string sim_id;
  Tensor x;         // lanes x T x 6
  Tensor y;         // lanes x T x 2
  Tensor mask;      // lanes x T x 2, 0/1
  Tensor liu_eval;  // lanes x T, per-cycle estimate aligned to the target bin
};

inline constexpr std::size_t kInputFeatures = 6;
inline constexpr std::size_t kTargets = 2;

/// Bins one simulation log plus its cycle estimates into a Sample.
/// Means for detector readings and the green indicator, max for the
/// per-cycle quantities; bins without a cycle end get a masked queue target,
/// bins without an estimate timestamp carry the -1 placeholder feature.
inline Sample build_sample(const sim::SimulationLog& log,
                           const std::vector<pde::CycleEstimate>& estimates,
                           int bin_seconds = 30) {
  require(bin_seconds > 0, "build_sample: bin must be positive");
  require(log.duration % bin_seconds == 0, "build_sample: duration ", log.duration,
          " is not a multiple of the bin length ", bin_seconds);
  std::size_t n = log.network.lane_count();
  auto T = static_cast<std::size_t>(log.duration / bin_seconds);
  auto B = static_cast<std::size_t>(bin_seconds);

  Sample sample;
  sample.x = Tensor({n, T, kInputFeatures});
  sample.y = Tensor({n, T, kTargets});
  sample.mask = Tensor({n, T, kTargets});
  sample.liu_eval = Tensor::full({n, T}, kMissingValue);
  for (std::size_t i = 0; i < sample.x.numel(); ++i) sample.x[i] = 0.0;

  auto xat = [&](std::size_t lane, std::size_t t, std::size_t f) -> double& {
    return sample.x[(lane * T + t) * kInputFeatures + f];
  };
  auto yat = [&](std::size_t lane, std::size_t t, std::size_t k) -> double& {
    return sample.y[(lane * T + t) * kTargets + k];
  };
  auto mat = [&](std::size_t lane, std::size_t t, std::size_t k) -> double& {
    return sample.mask[(lane * T + t) * kTargets + k];
  };

  for (std::size_t lane = 0; lane < n; ++lane) {
    const auto& s = log.lanes[lane];
    for (std::size_t t = 0; t < T; ++t) {
      double so = 0, ss = 0, ao = 0, as = 0, green = 0, nveh = 0;
      for (std::size_t k = 0; k < B; ++k) {
        std::size_t sec = t * B + k;
        so += s.stopbar_occupancy[sec];
        ss += s.stopbar_speed[sec];
        ao += s.advance_occupancy[sec];
        as += s.advance_speed[sec];
        green += s.green[sec];
        nveh += s.n_veh_seen[sec];
      }
      double div = static_cast<double>(B);
      xat(lane, t, 0) = so / div;
      xat(lane, t, 1) = ss / div;
      xat(lane, t, 2) = ao / div;
      xat(lane, t, 3) = as / div;
      xat(lane, t, 4) = green / div;
      xat(lane, t, 5) = kMissingValue;  // filled from estimates below
      yat(lane, t, 1) = nveh / div;
      mat(lane, t, 1) = 1.0;
    }
    // per-cycle max queue lands in the bin holding the cycle's last second
    for (const auto& cyc : s.cycles) {
      auto bin = static_cast<std::size_t>((cyc.end_second - 1) / bin_seconds);
      if (bin >= T) continue;
      double v = static_cast<double>(cyc.max_queue);
      if (mat(lane, bin, 0) == 0.0 || v > yat(lane, bin, 0)) yat(lane, bin, 0) = v;
      mat(lane, bin, 0) = 1.0;
    }
  }

  for (const auto& est : estimates) {
    auto lane = static_cast<std::size_t>(est.lane);
    // input feature: placed at the estimate's own timestamp
    auto fbin = static_cast<std::size_t>(est.estimate_time / bin_seconds);
    if (fbin < T && est.max_queue_estimate > xat(lane, fbin, 5))
      xat(lane, fbin, 5) = est.max_queue_estimate;
    // baseline alignment: placed where the matching target lands
    const auto& cyc =
        log.lanes[lane].cycles[static_cast<std::size_t>(est.cycle_id)];
    auto tbin = static_cast<std::size_t>((cyc.end_second - 1) / bin_seconds);
    if (tbin < T && est.max_queue_estimate > sample.liu_eval[lane * T + tbin])
      sample.liu_eval[lane * T + tbin] = est.max_queue_estimate;
  }
  return sample;
}

// ---- on-disk format -----------------------------------------------------

namespace detail {

inline void write_bin(const fs::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "dataset: cannot open ", path.string(), " for writing");
  out.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(double)));
}

inline Tensor read_bin(const fs::path& path, std::vector<std::size_t> shape) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "dataset: cannot open ", path.string());
  Tensor t(std::move(shape));
  in.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(t.numel() * sizeof(double)));
  require(in.gcount() == static_cast<std::streamsize>(t.numel() * sizeof(double)),
          "dataset: ", path.string(), " is truncated");
  return t;
}

}  // namespace detail

/// Writes one sample as a directory: x/y/mask/liu binary arrays plus a
/// manifest with the dimensions.
inline void save_sample(const Sample& sample, const std::string& dir) {
  fs::create_directories(dir);
  detail::write_bin(fs::path(dir) / "x.bin", sample.x);
  detail::write_bin(fs::path(dir) / "y.bin", sample.y);
  detail::write_bin(fs::path(dir) / "mask.bin", sample.mask);
  detail::write_bin(fs::path(dir) / "liu_eval.bin", sample.liu_eval);
  nlohmann::json manifest;
  manifest["format"] = "laneflow-sample";
  manifest["version"] = kVersion;
  manifest["sim_id"] = sample.sim_id;
  manifest["lanes"] = sample.x.dim(0);
  manifest["bins"] = sample.x.dim(1);
  manifest["features"] = kInputFeatures;
  manifest["targets"] = kTargets;
  std::ofstream out(fs::path(dir) / "manifest.json");
  out << manifest.dump(2) << "\n";
}

inline Sample load_sample(const std::string& dir) {
  nlohmann::json manifest;
  {
    std::ifstream in(fs::path(dir) / "manifest.json");
    require(in.good(), "dataset: missing manifest in ", dir);
    in >> manifest;
  }
  require(manifest.value("format", "") == "laneflow-sample", "dataset: ", dir,
          " is not a sample directory");
  auto n = manifest.at("lanes").get<std::size_t>();
  auto T = manifest.at("bins").get<std::size_t>();
  Sample sample;
  sample.sim_id = manifest.at("sim_id").get<std::string>();
  sample.x = detail::read_bin(fs::path(dir) / "x.bin", {n, T, kInputFeatures});
  sample.y = detail::read_bin(fs::path(dir) / "y.bin", {n, T, kTargets});
  sample.mask = detail::read_bin(fs::path(dir) / "mask.bin", {n, T, kTargets});
  sample.liu_eval = detail::read_bin(fs::path(dir) / "liu_eval.bin", {n, T});
  return sample;
}

/// Loads every sample directory under `dir` (sorted by name) into memory.
inline std::vector<Sample> load_dataset(const std::string& dir) {
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_directory() && fs::exists(entry.path() / "manifest.json"))
      names.push_back(entry.path().string());
  std::sort(names.begin(), names.end());
  std::vector<Sample> out;
  out.reserve(names.size());
  for (const auto& name : names) out.push_back(load_sample(name));
  require(!out.empty(), "dataset: no samples found in ", dir);
  return out;
}

/// Disjoint contiguous split in sample order.
struct DatasetSplit {
  std::vector<std::size_t> train, validation, test;

  static DatasetSplit contiguous(std::size_t total, std::size_t n_train, std::size_t n_val,
                                 std::size_t n_test) {
    require(n_train + n_val + n_test <= total, "split: ", n_train, "+", n_val, "+", n_test,
            " exceeds ", total, " samples");
    DatasetSplit s;
    for (std::size_t i = 0; i < n_train; ++i) s.train.push_back(i);
    for (std::size_t i = 0; i < n_val; ++i) s.validation.push_back(n_train + i);
    for (std::size_t i = 0; i < n_test; ++i) s.test.push_back(n_train + n_val + i);
    return s;
  }
};

}  // namespace laneflow::data
