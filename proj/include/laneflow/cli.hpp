#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "laneflow/configs.hpp"
#include "laneflow/report.hpp"

namespace laneflow::cli {

namespace fs = std::filesystem;

inline std::array<std::size_t, 3> parse_split(const std::string& text) {
  auto fields = io::split_csv_line(text);
  require(fields.size() == 3, "split: expected train,validation,test counts, got '", text, "'");
  return {std::stoul(fields[0]), std::stoul(fields[1]), std::stoul(fields[2])};
}

inline void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  require(out.good(), "cannot open ", path.string(), " for writing");
  out << text;
}

inline void write_manifest(const fs::path& dir, nlohmann::json manifest) {
  manifest["version"] = kVersion;
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

// ---- subcommand payloads ----------------------------------------------

struct NetgenArgs {
  std::string grid;  // "RxC"
  int random_intersections = 0;
  std::uint64_t seed = 1;
  int lanes = 2;
  double length = 750.0;
  bool no_perimeter = false;
  std::string out;
};

inline int run_netgen(const NetgenArgs& a) {
  graph::RoadNetwork net;
  if (a.random_intersections > 0) {
    net = graph::build_random_grid(a.seed, a.random_intersections, a.length, a.lanes);
  } else {
    require(!a.grid.empty(), "netgen: --grid RxC or --random N is required");
    auto x = a.grid.find('x');
    require(x != std::string::npos, "netgen: --grid must look like 2x2");
    net = graph::build_grid(std::stoi(a.grid.substr(0, x)), std::stoi(a.grid.substr(x + 1)),
                            a.lanes, a.length, !a.no_perimeter);
  }
  graph::save_network(net, a.out);
  std::cout << "wrote " << a.out << " (" << net.lanes.size() << " lanes, " << net.roads.size()
            << " roads)\n";
  return 0;
}

struct SimulateArgs {
  std::string network;
  std::vector<std::uint64_t> seeds = {1};
  int duration = 1800;
  double headway = 1.0;
  std::string out;
  unsigned jobs = 1;
  bool no_lane_changes = false;
  int ns_green = 27;
  int ew_green = 27;
  int clearance = 3;
};

inline int run_simulate(const SimulateArgs& a) {
  auto net = graph::load_network(a.network);
  auto signals = a.ns_green == a.ew_green
                     ? sim::default_signal_plans(net, a.ns_green, a.clearance)
                     : [&] {
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
                           c.cycle_length = a.ns_green + a.ew_green + 2 * a.clearance;
                           c.phases = {{a.ns_green, ns},
                                       {a.clearance, {}},
                                       {a.ew_green, ew},
                                       {a.clearance, {}}};
                           c.validate();
                           out.push_back(std::move(c));
                         }
                         return out;
                       }();
  sim::SimOptions options;
  options.lane_changes = !a.no_lane_changes;

  nlohmann::json args = {{"network", fs::path(a.network).filename().string()},
                         {"duration", a.duration},
                         {"headway", a.headway},       {"lane_changes", options.lane_changes},
                         {"ns_green", a.ns_green},     {"ew_green", a.ew_green},
                         {"clearance", a.clearance}};
  std::string hash = config::config_hash(args);

  parallel_for(a.seeds.size(), a.jobs, [&](std::size_t k) {
    std::uint64_t seed = a.seeds[k];
    auto demand = sim::generate_demand(net, seed, a.headway, a.duration);
    auto log = sim::run(net, demand, signals, seed, a.duration, options);
    fs::path dir = fs::path(a.out) / ("sim_" + std::to_string(seed));
    io::write_log(log, dir.string());
    nlohmann::json extra = {{"config_hash", hash}, {"args", args}};
    write_text(dir / "run_config.json", extra.dump(2) + "\n");
  });
  std::cout << "simulated " << a.seeds.size() << " run(s) into " << a.out << "\n";
  return 0;
}

struct LiuArgs {
  std::string log;
  std::string out;
  double wave_speed = 5.0;
  double jam_spacing = 7.5;
  double threshold = 0.8;
  double recovery_fraction = 0.5;
  int sustain = 3;
};

inline int run_liu(const LiuArgs& a) {
  auto log = io::read_log(a.log);
  auto params = pde::PdeParams::defaults_for(log.network);
  params.backward_wave_speed = a.wave_speed;
  params.jam_spacing = a.jam_spacing;
  params.occupancy_breakpoint_threshold = a.threshold;
  params.recovery_speed_fraction = a.recovery_fraction;
  params.sustain_seconds = a.sustain;
  auto estimates = pde::liu_estimate(log, params);
  io::write_estimates(estimates, a.out);
  std::cout << "wrote " << estimates.size() << " cycle estimates to " << a.out << "\n";
  return 0;
}

struct DatasetArgs {
  std::vector<std::string> runs;
  std::string estimates = "liu.csv";
  int bin = 30;
  std::string out;
};

inline int run_dataset(const DatasetArgs& a) {
  require(!a.runs.empty(), "dataset: at least one --runs directory required");
  fs::create_directories(a.out);
  std::string network_dump;
  std::vector<std::string> sims;
  for (const auto& run_dir : a.runs) {
    auto log = io::read_log(run_dir);
    std::string dump = graph::network_to_json(log.network).dump();
    if (network_dump.empty()) {
      network_dump = dump;
      graph::save_network(log.network, (fs::path(a.out) / "network.json").string());
    } else {
      require(dump == network_dump, "dataset: run ", run_dir,
              " uses a different network than the first run");
    }
    auto estimates = io::read_estimates((fs::path(run_dir) / a.estimates).string());
    auto sample = data::build_sample(log, estimates, a.bin);
    sample.sim_id = fs::path(run_dir).filename().string();
    data::save_sample(sample, (fs::path(a.out) / sample.sim_id).string());
    sims.push_back(sample.sim_id);
  }
  write_manifest(a.out, {{"format", "laneflow-dataset"},
                         {"bin_seconds", a.bin},
                         {"simulations", sims},
                         {"estimates_file", a.estimates}});
  std::cout << "wrote " << sims.size() << " samples to " << a.out << "\n";
  return 0;
}

struct TrainArgs {
  std::string dataset;
  std::string out;
  std::string config;        // model config JSON (single-model mode)
  std::string train_config;  // optional TrainConfig JSON
  std::string suite;         // suite JSON (experiment mode)
  std::string split = "20,4,4";
  std::uint64_t seed = 1;
  unsigned jobs = 1;
};

inline int run_train(const TrainArgs& a) {
  auto samples = data::load_dataset(a.dataset);
  auto net = graph::load_network((fs::path(a.dataset) / "network.json").string());
  fs::create_directories(a.out);

  if (!a.suite.empty()) {
    auto doc = config::load_suite_config(a.suite);
    doc.suite.jobs = a.jobs;
    auto split = data::DatasetSplit::contiguous(samples.size(), doc.split_train,
                                                doc.split_validation, doc.split_test);
    auto result = experiments::run_experiment_suite(
        net, samples, split, doc.suite,
        [](const std::string& msg) { std::cerr << "[suite] " << msg << "\n"; });
    write_text(fs::path(a.out) / "report.csv", experiments::suite_csv(result));
    write_text(fs::path(a.out) / "report.txt", experiments::suite_table(result));
    fs::create_directories(fs::path(a.out) / "checkpoints");
    for (const auto& spec : doc.suite.specs) {
      for (std::uint64_t seed : doc.suite.seeds) {
        auto key = spec.name + "#" + std::to_string(seed);
        auto it = result.checkpoints.find(key);
        if (it == result.checkpoints.end()) continue;
        model::save_checkpoint(it->second, spec.model,
                               (fs::path(a.out) / "checkpoints" / (key + ".json")).string());
      }
    }
    write_manifest(a.out, {{"format", "laneflow-suite-result"},
                           {"suite_file", fs::path(a.suite).filename().string()},
                           {"config_hash", config::config_hash(config::load_json(a.suite))},
                           {"seeds", doc.suite.seeds},
                           {"dataset", fs::path(a.dataset).filename().string()}});
    std::cout << experiments::suite_table(result);
    return 0;
  }

  require(!a.config.empty(), "train: --config or --suite is required");
  auto mcfg = config::load_model_config(a.config);
  train::TrainConfig tcfg;
  if (!a.train_config.empty()) tcfg = config::parse_train_config(config::load_json(a.train_config));
  tcfg.seed = a.seed;
  tcfg.jobs = a.jobs;
  auto counts = parse_split(a.split);
  auto split = data::DatasetSplit::contiguous(samples.size(), counts[0], counts[1], counts[2]);
  auto inputs = experiments::encoder_inputs_for(net, mcfg);
  auto result = train::train(samples, split, inputs, mcfg, tcfg);
  model::save_checkpoint(result.best_params, mcfg,
                         (fs::path(a.out) / "checkpoint.json").string());
  std::string history = "epoch,train_loss,validation_loss,learning_rate\n";
  for (std::size_t e = 0; e < result.history.size(); ++e)
    history += std::to_string(e) + "," + io::fmt(result.history[e].train_loss) + "," +
               io::fmt(result.history[e].validation_loss) + "," +
               io::fmt(result.history[e].learning_rate) + "\n";
  write_text(fs::path(a.out) / "history.csv", history);
  write_manifest(a.out,
                 {{"format", "laneflow-training"},
                  {"config_hash", config::config_hash(model::model_config_to_json(mcfg))},
                  {"seeds", std::vector<std::uint64_t>{a.seed}},
                  {"dataset", fs::path(a.dataset).filename().string()},
                  {"best_epoch", result.best_epoch},
                  {"best_validation", result.best_validation}});
  std::cout << "best validation loss " << result.best_validation << " at epoch "
            << result.best_epoch << "\n";
  return 0;
}

struct EvalArgs {
  std::string dataset;
  std::string checkpoint;
  std::string out;
  std::string split;  // empty = evaluate every sample
  unsigned jobs = 1;
  bool transfer = false;
};

inline int run_eval(const EvalArgs& a) {
  auto samples = data::load_dataset(a.dataset);
  auto net = graph::load_network((fs::path(a.dataset) / "network.json").string());
  auto ckpt = model::load_checkpoint(a.checkpoint);
  std::vector<std::size_t> indices;
  if (a.split.empty()) {
    for (std::size_t i = 0; i < samples.size(); ++i) indices.push_back(i);
  } else {
    auto counts = parse_split(a.split);
    indices = data::DatasetSplit::contiguous(samples.size(), counts[0], counts[1], counts[2]).test;
  }
  auto row = a.transfer
                 ? experiments::transfer_evaluate(ckpt.params, ckpt.config, net, samples, indices)
                 : train::evaluate(ckpt.params, ckpt.config,
                                   experiments::encoder_inputs_for(net, ckpt.config), samples,
                                   indices, a.jobs);
  double baseline = train::liu_baseline_queue_mae(samples, indices);
  std::string csv = "queue_mae,occupancy_mae,baseline_queue_mae,samples\n" +
                    io::fmt(row.queue_mae) + "," + io::fmt(row.occupancy_mae) + "," +
                    io::fmt(baseline) + "," + std::to_string(indices.size()) + "\n";
  if (!a.out.empty()) write_text(a.out, csv);
  std::cout << (a.transfer ? "transfer " : "") << "queue mae " << row.queue_mae
            << ", occupancy mae " << row.occupancy_mae << ", baseline queue mae " << baseline
            << "\n";
  return 0;
}

struct ReportArgs {
  std::string dataset;
  std::string checkpoint;
  std::string out;
  std::string suite_csv;
  std::size_t lanes = 3;
  std::size_t sample_index = 0;
};

inline int run_report(const ReportArgs& a) {
  auto samples = data::load_dataset(a.dataset);
  require(a.sample_index < samples.size(), "report: sample index ", a.sample_index,
          " out of range (", samples.size(), " samples)");
  auto net = graph::load_network((fs::path(a.dataset) / "network.json").string());
  auto ckpt = model::load_checkpoint(a.checkpoint);
  auto inputs = experiments::encoder_inputs_for(net, ckpt.config);
  const auto& sample = samples[a.sample_index];
  Tensor pred = model::model_predict(ckpt.params, ckpt.config, inputs, sample.x);

  fs::create_directories(a.out);
  auto lanes = report::busiest_lanes(sample, a.lanes);
  std::vector<std::string> files;
  for (std::size_t lane : lanes) {
    std::string name = "lane_" + std::to_string(lane) + "_" + sample.sim_id + ".svg";
    write_text(fs::path(a.out) / name, report::lane_queue_chart(sample, pred, lane));
    files.push_back(name);
  }
  if (!a.suite_csv.empty())
    fs::copy_file(a.suite_csv, fs::path(a.out) / "report.csv",
                  fs::copy_options::overwrite_existing);
  write_manifest(a.out, {{"format", "laneflow-report"},
                         {"dataset", fs::path(a.dataset).filename().string()},
                         {"checkpoint", fs::path(a.checkpoint).filename().string()},
                         {"sample", sample.sim_id},
                         {"plots", files}});
  std::cout << "wrote " << files.size() << " plot(s) to " << a.out << "\n";
  return 0;
}

// ---- dispatch ---------------------------------------------------------

inline int run(int argc, const char* const* argv) {
  CLI::App app{"lane-graph traffic state estimation toolkit"};
  app.require_subcommand(1);

  NetgenArgs netgen;
  auto* cmd_netgen = app.add_subcommand("netgen", "generate a road network file");
  cmd_netgen->add_option("--grid", netgen.grid, "grid dimensions, e.g. 3x3");
  cmd_netgen->add_option("--random", netgen.random_intersections,
                         "random grid-like network with about this many intersections");
  cmd_netgen->add_option("--seed", netgen.seed, "seed for --random");
  cmd_netgen->add_option("--lanes", netgen.lanes, "lanes per road")->default_val(2);
  cmd_netgen->add_option("--length", netgen.length, "road length in meters")->default_val(750.0);
  cmd_netgen->add_flag("--no-perimeter", netgen.no_perimeter, "omit entry/exit roads");
  cmd_netgen->add_option("--out", netgen.out, "output network file")->required();

  SimulateArgs simulate;
  auto* cmd_sim = app.add_subcommand("simulate", "run microscopic traffic simulations");
  cmd_sim->add_option("--network", simulate.network, "network JSON file")->required();
  cmd_sim->add_option("--seed", simulate.seeds, "simulation seed(s)");
  cmd_sim->add_option("--duration", simulate.duration, "seconds to simulate")->default_val(1800);
  cmd_sim->add_option("--headway", simulate.headway, "demand headway in seconds")
      ->default_val(1.0);
  cmd_sim->add_option("--out", simulate.out, "output directory")->required();
  cmd_sim->add_option("--jobs", simulate.jobs, "parallel simulations")->default_val(1);
  cmd_sim->add_flag("--no-lane-changes", simulate.no_lane_changes, "disable lane changing");
  cmd_sim->add_option("--ns-green", simulate.ns_green, "north-south green seconds")
      ->default_val(27);
  cmd_sim->add_option("--ew-green", simulate.ew_green, "east-west green seconds")->default_val(27);
  cmd_sim->add_option("--clearance", simulate.clearance, "all-red seconds per switch")
      ->default_val(3);

  LiuArgs liu;
  auto* cmd_liu = app.add_subcommand("liu", "per-lane per-cycle queue estimates from a run");
  cmd_liu->add_option("--log", liu.log, "simulation run directory")->required();
  cmd_liu->add_option("--out", liu.out, "output estimates CSV")->required();
  cmd_liu->add_option("--wave-speed", liu.wave_speed, "fallback discharge wave speed m/s");
  cmd_liu->add_option("--jam-spacing", liu.jam_spacing, "meters per queued vehicle");
  cmd_liu->add_option("--threshold", liu.threshold, "occupancy breakpoint threshold");
  cmd_liu->add_option("--recovery-fraction", liu.recovery_fraction,
                      "speed recovery fraction of free flow");
  cmd_liu->add_option("--sustain", liu.sustain, "sustain seconds for breakpoints");

  DatasetArgs dataset;
  auto* cmd_ds = app.add_subcommand("dataset", "bin simulation runs into model samples");
  cmd_ds->add_option("--runs", dataset.runs, "simulation run directories")->required();
  cmd_ds->add_option("--estimates", dataset.estimates, "estimates CSV name inside each run")
      ->default_val("liu.csv");
  cmd_ds->add_option("--bin", dataset.bin, "bin length in seconds")->default_val(30);
  cmd_ds->add_option("--out", dataset.out, "output dataset directory")->required();

  TrainArgs train_args;
  auto* cmd_train = app.add_subcommand("train", "train a model or an experiment suite");
  cmd_train->add_option("--dataset", train_args.dataset, "dataset directory")->required();
  cmd_train->add_option("--out", train_args.out, "output directory")->required();
  cmd_train->add_option("--config", train_args.config, "model config JSON");
  cmd_train->add_option("--train-config", train_args.train_config, "training config JSON");
  cmd_train->add_option("--suite", train_args.suite, "experiment suite JSON");
  cmd_train->add_option("--split", train_args.split, "train,validation,test sample counts")
      ->default_val("20,4,4");
  cmd_train->add_option("--seed", train_args.seed, "training seed")->default_val(1);
  cmd_train->add_option("--jobs", train_args.jobs, "parallel trainings (suite mode)")
      ->default_val(1);

  EvalArgs eval_args;
  auto* cmd_eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  cmd_eval->add_option("--dataset", eval_args.dataset, "dataset directory")->required();
  cmd_eval->add_option("--checkpoint", eval_args.checkpoint, "checkpoint file")->required();
  cmd_eval->add_option("--out", eval_args.out, "output CSV");
  cmd_eval->add_option("--split", eval_args.split,
                       "train,validation,test counts; evaluates the test part");
  cmd_eval->add_option("--jobs", eval_args.jobs, "parallel evaluation")->default_val(1);

  EvalArgs transfer_args;
  transfer_args.transfer = true;
  auto* cmd_transfer =
      app.add_subcommand("transfer", "evaluate a checkpoint on another network's dataset");
  cmd_transfer->add_option("--dataset", transfer_args.dataset, "target dataset directory")
      ->required();
  cmd_transfer->add_option("--checkpoint", transfer_args.checkpoint, "checkpoint file")
      ->required();
  cmd_transfer->add_option("--out", transfer_args.out, "output CSV");

  ReportArgs report_args;
  auto* cmd_report = app.add_subcommand("report", "render evaluation plots and tables");
  cmd_report->add_option("--dataset", report_args.dataset, "dataset directory")->required();
  cmd_report->add_option("--checkpoint", report_args.checkpoint, "checkpoint file")->required();
  cmd_report->add_option("--out", report_args.out, "output directory")->required();
  cmd_report->add_option("--suite-csv", report_args.suite_csv, "suite report.csv to include");
  cmd_report->add_option("--lanes", report_args.lanes, "number of lanes to plot")->default_val(3);
  cmd_report->add_option("--sample", report_args.sample_index, "sample index to plot")
      ->default_val(0);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (cmd_netgen->parsed()) return run_netgen(netgen);
    if (cmd_sim->parsed()) return run_simulate(simulate);
    if (cmd_liu->parsed()) return run_liu(liu);
    if (cmd_ds->parsed()) return run_dataset(dataset);
    if (cmd_train->parsed()) return run_train(train_args);
    if (cmd_eval->parsed()) return run_eval(eval_args);
    if (cmd_transfer->parsed()) return run_eval(transfer_args);
    if (cmd_report->parsed()) return run_report(report_args);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace laneflow::cli
