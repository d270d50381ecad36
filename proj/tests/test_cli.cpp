#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "laneflow/cli.hpp"

using namespace laneflow;
namespace fs = std::filesystem;

namespace {

int run_cli(std::initializer_list<const char*> args) {
  std::vector<const char*> argv = {"laneflow"};
  argv.insert(argv.end(), args.begin(), args.end());
  return cli::run(static_cast<int>(argv.size()), argv.data());
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str(const std::string& sub = "") const { return (path / sub).string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("unknown subcommands and flags exit nonzero") {
  CHECK(run_cli({"frobnicate"}) != 0);
  CHECK(run_cli({"simulate", "--bogus-flag", "1"}) != 0);
  CHECK(run_cli({}) != 0);
}

TEST_CASE("model config validation") {
  SECTION("minimal config gets documented defaults") {
    auto cfg = config::parse_model_config(nlohmann::json::object());
    CHECK(cfg.gru_dim == 128);
    CHECK(cfg.encoder.heads == 4);
    CHECK(cfg.encoder.edge_types.size() == 4);
  }
  SECTION("misspelled keys are rejected by name") {
    nlohmann::json j = {{"gru_dmi", 64}};
    CHECK_THROWS_WITH(config::parse_model_config(j),
                      Catch::Matchers::ContainsSubstring("gru_dmi"));
    nlohmann::json nested = {{"encoder", {{"atention_dim", 12}}}};
    CHECK_THROWS_WITH(config::parse_model_config(nested),
                      Catch::Matchers::ContainsSubstring("atention_dim"));
  }
  SECTION("normalization round-trips") {
    nlohmann::json j = {{"gru_dim", 32}, {"encoder", {{"heads", 2}}}};
    auto once = config::normalize_model_config(j);
    auto twice = config::normalize_model_config(once);
    CHECK(once == twice);
  }
}

TEST_CASE("suite config validation") {
  nlohmann::json j = {{"seeds", {1, 2}},
                      {"specs",
                       {{{"name", "identity"}, {"edge_types", {"self"}}},
                        {{"name", "full"},
                         {"edge_types", {"self", "downstream", "upstream", "neighbor"}}}}}};
  auto doc = config::parse_suite_config(j);
  CHECK(doc.suite.specs.size() == 2);
  CHECK(doc.suite.seeds.size() == 2);
  CHECK(doc.split_train == 20);

  nlohmann::json bad = j;
  bad["specs"][0]["flatten"] = true;  // misspelling of "flattened"
  CHECK_THROWS_WITH(config::parse_suite_config(bad),
                    Catch::Matchers::ContainsSubstring("flatten"));
}

TEST_CASE("pipeline through the command line produces byte-identical reruns") {
  TempDir tmp("laneflow_cli_test");
  auto net_file = tmp.str("net.json");
  REQUIRE(run_cli({"netgen", "--grid", "1x1", "--lanes", "2", "--out", net_file.c_str()}) == 0);

  auto run_pipeline = [&](const std::string& tag) {
    auto out = tmp.str(tag);
    auto sims = out + "/sims";
    REQUIRE(run_cli({"simulate", "--network", net_file.c_str(), "--seed", "5", "--seed", "6",
                     "--duration", "300", "--headway", "1.5", "--out", sims.c_str()}) == 0);
    for (const char* s : {"sim_5", "sim_6"}) {
      auto log_dir = sims + "/" + s;
      auto liu_file = log_dir + "/liu.csv";
      REQUIRE(run_cli({"liu", "--log", log_dir.c_str(), "--out", liu_file.c_str()}) == 0);
    }
    auto ds = out + "/dataset";
    auto sim5 = sims + "/sim_5";
    auto sim6 = sims + "/sim_6";
    REQUIRE(run_cli({"dataset", "--runs", sim5.c_str(), sim6.c_str(), "--out", ds.c_str()}) == 0);

    auto model_cfg = tmp.str("model.json");
    cli::write_text(model_cfg,
                    R"({"encoder": {"edge_types": ["self","downstream"], "heads": 1,
                        "attention_dim": 3, "fc_dim": 6}, "gru_dim": 6})");
    auto train_cfg = tmp.str("train.json");
    cli::write_text(train_cfg, R"({"max_epochs": 2, "batch_size": 1})");
    auto run_dir = out + "/train";
    REQUIRE(run_cli({"train", "--dataset", ds.c_str(), "--config", model_cfg.c_str(),
                     "--train-config", train_cfg.c_str(), "--split", "1,1,0", "--seed", "3",
                     "--out", run_dir.c_str()}) == 0);
    auto eval_csv = out + "/eval.csv";
    auto ckpt = run_dir + "/checkpoint.json";
    REQUIRE(run_cli({"eval", "--dataset", ds.c_str(), "--checkpoint", ckpt.c_str(), "--out",
                     eval_csv.c_str()}) == 0);
    auto report_dir = out + "/report";
    REQUIRE(run_cli({"report", "--dataset", ds.c_str(), "--checkpoint", ckpt.c_str(), "--out",
                     report_dir.c_str(), "--lanes", "2"}) == 0);
    return out;
  };

  auto a = run_pipeline("a");
  auto b = run_pipeline("b");

  // every artifact byte-identical across reruns
  std::size_t compared = 0;
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    auto rel = fs::relative(entry.path(), a);
    auto other = fs::path(b) / rel;
    CAPTURE(rel.string());
    REQUIRE(fs::exists(other));
    REQUIRE(slurp(entry.path().string()) == slurp(other.string()));
    ++compared;
  }
  CHECK(compared > 10);

  // transfer runs on a different network without retraining
  auto net2 = tmp.str("net2.json");
  REQUIRE(run_cli({"netgen", "--random", "4", "--seed", "2", "--lanes", "2", "--out",
                   net2.c_str()}) == 0);
  auto sims2 = tmp.str("sims2");
  REQUIRE(run_cli({"simulate", "--network", net2.c_str(), "--seed", "9", "--duration", "300",
                   "--headway", "1.5", "--out", sims2.c_str()}) == 0);
  auto log2 = sims2 + "/sim_9";
  auto liu2 = log2 + "/liu.csv";
  REQUIRE(run_cli({"liu", "--log", log2.c_str(), "--out", liu2.c_str()}) == 0);
  auto ds2 = tmp.str("dataset2");
  REQUIRE(run_cli({"dataset", "--runs", log2.c_str(), "--out", ds2.c_str()}) == 0);
  auto ckpt = a + "/train/checkpoint.json";
  auto transfer_csv = tmp.str("transfer.csv");
  REQUIRE(run_cli({"transfer", "--dataset", ds2.c_str(), "--checkpoint", ckpt.c_str(), "--out",
                   transfer_csv.c_str()}) == 0);
  CHECK(slurp(transfer_csv).find("queue_mae") != std::string::npos);

  // report produced SVG plots
  bool saw_svg = false;
  for (const auto& entry : fs::directory_iterator(a + "/report"))
    saw_svg = saw_svg || entry.path().extension() == ".svg";
  CHECK(saw_svg);
}
