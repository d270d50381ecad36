#pragma once

#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "laneflow/experiments.hpp"

namespace laneflow::config {

using experiments::ExperimentSpec;
using experiments::SuiteConfig;
using model::ModelConfig;
using train::TrainConfig;

/// Strict-mode key check: unrecognized keys are rejected by name.
inline void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                       const std::string& where) {
  require(j.is_object(), "config: ", where, " must be an object");
  for (const auto& [key, value] : j.items())
    require(allowed.count(key) == 1, "config: unrecognized key '", where, key, "'");
}

inline nlohmann::json load_json(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "config: cannot open ", path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    fail("config: ", path, " is not valid JSON (", e.what(), ")");
  }
  return j;
}

// ---- model config ---------------------------------------------------------

/// Parses a model configuration with defaults applied and unknown keys
/// rejected.
inline ModelConfig parse_model_config(const nlohmann::json& j) {
  check_keys(j, {"encoder", "input_dim", "gru_dim", "output_dim"}, "");
  ModelConfig c;
  if (j.contains("encoder")) {
    const auto& e = j.at("encoder");
    check_keys(e,
               {"edge_types", "flattened", "heads", "attention_dim", "fc_dim", "layers",
                "use_gcn", "gcn_dim"},
               "encoder.");
    if (e.contains("edge_types")) {
      c.encoder.edge_types.clear();
      for (const auto& name : e.at("edge_types")) {
        auto t = graph::edge_type_from_name(name.get<std::string>());
        require(t.has_value(), "config: unknown edge type '", name.get<std::string>(), "'");
        c.encoder.edge_types.push_back(*t);
      }
    }
    c.encoder.flattened = e.value("flattened", c.encoder.flattened);
    c.encoder.heads = e.value("heads", c.encoder.heads);
    c.encoder.attention_dim = e.value("attention_dim", c.encoder.attention_dim);
    c.encoder.fc_dim = e.value("fc_dim", c.encoder.fc_dim);
    c.encoder.layers = e.value("layers", c.encoder.layers);
    c.encoder.use_gcn = e.value("use_gcn", c.encoder.use_gcn);
    c.encoder.gcn_dim = e.value("gcn_dim", c.encoder.gcn_dim);
  }
  c.input_dim = j.value("input_dim", c.input_dim);
  c.gru_dim = j.value("gru_dim", c.gru_dim);
  c.output_dim = j.value("output_dim", c.output_dim);
  c.validate();
  return c;
}

/// Normalized form: parse then re-serialize; normalize(serialize(normalize))
/// is the identity.
inline nlohmann::json normalize_model_config(const nlohmann::json& j) {
  return model_config_to_json(parse_model_config(j));
}

inline ModelConfig load_model_config(const std::string& path) {
  return parse_model_config(load_json(path));
}

// ---- train config -----------------------------------------------------------

inline TrainConfig parse_train_config(const nlohmann::json& j) {
  check_keys(j,
             {"huber_delta", "batch_size", "max_epochs", "anneal_factor", "anneal_patience",
              "early_stop_patience", "improvement_tolerance", "learning_rate"},
             "train.");
  TrainConfig t;
  t.huber_delta = j.value("huber_delta", t.huber_delta);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.max_epochs = j.value("max_epochs", t.max_epochs);
  t.anneal_factor = j.value("anneal_factor", t.anneal_factor);
  t.anneal_patience = j.value("anneal_patience", t.anneal_patience);
  t.early_stop_patience = j.value("early_stop_patience", t.early_stop_patience);
  t.improvement_tolerance = j.value("improvement_tolerance", t.improvement_tolerance);
  t.learning_rate = j.value("learning_rate", t.learning_rate);
  t.validate();
  return t;
}

inline nlohmann::json train_config_to_json(const TrainConfig& t) {
  return {{"huber_delta", t.huber_delta},
          {"batch_size", t.batch_size},
          {"max_epochs", t.max_epochs},
          {"anneal_factor", t.anneal_factor},
          {"anneal_patience", t.anneal_patience},
          {"early_stop_patience", t.early_stop_patience},
          {"improvement_tolerance", t.improvement_tolerance},
          {"learning_rate", t.learning_rate}};
}

// ---- suite config -----------------------------------------------------------

struct SuiteDocument {
  SuiteConfig suite;
  std::size_t split_train = 20;
  std::size_t split_validation = 4;
  std::size_t split_test = 4;
};

inline SuiteDocument parse_suite_config(const nlohmann::json& j) {
  check_keys(j, {"base", "train", "seeds", "split", "specs", "include_baseline"}, "");
  SuiteDocument doc;
  ModelConfig base;
  if (j.contains("base")) base = parse_model_config(j.at("base"));
  if (j.contains("train")) doc.suite.train = parse_train_config(j.at("train"));
  if (j.contains("seeds")) doc.suite.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  doc.suite.include_baseline = j.value("include_baseline", true);
  if (j.contains("split")) {
    const auto& s = j.at("split");
    check_keys(s, {"train", "validation", "test"}, "split.");
    doc.split_train = s.value("train", doc.split_train);
    doc.split_validation = s.value("validation", doc.split_validation);
    doc.split_test = s.value("test", doc.split_test);
  }
  require(j.contains("specs") && j.at("specs").is_array() && !j.at("specs").empty(),
          "config: suite needs a non-empty 'specs' array");
  for (const auto& sj : j.at("specs")) {
    check_keys(sj, {"name", "edge_types", "flattened", "heads", "attention_dim", "gcn"},
               "specs[].");
    ExperimentSpec spec;
    spec.name = sj.at("name").get<std::string>();
    spec.model = base;
    require(sj.contains("edge_types"), "config: spec '", spec.name, "' needs edge_types");
    spec.model.encoder.edge_types.clear();
    for (const auto& name : sj.at("edge_types")) {
      auto t = graph::edge_type_from_name(name.get<std::string>());
      require(t.has_value(), "config: unknown edge type '", name.get<std::string>(), "'");
      spec.model.encoder.edge_types.push_back(*t);
    }
    spec.model.encoder.flattened = sj.value("flattened", false);
    spec.model.encoder.use_gcn = sj.value("gcn", false);
    if (sj.contains("heads")) spec.model.encoder.heads = sj.at("heads").get<std::size_t>();
    if (sj.contains("attention_dim"))
      spec.model.encoder.attention_dim = sj.at("attention_dim").get<std::size_t>();
    spec.model.validate();
    doc.suite.specs.push_back(std::move(spec));
  }
  return doc;
}

inline SuiteDocument load_suite_config(const std::string& path) {
  return parse_suite_config(load_json(path));
}

/// Hash of a normalized JSON document, recorded in manifests so artifacts
/// name the exact configuration that produced them.
inline std::string config_hash(const nlohmann::json& j) { return hex64(fnv1a(j.dump())); }

}  // namespace laneflow::config
