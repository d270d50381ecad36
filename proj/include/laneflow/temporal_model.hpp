#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "laneflow/graph_encoder.hpp"

namespace laneflow::model {

using ad::BoundParams;
using ad::MaskRef;
using ad::ParamStore;
using ad::Tape;
using ad::Value;

/// Complete model configuration: graph encoder stack plus temporal stack.
struct ModelConfig {
  gnn::GraphEncoderConfig encoder;
  std::size_t input_dim = 6;
  std::size_t gru_dim = 128;
  std::size_t output_dim = 2;

  void validate() const {
    encoder.validate();
    require(input_dim >= 1 && gru_dim >= 1 && output_dim >= 1,
            "model config: dims must be >= 1");
  }
};

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
  nlohmann::json j;
  j["encoder"] = {{"edge_types", nlohmann::json::array()},
                  {"flattened", c.encoder.flattened},
                  {"heads", c.encoder.heads},
                  {"attention_dim", c.encoder.attention_dim},
                  {"fc_dim", c.encoder.fc_dim},
                  {"layers", c.encoder.layers},
                  {"use_gcn", c.encoder.use_gcn},
                  {"gcn_dim", c.encoder.gcn_dim}};
  for (auto t : c.encoder.edge_types)
    j["encoder"]["edge_types"].push_back(graph::edge_type_name(t));
  j["input_dim"] = c.input_dim;
  j["gru_dim"] = c.gru_dim;
  j["output_dim"] = c.output_dim;
  return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  const auto& e = j.at("encoder");
  c.encoder.edge_types.clear();
  for (const auto& name : e.at("edge_types")) {
    auto t = graph::edge_type_from_name(name.get<std::string>());
    require(t.has_value(), "model config: unknown edge type '", name.get<std::string>(), "'");
    c.encoder.edge_types.push_back(*t);
  }
  c.encoder.flattened = e.at("flattened").get<bool>();
  c.encoder.heads = e.at("heads").get<std::size_t>();
  c.encoder.attention_dim = e.at("attention_dim").get<std::size_t>();
  c.encoder.fc_dim = e.at("fc_dim").get<std::size_t>();
  c.encoder.layers = e.at("layers").get<std::size_t>();
  c.encoder.use_gcn = e.at("use_gcn").get<bool>();
  c.encoder.gcn_dim = e.at("gcn_dim").get<std::size_t>();
  c.input_dim = j.at("input_dim").get<std::size_t>();
  c.gru_dim = j.at("gru_dim").get<std::size_t>();
  c.output_dim = j.at("output_dim").get<std::size_t>();
  c.validate();
  return c;
}

// ---- parameters -----------------------------------------------------------

inline void add_gru_params(ParamStore& store, const std::string& prefix, std::size_t input_dim,
                           std::size_t hidden, Rng& rng) {
  for (const char* gate : {"z", "r", "h"}) {
    store.add(prefix + "w" + gate,
              gnn::detail::glorot(rng, {hidden, input_dim}, input_dim, hidden));
    store.add(prefix + "u" + gate, gnn::detail::glorot(rng, {hidden, hidden}, hidden, hidden));
    store.add(prefix + "b" + gate, Tensor::zeros({hidden}));
  }
}

/// Registers the full model: encoder stack, forward GRU, causal attention,
/// decoder GRU, output head.
inline ParamStore build_model_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ParamStore store;
  Rng rng(seed);
  gnn::add_encoder_params(store, config.encoder, config.input_dim, rng);
  std::size_t H = config.gru_dim;
  add_gru_params(store, "temporal/gru1/", config.encoder.fc_dim, H, rng);
  store.add("temporal/attention/wq", gnn::detail::glorot(rng, {H, H}, H, H));
  store.add("temporal/attention/wk", gnn::detail::glorot(rng, {H, H}, H, H));
  store.add("temporal/attention/v", gnn::detail::glorot(rng, {H, 1}, H, 1));
  add_gru_params(store, "temporal/gru2/", H, H, rng);
  store.add("temporal/head/w", gnn::detail::glorot(rng, {config.output_dim, H}, H,
                                                   config.output_dim));
  store.add("temporal/head/b", Tensor::zeros({config.output_dim}));
  return store;
}

// ---- temporal forward ------------------------------------------------------

namespace detail {

struct GruWeights {
  Value wz, wr, wh, uz, ur, uh, bz, br, bh;

  static GruWeights bind(Tape& tape, const BoundParams& params, const std::string& prefix) {
    GruWeights g;
    g.wz = tape.transpose(params[prefix + "wz"]);
    g.wr = tape.transpose(params[prefix + "wr"]);
    g.wh = tape.transpose(params[prefix + "wh"]);
    g.uz = tape.transpose(params[prefix + "uz"]);
    g.ur = tape.transpose(params[prefix + "ur"]);
    g.uh = tape.transpose(params[prefix + "uh"]);
    g.bz = params[prefix + "bz"];
    g.br = params[prefix + "br"];
    g.bh = params[prefix + "bh"];
    return g;
  }

  /// One recurrence step: h = (1 - z) * h_prev + z * h_cand.
  Value step(Tape& tape, Value x, Value h_prev) const {
    Value z = tape.sigmoid(
        tape.add_row(tape.add(tape.matmul(x, wz), tape.matmul(h_prev, uz)), bz));
    Value r = tape.sigmoid(
        tape.add_row(tape.add(tape.matmul(x, wr), tape.matmul(h_prev, ur)), br));
    Value cand = tape.tanh_(tape.add_row(
        tape.add(tape.matmul(x, wh), tape.matmul(tape.mul(r, h_prev), uh)), bh));
    Value keep = tape.mul(tape.shift(tape.scale(z, -1.0), 1.0), h_prev);
    return tape.add(keep, tape.mul(z, cand));
  }
};

}  // namespace detail

/// Standard GRU over a T x input sequence; returns the T x hidden state
/// matrix. The initial state defaults to zero.
inline Value gru_forward(Tape& tape, Value sequence, const BoundParams& params,
                         const std::string& prefix, std::size_t hidden, Value h0 = {}) {
  auto weights = detail::GruWeights::bind(tape, params, prefix);
  std::size_t T = tape.value(sequence).rows();
  Value h = h0.valid() ? h0 : tape.input(Tensor::zeros({1, hidden}));
  std::vector<Value> states;
  states.reserve(T);
  for (std::size_t t = 0; t < T; ++t) {
    Value x = tape.slice_rows(sequence, t, t + 1);
    h = weights.step(tape, x, h);
    states.push_back(h);
  }
  return states.size() == 1
             ? states[0]
             : tape.concat(std::span<const Value>(states.data(), states.size()), 0);
}

/// Lower-triangular step masks shared across lanes: mask[t](s) = 1 iff s <= t.
inline std::vector<MaskRef> causal_masks(std::size_t T) {
  std::vector<MaskRef> masks;
  masks.reserve(T);
  for (std::size_t t = 0; t < T; ++t) {
    Tensor m({T, 1});
    for (std::size_t s = 0; s <= t; ++s) m[s] = 1.0;
    masks.push_back(std::make_shared<Tensor>(std::move(m)));
  }
  return masks;
}

/// Decoder GRU with additive attention over the encoded sequence, masked so
/// step t sees encodings at steps <= t only. The decoder input at t is the
/// attention context plus the encoding at t.
inline Value causal_attention_decode(Tape& tape, Value encoded, const BoundParams& params,
                                     const std::vector<MaskRef>& masks, std::size_t hidden) {
  auto gru = detail::GruWeights::bind(tape, params, "temporal/gru2/");
  Value wq = tape.transpose(params["temporal/attention/wq"]);
  Value wk = tape.transpose(params["temporal/attention/wk"]);
  Value v = params["temporal/attention/v"];
  std::size_t T = tape.value(encoded).rows();
  require(masks.size() >= T, "causal decode: mask set too small");

  Value keys = tape.matmul(encoded, wk);  // T x H
  Value h = tape.input(Tensor::zeros({1, hidden}));
  std::vector<Value> states;
  states.reserve(T);
  for (std::size_t t = 0; t < T; ++t) {
    Value query = tape.matmul(h, wq);                                  // 1 x H
    Value scores = tape.matmul(tape.tanh_(tape.add_row(keys, query)), v);  // T x 1
    Value beta = tape.masked_softmax(scores, masks[t], 0);
    Value context = tape.matmul(tape.transpose(beta), encoded);  // 1 x H
    Value enc_t = tape.slice_rows(encoded, t, t + 1);
    Value x = tape.add(context, enc_t);
    h = gru.step(tape, x, h);
    states.push_back(h);
  }
  return states.size() == 1
             ? states[0]
             : tape.concat(std::span<const Value>(states.data(), states.size()), 0);
}

// ---- full model ------------------------------------------------------------

/// Input tensor layout: lanes x T x features (row-major).
inline Tensor time_slice(const Tensor& x, std::size_t t) {
  std::size_t n = x.dim(0), T = x.dim(1), f = x.dim(2);
  Tensor out({n, f});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < f; ++c) out.at(i, c) = x[(i * T + t) * f + c];
  return out;
}

struct ModelOutput {
  std::vector<Value> per_lane;  // each T x output_dim
  Value flat;                   // (lanes * T) x output_dim, lane-major
};

/// Full forward pass: per-timestep graph encoding, per-lane temporal stack,
/// nonnegative output head.
inline ModelOutput model_forward(Tape& tape, const Tensor& x, const gnn::EncoderInputs& inputs,
                                 const BoundParams& params, const ModelConfig& config) {
  require(x.rank() == 3, "model_forward: input must be lanes x T x features");
  std::size_t n = x.dim(0), T = x.dim(1);
  require(x.dim(2) == config.input_dim, "model_forward: expected ", config.input_dim,
          " features, got ", x.dim(2));
  require(inputs.n == n, "model_forward: adjacency is for ", inputs.n, " lanes, input has ", n);

  std::vector<Value> encoded;  // per timestep, n x fc_dim
  encoded.reserve(T);
  for (std::size_t t = 0; t < T; ++t)
    encoded.push_back(
        gnn::encoder_stack(tape, tape.input(time_slice(x, t)), inputs, params, config.encoder));

  auto masks = causal_masks(T);
  Value head_w = tape.transpose(params["temporal/head/w"]);
  ModelOutput out;
  out.per_lane.reserve(n);
  for (std::size_t lane = 0; lane < n; ++lane) {
    std::vector<Value> rows;
    rows.reserve(T);
    for (std::size_t t = 0; t < T; ++t) rows.push_back(tape.slice_rows(encoded[t], lane, lane + 1));
    Value seq = rows.size() == 1
                    ? rows[0]
                    : tape.concat(std::span<const Value>(rows.data(), rows.size()), 0);
    Value enc = tape.relu(gru_forward(tape, seq, params, "temporal/gru1/", config.gru_dim));
    Value dec = tape.relu(causal_attention_decode(tape, enc, params, masks, config.gru_dim));
    Value pred = tape.relu(tape.add_row(tape.matmul(dec, head_w), params["temporal/head/b"]));
    out.per_lane.push_back(pred);
  }
  out.flat = out.per_lane.size() == 1
                 ? out.per_lane[0]
                 : tape.concat(std::span<const Value>(out.per_lane.data(), out.per_lane.size()), 0);
  return out;
}

/// Inference helper: returns predictions as a lanes x T x output_dim tensor.
inline Tensor model_predict(const ParamStore& store, const ModelConfig& config,
                            const gnn::EncoderInputs& inputs, const Tensor& x) {
  Tape tape;
  BoundParams params(tape, store);
  ModelOutput out = model_forward(tape, x, inputs, params, config);
  std::size_t n = x.dim(0), T = x.dim(1);
  Tensor y({n, T, config.output_dim});
  const Tensor& flat = tape.value(out.flat);
  std::copy(flat.data(), flat.data() + flat.numel(), y.data());
  return y;
}

// ---- parameter counting ----------------------------------------------------

struct ParameterCount {
  std::map<std::string, std::size_t> by_component;
  std::size_t total = 0;

  std::string report() const {
    std::string out;
    for (const auto& [k, v] : by_component) out += k + ": " + std::to_string(v) + "\n";
    out += "total: " + std::to_string(total) + "\n";
    return out;
  }
};

/// Exact learnable-scalar count with a per-component breakdown. Components
/// group the hierarchical names one level below "encoder/layerK" and
/// "temporal".
inline ParameterCount count_parameters(const ModelConfig& config) {
  ParamStore store = build_model_params(config, 0);
  ParameterCount count;
  for (std::size_t i = 0; i < store.size(); ++i) {
    const std::string& name = store.name(i);
    std::size_t first = name.find('/');
    std::size_t second = name.find('/', first + 1);
    std::string component = name.substr(0, second == std::string::npos ? name.size() : second);
    count.by_component[component] += store.tensor(i).numel();
    count.total += store.tensor(i).numel();
  }
  return count;
}

}  // namespace laneflow::model
