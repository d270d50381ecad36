#pragma once

#include <memory>
#include <string>
#include <vector>

#include "laneflow/autodiff.hpp"
#include "laneflow/lane_graph.hpp"

namespace laneflow::gnn {

using ad::BoundParams;
using ad::MaskRef;
using ad::ParamStore;
using ad::Tape;
using ad::Value;
using graph::EdgeType;
using graph::MultiAdjacency;

inline constexpr double kLeakySlope = 0.2;
inline constexpr double kLayerNormEps = 1e-5;

/// Configuration of the graph-encoder stack (attention layers by default,
/// GCN sublayers for the baseline variant).
struct GraphEncoderConfig {
  std::vector<EdgeType> edge_types = {EdgeType::Self, EdgeType::Downstream, EdgeType::Upstream,
                                      EdgeType::Neighbor};
  bool flattened = false;  // union the edge types into one relation
  std::size_t heads = 4;
  std::size_t attention_dim = 96;  // per-head feature dim F
  std::size_t fc_dim = 128;
  std::size_t layers = 2;
  bool use_gcn = false;     // replace attention sublayers with GCN sublayers
  std::size_t gcn_dim = 256;

  std::size_t depth() const { return (flattened || use_gcn) ? 1 : edge_types.size(); }

  std::string edge_label(std::size_t d) const {
    if (use_gcn) return "gcn";
    if (flattened) return "any";
    return graph::edge_type_name(edge_types.at(d));
  }

  void validate() const {
    require(!edge_types.empty(), "encoder config: edge_types must be non-empty");
    require(heads >= 1, "encoder config: heads must be >= 1");
    require(layers >= 1, "encoder config: layers must be >= 1");
    require(attention_dim >= 1 && fc_dim >= 1, "encoder config: dims must be >= 1");
  }
};

/// Kipf-style renormalized adjacency: D^{-1/2} (A + I) D^{-1/2} with D the
/// degree matrix of A + I. A must be symmetric 0/1.
inline Tensor gcn_renormalize(const Tensor& a_sym) {
  std::size_t n = a_sym.rows();
  require(a_sym.cols() == n, "gcn_renormalize: square matrix required");
  Tensor with_self = a_sym;
  for (std::size_t i = 0; i < n; ++i) with_self.at(i, i) = 1.0;
  std::vector<double> inv_sqrt_deg(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double deg = 0.0;
    for (std::size_t j = 0; j < n; ++j) deg += with_self.at(i, j);
    inv_sqrt_deg[i] = 1.0 / std::sqrt(deg);
  }
  Tensor out({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out.at(i, j) = inv_sqrt_deg[i] * with_self.at(i, j) * inv_sqrt_deg[j];
  return out;
}

/// Precomputed per-sample encoder inputs: one attention mask per edge type,
/// or the renormalized union matrix for the GCN variant.
struct EncoderInputs {
  std::vector<MaskRef> masks;                 // attention variants
  std::shared_ptr<const Tensor> gcn_matrix;   // GCN variant
  std::size_t n = 0;
};

inline EncoderInputs prepare_encoder_inputs(const MultiAdjacency& adj,
                                            const GraphEncoderConfig& config) {
  EncoderInputs in;
  in.n = adj.n;
  if (config.use_gcn) {
    in.gcn_matrix = std::make_shared<Tensor>(gcn_renormalize(graph::union_symmetric(adj)));
    return in;
  }
  require(adj.depth() == config.depth(), "encoder: adjacency depth ", adj.depth(),
          " does not match configured depth ", config.depth());
  for (const Tensor& m : adj.matrices) in.masks.push_back(std::make_shared<Tensor>(m));
  return in;
}

// ---- parameter registration ---------------------------------------------

namespace detail {

inline Tensor glorot(Rng& rng, std::vector<std::size_t> shape, std::size_t fan_in,
                     std::size_t fan_out) {
  double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(-limit, limit);
  return t;
}

}  // namespace detail

/// Registers all encoder parameters under "encoder/layer<i>/...".
inline void add_encoder_params(ParamStore& store, const GraphEncoderConfig& config,
                               std::size_t input_dim, Rng& rng) {
  config.validate();
  std::size_t in = input_dim;
  for (std::size_t l = 0; l < config.layers; ++l) {
    std::string prefix = "encoder/layer" + std::to_string(l) + "/";
    std::size_t att_out;
    if (config.use_gcn) {
      store.add(prefix + "gcn/w",
                detail::glorot(rng, {config.gcn_dim, in}, in, config.gcn_dim));
      att_out = config.gcn_dim;
    } else {
      std::size_t F = config.attention_dim;
      for (std::size_t h = 0; h < config.heads; ++h) {
        std::string hp = prefix + "head" + std::to_string(h) + "/";
        store.add(hp + "W", detail::glorot(rng, {F, in}, in, F));
        for (std::size_t d = 0; d < config.depth(); ++d) {
          std::string dp = hp + config.edge_label(d) + "/";
          store.add(dp + "a_self", detail::glorot(rng, {F, 1}, 2 * F, 1));
          store.add(dp + "a_peer", detail::glorot(rng, {F, 1}, 2 * F, 1));
          store.add(dp + "b", Tensor::zeros({F}));
        }
      }
      att_out = config.heads * config.depth() * F;
    }
    store.add(prefix + "ln1/gain", Tensor::full({att_out}, 1.0));
    store.add(prefix + "ln1/bias", Tensor::zeros({att_out}));
    store.add(prefix + "fc/w", detail::glorot(rng, {config.fc_dim, att_out}, att_out,
                                              config.fc_dim));
    store.add(prefix + "fc/b", Tensor::zeros({config.fc_dim}));
    store.add(prefix + "ln2/gain", Tensor::full({config.fc_dim}, 1.0));
    store.add(prefix + "ln2/bias", Tensor::zeros({config.fc_dim}));
    in = config.fc_dim;
  }
}

// ---- forward passes -------------------------------------------------------

/// Attention scores for one edge type: score(i,j) =
/// LeakyReLU(a_self . f_i + a_peer . f_j), dense; masking happens in the
/// subsequent softmax.
inline Value attention_scores(Tape& tape, Value f_emb, Value a_self, Value a_peer) {
  Value s_self = tape.matmul(f_emb, a_self);  // n x 1
  Value s_peer = tape.matmul(f_emb, a_peer);  // n x 1
  return tape.leaky_relu(tape.outer_add(s_self, s_peer), kLeakySlope);
}

/// One attention head over all edge types: per type, softmax-weighted
/// average of embedded features plus the type bias; outputs the per-type
/// results concatenated, n x (D*F). Empty d-neighborhoods produce exactly
/// the bias row.
inline Value edge_type_attention(Tape& tape, Value x, const EncoderInputs& inputs,
                                 const BoundParams& params, const std::string& head_prefix,
                                 const GraphEncoderConfig& config) {
  Value f_emb = tape.matmul(x, tape.transpose(params[head_prefix + "W"]));
  std::vector<Value> per_type;
  per_type.reserve(config.depth());
  for (std::size_t d = 0; d < config.depth(); ++d) {
    std::string dp = head_prefix + config.edge_label(d) + "/";
    Value scores = attention_scores(tape, f_emb, params[dp + "a_self"], params[dp + "a_peer"]);
    Value alpha = tape.masked_softmax(scores, inputs.masks[d], 1);
    Value h = tape.add_row(tape.matmul(alpha, f_emb), params[dp + "b"]);
    per_type.push_back(h);
  }
  return per_type.size() == 1
             ? per_type[0]
             : tape.concat(std::span<const Value>(per_type.data(), per_type.size()), 1);
}

/// All heads in parallel, outputs concatenated head-major: n x (H*D*F).
inline Value multi_head_attention(Tape& tape, Value x, const EncoderInputs& inputs,
                                  const BoundParams& params, const std::string& layer_prefix,
                                  const GraphEncoderConfig& config) {
  std::vector<Value> per_head;
  per_head.reserve(config.heads);
  for (std::size_t h = 0; h < config.heads; ++h)
    per_head.push_back(edge_type_attention(
        tape, x, inputs, params, layer_prefix + "head" + std::to_string(h) + "/", config));
  return per_head.size() == 1
             ? per_head[0]
             : tape.concat(std::span<const Value>(per_head.data(), per_head.size()), 1);
}

/// GCN sublayer as a standalone op: ReLU(A_hat X W^T) with the renormalized
/// adjacency.
inline Value gcn_layer(Tape& tape, Value x, Value a_hat, Value w_gcn) {
  return tape.relu(tape.matmul(a_hat, tape.matmul(x, tape.transpose(w_gcn))));
}

/// Full encoder stack: per layer, attention (or GCN) sublayer, layer norm,
/// ReLU, fully-connected sublayer, layer norm, ReLU. Output is n x fc_dim.
inline Value encoder_stack(Tape& tape, Value x, const EncoderInputs& inputs,
                           const BoundParams& params, const GraphEncoderConfig& config) {
  Value cur = x;
  for (std::size_t l = 0; l < config.layers; ++l) {
    std::string prefix = "encoder/layer" + std::to_string(l) + "/";
    Value att;
    if (config.use_gcn) {
      Value a_hat = tape.input(*inputs.gcn_matrix);
      att = tape.matmul(a_hat, tape.matmul(cur, tape.transpose(params[prefix + "gcn/w"])));
    } else {
      att = multi_head_attention(tape, cur, inputs, params, prefix, config);
    }
    Value n1 = tape.layer_norm(att, params[prefix + "ln1/gain"], params[prefix + "ln1/bias"],
                               kLayerNormEps);
    Value a1 = tape.relu(n1);
    Value fc = tape.add_row(tape.matmul(a1, tape.transpose(params[prefix + "fc/w"])),
                            params[prefix + "fc/b"]);
    Value n2 = tape.layer_norm(fc, params[prefix + "ln2/gain"], params[prefix + "ln2/bias"],
                               kLayerNormEps);
    cur = tape.relu(n2);
  }
  return cur;
}

}  // namespace laneflow::gnn
