#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "laneflow/checkpoint.hpp"
#include "laneflow/temporal_model.hpp"

using namespace laneflow;
using namespace laneflow::ad;
using namespace laneflow::model;
using graph::EdgeType;

namespace {

Tensor random_tensor(Rng& rng, std::vector<std::size_t> shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

ModelConfig tiny_model_config(std::size_t depth = 2) {
  ModelConfig c;
  c.encoder.edge_types.assign(depth, EdgeType::Self);
  std::vector<EdgeType> pool = {EdgeType::Self, EdgeType::Downstream, EdgeType::Upstream,
                                EdgeType::Neighbor};
  for (std::size_t d = 0; d < depth; ++d) c.encoder.edge_types[d] = pool[d];
  c.encoder.heads = 2;
  c.encoder.attention_dim = 3;
  c.encoder.fc_dim = 4;
  c.encoder.layers = 2;
  c.input_dim = 4;
  c.gru_dim = 4;
  c.output_dim = 2;
  return c;
}

ModelConfig paper_model_config(std::size_t depth, bool flattened = false) {
  ModelConfig c;
  c.encoder.edge_types = {EdgeType::Self, EdgeType::Downstream, EdgeType::Upstream,
                          EdgeType::Neighbor};
  c.encoder.edge_types.resize(std::max<std::size_t>(depth, 1));
  c.encoder.flattened = flattened;
  c.encoder.heads = 4;
  c.encoder.attention_dim = 96;
  c.encoder.fc_dim = 128;
  c.encoder.layers = 2;
  c.input_dim = 6;
  c.gru_dim = 128;
  c.output_dim = 2;
  return c;
}

gnn::EncoderInputs self_only_inputs(std::size_t n) {
  graph::MultiAdjacency adj;
  adj.n = n;
  adj.types = {EdgeType::Self};
  adj.matrices.push_back(Tensor::identity(n));
  gnn::GraphEncoderConfig cfg;
  cfg.edge_types = {EdgeType::Self};
  return gnn::prepare_encoder_inputs(adj, cfg);
}

gnn::EncoderInputs random_inputs(Rng& rng, const gnn::GraphEncoderConfig& cfg, std::size_t n,
                                 double density = 0.4) {
  graph::MultiAdjacency adj;
  adj.n = n;
  adj.types = cfg.edge_types;
  for (std::size_t d = 0; d < cfg.edge_types.size(); ++d) {
    if (cfg.edge_types[d] == EdgeType::Self) {
      adj.matrices.push_back(Tensor::identity(n));
      continue;
    }
    Tensor m({n, n});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j && rng.uniform() < density) m.at(i, j) = 1.0;
    adj.matrices.push_back(std::move(m));
  }
  if (cfg.flattened) adj = graph::flatten(adj);
  return gnn::prepare_encoder_inputs(adj, cfg);
}

}  // namespace

TEST_CASE("gru recurrence") {
  SECTION("all-zero weights with initial state c decay as c * 0.5^t") {
    ModelConfig cfg = tiny_model_config(1);
    ParamStore store = build_model_params(cfg, 1);
    for (const char* g : {"wz", "wr", "wh", "uz", "ur", "uh", "bz", "br", "bh"})
      store.get(std::string("temporal/gru1/") + g) =
          Tensor::zeros(store.get(std::string("temporal/gru1/") + g).shape());
    Tape tape;
    BoundParams params(tape, store);
    const double c = 0.8;
    Value h0 = tape.input(Tensor::full({1, cfg.gru_dim}, c));
    Value seq = tape.input(Tensor::zeros({5, cfg.encoder.fc_dim}));
    Value states = gru_forward(tape, seq, params, "temporal/gru1/", cfg.gru_dim, h0);
    for (std::size_t t = 0; t < 5; ++t)
      for (std::size_t k = 0; k < cfg.gru_dim; ++k)
        REQUIRE(tape.value(states).at(t, k) ==
                Catch::Approx(c * std::pow(0.5, double(t + 1))).margin(1e-12));
  }

  SECTION("zero input, zero state, zero biases stay zero") {
    ModelConfig cfg = tiny_model_config(1);
    ParamStore store = build_model_params(cfg, 2);
    store.get("temporal/gru1/bz") = Tensor::zeros({cfg.gru_dim});
    store.get("temporal/gru1/br") = Tensor::zeros({cfg.gru_dim});
    store.get("temporal/gru1/bh") = Tensor::zeros({cfg.gru_dim});
    Tape tape;
    BoundParams params(tape, store);
    Value seq = tape.input(Tensor::zeros({4, cfg.encoder.fc_dim}));
    Value states = gru_forward(tape, seq, params, "temporal/gru1/", cfg.gru_dim);
    for (double v : tape.value(states).values()) REQUIRE(v == 0.0);
  }

  SECTION("gradient through five steps matches finite differences") {
    Rng rng(3);
    ModelConfig cfg = tiny_model_config(1);
    ParamStore store = build_model_params(cfg, 4);
    std::vector<std::string> gru_names;
    for (std::size_t i = 0; i < store.size(); ++i)
      if (store.name(i).rfind("temporal/gru1/", 0) == 0) gru_names.push_back(store.name(i));

    ScalarFn fn = [&](Tape& tape, const std::vector<Value>& vs) {
      // wrap: vs[0] is the sequence, the rest are gru1 parameters
      ParamStore probe = build_model_params(cfg, 4);
      std::vector<Value> values;
      std::size_t gi = 1;
      for (std::size_t i = 0; i < probe.size(); ++i) {
        if (probe.name(i).rfind("temporal/gru1/", 0) == 0)
          values.push_back(vs[gi++]);
        else
          values.push_back(tape.input(probe.tensor(i)));
      }
      BoundParams params(probe, values);
      Value states = gru_forward(tape, vs[0], params, "temporal/gru1/", cfg.gru_dim);
      return tape.reduce_mean(tape.tanh_(states));
    };
    std::vector<Tensor> probe_in;
    probe_in.push_back(random_tensor(rng, {5, cfg.encoder.fc_dim}));
    for (const auto& name : gru_names) probe_in.push_back(store.get(name));
    double err = grad_check(fn, probe_in);
    INFO("max relative error " << err);
    CHECK(err <= 1e-4);
  }
}

TEST_CASE("causal attention decoder") {
  Rng rng(7);
  ModelConfig cfg = tiny_model_config(1);
  ParamStore store = build_model_params(cfg, 9);

  SECTION("first step attends to the first encoding only") {
    // With one timestep the context must equal the encoding, so the decoder
    // state equals a plain GRU step on (encoding + encoding).
    Tensor enc = random_tensor(rng, {1, cfg.gru_dim});
    Tape tape;
    BoundParams params(tape, store);
    Value dec = causal_attention_decode(tape, tape.input(enc), params, causal_masks(1),
                                        cfg.gru_dim);
    auto gru = model::detail::GruWeights::bind(tape, params, "temporal/gru2/");
    Tensor doubled = enc;
    for (double& v : doubled.values()) v *= 2.0;
    Value expected =
        gru.step(tape, tape.input(doubled), tape.input(Tensor::zeros({1, cfg.gru_dim})));
    REQUIRE(tape.value(dec).values() == tape.value(expected).values());
  }

  SECTION("future encodings cannot influence past outputs (bitwise)") {
    for (int trial = 0; trial < 5; ++trial) {
      std::size_t T = 6;
      Tensor enc = random_tensor(rng, {T, cfg.gru_dim});
      auto run = [&](const Tensor& e) {
        Tape tape;
        BoundParams params(tape, store);
        return tape.value(
            causal_attention_decode(tape, tape.input(e), params, causal_masks(T), cfg.gru_dim));
      };
      Tensor base = run(enc);
      std::size_t t_perturb = 2 + rng.uniform_index(T - 2);
      Tensor moved_in = enc;
      for (std::size_t k = 0; k < cfg.gru_dim; ++k) moved_in.at(t_perturb, k) += 1.3;
      Tensor moved = run(moved_in);
      for (std::size_t t = 0; t < t_perturb; ++t)
        for (std::size_t k = 0; k < cfg.gru_dim; ++k)
          REQUIRE(moved.at(t, k) == base.at(t, k));
      bool later_changed = false;
      for (std::size_t t = t_perturb; t < T; ++t)
        for (std::size_t k = 0; k < cfg.gru_dim; ++k)
          later_changed = later_changed || moved.at(t, k) != base.at(t, k);
      CHECK(later_changed);
    }
  }

  SECTION("gradient matches finite differences") {
    ScalarFn fn = [&](Tape& tape, const std::vector<Value>& vs) {
      ParamStore probe = build_model_params(cfg, 9);
      std::vector<Value> values;
      std::size_t gi = 1;
      for (std::size_t i = 0; i < probe.size(); ++i) {
        const std::string& name = probe.name(i);
        if (name.rfind("temporal/gru2/", 0) == 0 || name.rfind("temporal/attention/", 0) == 0)
          values.push_back(vs[gi++]);
        else
          values.push_back(tape.input(probe.tensor(i)));
      }
      BoundParams params(probe, values);
      Value dec = causal_attention_decode(tape, vs[0], params, causal_masks(4), cfg.gru_dim);
      return tape.reduce_mean(tape.tanh_(dec));
    };
    std::vector<Tensor> probe_in;
    probe_in.push_back(random_tensor(rng, {4, cfg.gru_dim}));
    for (std::size_t i = 0; i < store.size(); ++i) {
      const std::string& name = store.name(i);
      if (name.rfind("temporal/gru2/", 0) == 0 || name.rfind("temporal/attention/", 0) == 0)
        probe_in.push_back(store.tensor(i));
    }
    double err = grad_check(fn, probe_in);
    INFO("max relative error " << err);
    CHECK(err <= 1e-4);
  }
}

TEST_CASE("full model forward") {
  Rng rng(11);
  ModelConfig cfg = tiny_model_config(2);
  ParamStore store = build_model_params(cfg, 21);

  SECTION("outputs are nonnegative") {
    auto inputs = random_inputs(rng, cfg.encoder, 5);
    Tensor x = random_tensor(rng, {5, 4, cfg.input_dim}, -3.0, 3.0);
    Tensor y = model_predict(store, cfg, inputs, x);
    for (double v : y.values()) REQUIRE(v >= 0.0);
  }

  SECTION("self-only adjacency decouples lanes (bitwise)") {
    ModelConfig self_cfg = tiny_model_config(1);
    ParamStore self_store = build_model_params(self_cfg, 5);
    auto inputs = self_only_inputs(4);
    Tensor x = random_tensor(rng, {4, 3, self_cfg.input_dim});
    Tensor base = model_predict(self_store, self_cfg, inputs, x);
    Tensor x2 = x;
    for (std::size_t t = 0; t < 3; ++t)
      for (std::size_t c = 0; c < self_cfg.input_dim; ++c) x2[(1 * 3 + t) * self_cfg.input_dim + c] += 0.9;
    Tensor moved = model_predict(self_store, self_cfg, inputs, x2);
    for (std::size_t lane = 0; lane < 4; ++lane) {
      if (lane == 1) continue;
      for (std::size_t k = 0; k < 3 * self_cfg.output_dim; ++k)
        REQUIRE(moved[(lane * 3) * self_cfg.output_dim + k] ==
                base[(lane * 3) * self_cfg.output_dim + k]);
    }
  }

  SECTION("temporal causality at the model level (bitwise)") {
    auto inputs = random_inputs(rng, cfg.encoder, 4);
    std::size_t T = 5;
    Tensor x = random_tensor(rng, {4, T, cfg.input_dim});
    Tensor base = model_predict(store, cfg, inputs, x);
    std::size_t t_perturb = 3;
    Tensor x2 = x;
    for (std::size_t lane = 0; lane < 4; ++lane)
      for (std::size_t t = t_perturb; t < T; ++t)
        for (std::size_t c = 0; c < cfg.input_dim; ++c)
          x2[(lane * T + t) * cfg.input_dim + c] -= 0.4;
    Tensor moved = model_predict(store, cfg, inputs, x2);
    for (std::size_t lane = 0; lane < 4; ++lane)
      for (std::size_t t = 0; t < t_perturb; ++t)
        for (std::size_t c = 0; c < cfg.output_dim; ++c)
          REQUIRE(moved[(lane * T + t) * cfg.output_dim + c] ==
                  base[(lane * T + t) * cfg.output_dim + c]);
  }

  SECTION("the same parameters evaluate on a different-size graph") {
    auto small = random_inputs(rng, cfg.encoder, 4);
    auto large = random_inputs(rng, cfg.encoder, 9);
    Tensor xs = random_tensor(rng, {4, 3, cfg.input_dim});
    Tensor xl = random_tensor(rng, {9, 3, cfg.input_dim});
    Tensor ys = model_predict(store, cfg, small, xs);
    Tensor yl = model_predict(store, cfg, large, xl);
    CHECK(ys.dim(0) == 4);
    CHECK(yl.dim(0) == 9);
  }

  SECTION("full-model gradient on a tiny instance") {
    ModelConfig small = tiny_model_config(2);
    small.encoder.heads = 1;
    small.encoder.attention_dim = 2;
    small.encoder.fc_dim = 3;
    small.gru_dim = 3;
    ParamStore pstore = build_model_params(small, 31);
    auto inputs = random_inputs(rng, small.encoder, 3);
    Tensor x = random_tensor(rng, {3, 3, small.input_dim});
    Tensor target({3 * 3, 2});
    Tensor mask = Tensor::full({3 * 3, 2}, 1.0);
    for (double& v : target.values()) v = rng.uniform(0.0, 2.0);

    ScalarFn fn = [&](Tape& tape, const std::vector<Value>& vs) {
      BoundParams params(pstore, vs);
      ModelOutput out = model_forward(tape, x, inputs, params, small);
      return tape.huber(out.flat, std::make_shared<Tensor>(target),
                        std::make_shared<Tensor>(mask), 1.0);
    };
    std::vector<Tensor> probe;
    for (std::size_t i = 0; i < pstore.size(); ++i) probe.push_back(pstore.tensor(i));
    double err = grad_check(fn, probe);
    INFO("max relative error " << err);
    CHECK(err <= 1e-4);
  }
}

TEST_CASE("parameter counts reconcile with the published totals") {
  // Published reference totals for the accumulation rows.
  const std::size_t published[4] = {385027, 486403, 587779, 689155};
  std::size_t ours[4];
  for (std::size_t d = 1; d <= 4; ++d) {
    auto count = count_parameters(paper_model_config(d));
    ours[d - 1] = count.total;
    double rel = std::abs(static_cast<double>(count.total) -
                          static_cast<double>(published[d - 1])) /
                 static_cast<double>(published[d - 1]);
    INFO("depth " << d << ": ours " << count.total << " vs " << published[d - 1] << " ("
                  << rel * 100 << "%)\n"
                  << count.report());
    CHECK(rel <= 0.05);
  }
  // Equal increments between consecutive rows hold exactly for our model.
  std::size_t inc = ours[1] - ours[0];
  CHECK(ours[2] - ours[1] == inc);
  CHECK(ours[3] - ours[2] == inc);

  // Flattened adjacency has exactly the A=I count.
  auto flat = count_parameters(paper_model_config(4, true));
  CHECK(flat.total == ours[0]);

  // The breakdown localizes components and sums to the total.
  auto count = count_parameters(paper_model_config(4));
  std::size_t sum = 0;
  for (const auto& [k, v] : count.by_component) sum += v;
  CHECK(sum == count.total);
  CHECK(count.by_component.count("temporal/gru1") == 1);
  CHECK(count.by_component.count("encoder/layer0") == 1);
}

TEST_CASE("checkpoint round trip") {
  Rng rng(13);
  ModelConfig cfg = tiny_model_config(2);
  ParamStore store = build_model_params(cfg, 77);
  auto dir = std::filesystem::temp_directory_path();
  auto path = (dir / "laneflow_ckpt_test.json").string();

  SECTION("save then load reproduces forward outputs exactly") {
    save_checkpoint(store, cfg, path);
    auto loaded = load_checkpoint(path);
    auto inputs = random_inputs(rng, cfg.encoder, 4);
    Tensor x = random_tensor(rng, {4, 3, cfg.input_dim});
    Tensor a = model_predict(store, cfg, inputs, x);
    Tensor b = model_predict(loaded.params, loaded.config, inputs, x);
    REQUIRE(a.values() == b.values());
    std::filesystem::remove(path);
  }

  SECTION("truncated file reports corruption") {
    save_checkpoint(store, cfg, path);
    auto size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, size / 2);
    CHECK_THROWS_WITH(load_checkpoint(path),
                      Catch::Matchers::ContainsSubstring("corrupt or truncated"));
    std::filesystem::remove(path);
  }

  SECTION("a checkpoint trained on one graph loads for another graph size") {
    save_checkpoint(store, cfg, path);
    auto loaded = load_checkpoint(path);
    auto inputs = random_inputs(rng, cfg.encoder, 11);
    Tensor x = random_tensor(rng, {11, 2, cfg.input_dim});
    Tensor y = model_predict(loaded.params, loaded.config, inputs, x);
    CHECK(y.dim(0) == 11);
    std::filesystem::remove(path);
  }
}
