#include <catch2/catch_amalgamated.hpp>

#include "laneflow/graph_encoder.hpp"

using namespace laneflow;
using namespace laneflow::ad;
using namespace laneflow::gnn;
using graph::EdgeType;
using graph::MultiAdjacency;

namespace {

Tensor random_tensor(Rng& rng, std::vector<std::size_t> shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Random directed adjacency stack over n nodes: a self matrix plus `extra`
// random relations (the last one symmetric zero-diagonal, like a neighbor
// relation).
MultiAdjacency random_adjacency(Rng& rng, std::size_t n, std::size_t extra, double density) {
  MultiAdjacency adj;
  adj.n = n;
  adj.types = {EdgeType::Self};
  adj.matrices.push_back(Tensor::identity(n));
  std::vector<EdgeType> pool = {EdgeType::Downstream, EdgeType::Upstream, EdgeType::Neighbor};
  for (std::size_t k = 0; k < extra; ++k) {
    Tensor m({n, n});
    bool symmetric = k + 1 == extra;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = symmetric ? i + 1 : 0; j < n; ++j) {
        if (i == j) continue;
        if (rng.uniform() < density) {
          m.at(i, j) = 1.0;
          if (symmetric) m.at(j, i) = 1.0;
        }
      }
    adj.types.push_back(pool[k % pool.size()]);
    adj.matrices.push_back(std::move(m));
  }
  return adj;
}

GraphEncoderConfig tiny_config(std::size_t depth, std::size_t heads = 2) {
  GraphEncoderConfig c;
  c.edge_types.resize(depth);
  std::vector<EdgeType> pool = {EdgeType::Self, EdgeType::Downstream, EdgeType::Upstream,
                                EdgeType::Neighbor};
  for (std::size_t d = 0; d < depth; ++d) c.edge_types[d] = pool[d];
  c.heads = heads;
  c.attention_dim = 3;
  c.fc_dim = 4;
  c.layers = 2;
  return c;
}

ParamStore make_store(const GraphEncoderConfig& config, std::size_t input_dim, std::uint64_t seed) {
  ParamStore store;
  Rng rng(seed);
  add_encoder_params(store, config, input_dim, rng);
  return store;
}

Tensor run_encoder(const ParamStore& store, const GraphEncoderConfig& config,
                   const MultiAdjacency& adj, const Tensor& x) {
  Tape tape;
  BoundParams params(tape, store);
  auto inputs = prepare_encoder_inputs(adj, config);
  Value out = encoder_stack(tape, tape.input(x), inputs, params, config);
  return tape.value(out);
}

}  // namespace

TEST_CASE("attention scores") {
  Rng rng(5);
  Tape tape;
  Value f = tape.input(random_tensor(rng, {4, 3}));

  SECTION("zero attention vectors give zero scores") {
    Value s = attention_scores(tape, f, tape.input(Tensor::zeros({3, 1})),
                               tape.input(Tensor::zeros({3, 1})));
    for (double v : tape.value(s).values()) CHECK(v == 0.0);
  }

  SECTION("score(i,j) depends only on f_i and f_j") {
    Tensor fv = random_tensor(rng, {4, 3});
    Tensor a_self = random_tensor(rng, {3, 1});
    Tensor a_peer = random_tensor(rng, {3, 1});
    auto score_at = [&](const Tensor& feats, std::size_t i, std::size_t j) {
      Tape t;
      Value s = attention_scores(t, t.input(feats), t.input(a_self), t.input(a_peer));
      return t.value(s).at(i, j);
    };
    double base = score_at(fv, 0, 1);
    Tensor perturbed = fv;
    for (std::size_t c = 0; c < 3; ++c) perturbed.at(3, c) += 0.7;  // node 3, not 0 or 1
    CHECK(score_at(perturbed, 0, 1) == base);
  }

  SECTION("symmetric parameters give symmetric scores for equal features") {
    Tensor feats({2, 3});
    for (std::size_t c = 0; c < 3; ++c) {
      feats.at(0, c) = 0.3 * static_cast<double>(c);
      feats.at(1, c) = 0.3 * static_cast<double>(c);
    }
    Tensor a = random_tensor(rng, {3, 1});
    Tape t;
    Value s = attention_scores(t, t.input(feats), t.input(a), t.input(a));
    CHECK(t.value(s).at(0, 1) == t.value(s).at(1, 0));
  }
}

TEST_CASE("edge type attention") {
  Rng rng(9);
  GraphEncoderConfig config = tiny_config(1, 1);
  config.layers = 1;
  ParamStore store = make_store(config, 4, 3);

  SECTION("self adjacency reduces to the embedded features plus bias") {
    std::size_t n = 5;
    MultiAdjacency adj;
    adj.n = n;
    adj.types = {EdgeType::Self};
    adj.matrices.push_back(Tensor::identity(n));
    Tensor x = random_tensor(rng, {n, 4});
    Tape tape;
    BoundParams params(tape, store);
    auto inputs = prepare_encoder_inputs(adj, config);
    Value h = edge_type_attention(tape, tape.input(x), inputs, params, "encoder/layer0/head0/",
                                  config);
    Tensor expected = tensor_ops::matmul(x, tensor_ops::transpose(store.get(
                                                "encoder/layer0/head0/W")));
    const Tensor& b = store.get("encoder/layer0/head0/self/b");
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < 3; ++c)
        REQUIRE(tape.value(h).at(i, c) ==
                Catch::Approx(expected.at(i, c) + b[c]).margin(1e-12));
  }

  SECTION("zero attention vectors average the neighborhood uniformly") {
    std::size_t n = 4;
    MultiAdjacency adj;
    adj.n = n;
    adj.types = {EdgeType::Downstream};
    Tensor m({n, n});
    m.at(0, 1) = 1.0;
    m.at(0, 2) = 1.0;
    m.at(0, 3) = 1.0;  // node 0 attends to three nodes
    adj.matrices.push_back(m);
    GraphEncoderConfig cfg = config;
    cfg.edge_types = {EdgeType::Downstream};
    ParamStore st = make_store(cfg, 4, 7);
    st.get("encoder/layer0/head0/downstream/a_self") = Tensor::zeros({3, 1});
    st.get("encoder/layer0/head0/downstream/a_peer") = Tensor::zeros({3, 1});
    Tensor x = random_tensor(rng, {n, 4});
    Tape tape;
    BoundParams params(tape, st);
    auto inputs = prepare_encoder_inputs(adj, cfg);
    Value h = edge_type_attention(tape, tape.input(x), inputs, params, "encoder/layer0/head0/",
                                  cfg);
    Tensor f = tensor_ops::matmul(x, tensor_ops::transpose(st.get("encoder/layer0/head0/W")));
    const Tensor& b = st.get("encoder/layer0/head0/downstream/b");
    for (std::size_t c = 0; c < 3; ++c) {
      double mean = (f.at(1, c) + f.at(2, c) + f.at(3, c)) / 3.0;
      REQUIRE(tape.value(h).at(0, c) == Catch::Approx(mean + b[c]).margin(1e-12));
    }
  }

  SECTION("an empty neighborhood returns exactly the bias") {
    std::size_t n = 3;
    MultiAdjacency adj;
    adj.n = n;
    adj.types = {EdgeType::Upstream};
    adj.matrices.push_back(Tensor::zeros({n, n}));  // nobody has upstream neighbors
    GraphEncoderConfig cfg = config;
    cfg.edge_types = {EdgeType::Upstream};
    ParamStore st = make_store(cfg, 4, 8);
    Tensor x = random_tensor(rng, {n, 4});
    Tape tape;
    BoundParams params(tape, st);
    auto inputs = prepare_encoder_inputs(adj, cfg);
    Value h = edge_type_attention(tape, tape.input(x), inputs, params, "encoder/layer0/head0/",
                                  cfg);
    const Tensor& b = st.get("encoder/layer0/head0/upstream/b");
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < 3; ++c) REQUIRE(tape.value(h).at(i, c) == b[c]);
  }
}

TEST_CASE("attention weights are row-stochastic over nonempty neighborhoods") {
  Rng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    std::size_t n = 2 + rng.uniform_index(6);
    auto adj = random_adjacency(rng, n, 2, 0.4);
    Tensor x = random_tensor(rng, {n, 4});
    Tensor a_self = random_tensor(rng, {3, 1});
    Tensor a_peer = random_tensor(rng, {3, 1});
    Tensor w = random_tensor(rng, {3, 4});
    for (const auto& m : adj.matrices) {
      Tape tape;
      Value f = tape.matmul(tape.input(x), tape.transpose(tape.input(w)));
      Value scores = attention_scores(tape, f, tape.input(a_self), tape.input(a_peer));
      Value alpha = tape.masked_softmax(scores, std::make_shared<Tensor>(m), 1);
      const Tensor& av = tape.value(alpha);
      for (std::size_t i = 0; i < n; ++i) {
        double row = 0.0;
        bool any = false;
        for (std::size_t j = 0; j < n; ++j) {
          if (m.at(i, j) == 0.0) {
            REQUIRE(av.at(i, j) == 0.0);
          } else {
            REQUIRE(av.at(i, j) >= 0.0);
            row += av.at(i, j);
            any = true;
          }
        }
        if (any) REQUIRE(std::abs(row - 1.0) <= 1e-12);
      }
    }
  }
}

TEST_CASE("multi-head attention") {
  Rng rng(17);
  std::size_t n = 5;
  auto adj = random_adjacency(rng, n, 1, 0.5);
  Tensor x = random_tensor(rng, {n, 4});

  SECTION("one head is identical to edge type attention") {
    GraphEncoderConfig cfg = tiny_config(2, 1);
    ParamStore store = make_store(cfg, 4, 5);
    Tape t1, t2;
    BoundParams p1(t1, store), p2(t2, store);
    auto in1 = prepare_encoder_inputs(adj, cfg);
    Value a = multi_head_attention(t1, t1.input(x), in1, p1, "encoder/layer0/", cfg);
    Value b = edge_type_attention(t2, t2.input(x), in1, p2, "encoder/layer0/head0/", cfg);
    REQUIRE(t1.value(a).values() == t2.value(b).values());
  }

  SECTION("output width is heads * depth * F and head slices are independent") {
    GraphEncoderConfig cfg = tiny_config(2, 3);
    ParamStore store = make_store(cfg, 4, 6);
    auto forward = [&](const ParamStore& st) {
      Tape tape;
      BoundParams params(tape, st);
      auto inputs = prepare_encoder_inputs(adj, cfg);
      return tape.value(
          multi_head_attention(tape, tape.input(x), inputs, params, "encoder/layer0/", cfg));
    };
    Tensor base = forward(store);
    REQUIRE(base.cols() == cfg.heads * cfg.depth() * cfg.attention_dim);

    ParamStore perturbed = make_store(cfg, 4, 6);
    for (double& v : perturbed.get("encoder/layer0/head1/self/a_self").values()) v += 0.5;
    for (double& v : perturbed.get("encoder/layer0/head1/W").values()) v -= 0.25;
    Tensor moved = forward(perturbed);
    std::size_t slice = cfg.depth() * cfg.attention_dim;
    bool head1_changed = false;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < slice; ++c) {
        REQUIRE(moved.at(i, c) == base.at(i, c));                      // head 0 bitwise equal
        REQUIRE(moved.at(i, 2 * slice + c) == base.at(i, 2 * slice + c));  // head 2 too
        head1_changed = head1_changed || moved.at(i, slice + c) != base.at(i, slice + c);
      }
    CHECK(head1_changed);
  }
}

TEST_CASE("encoder stack shape and locality") {
  Rng rng(23);

  SECTION("output shape is n x fc_dim for any n") {
    GraphEncoderConfig cfg = tiny_config(2);
    ParamStore store = make_store(cfg, 4, 2);
    for (std::size_t n : {3u, 7u, 12u}) {
      auto adj = random_adjacency(rng, n, 1, 0.4);
      Tensor out = run_encoder(store, cfg, adj, random_tensor(rng, {n, 4}));
      REQUIRE(out.rows() == n);
      REQUIRE(out.cols() == cfg.fc_dim);
    }
  }

  SECTION("self-only stack treats nodes independently (bitwise)") {
    GraphEncoderConfig cfg = tiny_config(1);
    ParamStore store = make_store(cfg, 4, 3);
    std::size_t n = 6;
    MultiAdjacency adj;
    adj.n = n;
    adj.types = {EdgeType::Self};
    adj.matrices.push_back(Tensor::identity(n));
    Tensor x = random_tensor(rng, {n, 4});
    Tensor base = run_encoder(store, cfg, adj, x);
    Tensor x2 = x;
    for (std::size_t c = 0; c < 4; ++c) x2.at(2, c) += 1.0;  // perturb node 2 only
    Tensor moved = run_encoder(store, cfg, adj, x2);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < cfg.fc_dim; ++c) {
        if (i == 2) continue;
        REQUIRE(moved.at(i, c) == base.at(i, c));
      }
  }

  SECTION("influence is confined to 2-hop attends-to neighborhoods (bitwise)") {
    GraphEncoderConfig cfg = tiny_config(3);
    ParamStore store = make_store(cfg, 4, 4);
    for (int trial = 0; trial < 10; ++trial) {
      std::size_t n = 5 + rng.uniform_index(4);
      auto adj = random_adjacency(rng, n, 2, 0.25);
      // attends-to reachability: i depends on j if there is a path i -> j of
      // length <= layers in the union graph (self edges included)
      std::vector<std::vector<char>> reach1(n, std::vector<char>(n, 0));
      for (std::size_t i = 0; i < n; ++i) {
        reach1[i][i] = 1;
        for (const auto& m : adj.matrices)
          for (std::size_t j = 0; j < n; ++j)
            if (m.at(i, j) != 0.0) reach1[i][j] = 1;
      }
      std::vector<std::vector<char>> reach2(n, std::vector<char>(n, 0));
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < n; ++k)
          if (reach1[i][k])
            for (std::size_t j = 0; j < n; ++j)
              if (reach1[k][j]) reach2[i][j] = 1;

      Tensor x = random_tensor(rng, {n, 4});
      Tensor base = run_encoder(store, cfg, adj, x);
      std::size_t j = rng.uniform_index(n);
      Tensor x2 = x;
      for (std::size_t c = 0; c < 4; ++c) x2.at(j, c) += 0.6;
      Tensor moved = run_encoder(store, cfg, adj, x2);
      for (std::size_t i = 0; i < n; ++i) {
        bool changed = false;
        for (std::size_t c = 0; c < cfg.fc_dim; ++c)
          changed = changed || moved.at(i, c) != base.at(i, c);
        if (!reach2[i][j]) REQUIRE(!changed);
      }
    }
  }
}

TEST_CASE("permutation equivariance of the encoder stack") {
  Rng rng(41);
  GraphEncoderConfig cfg = tiny_config(3);
  ParamStore store = make_store(cfg, 4, 11);
  for (int trial = 0; trial < 20; ++trial) {
    std::size_t n = 4 + rng.uniform_index(5);
    auto adj = random_adjacency(rng, n, 2, 0.35);
    Tensor x = random_tensor(rng, {n, 4});
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.uniform_index(i)]);

    MultiAdjacency padj;
    padj.n = n;
    padj.types = adj.types;
    for (const auto& m : adj.matrices) {
      Tensor pm({n, n});
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) pm.at(perm[i], perm[j]) = m.at(i, j);
      padj.matrices.push_back(std::move(pm));
    }
    Tensor px({n, 4});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < 4; ++c) px.at(perm[i], c) = x.at(i, c);

    Tensor out = run_encoder(store, cfg, adj, x);
    Tensor pout = run_encoder(store, cfg, padj, px);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < cfg.fc_dim; ++c)
        REQUIRE(std::abs(pout.at(perm[i], c) - out.at(i, c)) <= 1e-10);
  }
}

TEST_CASE("flatten consistency") {
  // With all four adjacencies identical and all four attention triples equal,
  // the D=4 model reproduces the D=1 output replicated four times.
  Rng rng(53);
  std::size_t n = 5;
  Tensor shared_adj({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i == j || rng.uniform() < 0.4) shared_adj.at(i, j) = 1.0;

  GraphEncoderConfig cfg4 = tiny_config(4, 1);
  cfg4.layers = 1;
  ParamStore store4 = make_store(cfg4, 4, 19);
  GraphEncoderConfig cfg1 = tiny_config(1, 1);
  cfg1.layers = 1;
  ParamStore store1 = make_store(cfg1, 4, 19);

  // copy the single-type triple into all four types of the D=4 model
  store4.get("encoder/layer0/head0/W") = store1.get("encoder/layer0/head0/W");
  for (const char* label : {"self", "downstream", "upstream", "neighbor"}) {
    store4.get(std::string("encoder/layer0/head0/") + label + "/a_self") =
        store1.get("encoder/layer0/head0/self/a_self");
    store4.get(std::string("encoder/layer0/head0/") + label + "/a_peer") =
        store1.get("encoder/layer0/head0/self/a_peer");
    store4.get(std::string("encoder/layer0/head0/") + label + "/b") =
        store1.get("encoder/layer0/head0/self/b");
  }

  MultiAdjacency adj4;
  adj4.n = n;
  adj4.types = cfg4.edge_types;
  for (int d = 0; d < 4; ++d) adj4.matrices.push_back(shared_adj);
  MultiAdjacency adj1;
  adj1.n = n;
  adj1.types = {EdgeType::Self};
  adj1.matrices.push_back(shared_adj);

  Tensor x = random_tensor(rng, {n, 4});
  Tape t4, t1;
  BoundParams p4(t4, store4), p1(t1, store1);
  auto in4 = prepare_encoder_inputs(adj4, cfg4);
  auto in1 = prepare_encoder_inputs(adj1, cfg1);
  Value h4 = edge_type_attention(t4, t4.input(x), in4, p4, "encoder/layer0/head0/", cfg4);
  Value h1 = edge_type_attention(t1, t1.input(x), in1, p1, "encoder/layer0/head0/", cfg1);
  std::size_t F = cfg1.attention_dim;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < 4; ++d)
      for (std::size_t c = 0; c < F; ++c)
        REQUIRE(t4.value(h4).at(i, d * F + c) == t1.value(h1).at(i, c));
}

TEST_CASE("gcn renormalization") {
  SECTION("isolated node gets a unit self weight") {
    Tensor a = Tensor::zeros({3, 3});
    Tensor norm = gcn_renormalize(a);
    for (std::size_t i = 0; i < 3; ++i) CHECK(norm.at(i, i) == 1.0);
  }
  SECTION("two nodes with one mutual edge") {
    Tensor a({2, 2}, {0, 1, 1, 0});
    Tensor norm = gcn_renormalize(a);
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 2; ++j) CHECK(norm.at(i, j) == Catch::Approx(0.5));
  }
  SECTION("renormalized matrix is symmetric for symmetric input") {
    Rng rng(61);
    std::size_t n = 6;
    Tensor a({n, n});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        if (rng.uniform() < 0.5) {
          a.at(i, j) = 1.0;
          a.at(j, i) = 1.0;
        }
    Tensor norm = gcn_renormalize(a);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) REQUIRE(norm.at(i, j) == norm.at(j, i));
  }
  SECTION("gcn layer applies relu over the renormalized propagation") {
    Rng rng(67);
    Tensor a({2, 2}, {0, 1, 1, 0});
    Tensor w = random_tensor(rng, {3, 2});
    Tensor x = random_tensor(rng, {2, 2});
    Tape tape;
    Value out = gcn_layer(tape, tape.input(x), tape.input(gcn_renormalize(a)), tape.input(w));
    Tensor expected =
        tensor_ops::matmul(gcn_renormalize(a), tensor_ops::matmul(x, tensor_ops::transpose(w)));
    for (std::size_t i = 0; i < expected.numel(); ++i)
      REQUIRE(tape.value(out)[i] == std::max(0.0, expected[i]));
  }
}

TEST_CASE("encoder gradients match finite differences") {
  Rng rng(71);
  GraphEncoderConfig cfg = tiny_config(2);
  cfg.layers = 2;
  ParamStore store = make_store(cfg, 4, 13);
  std::size_t n = 4;
  auto adj = random_adjacency(rng, n, 1, 0.5);
  auto inputs = prepare_encoder_inputs(adj, cfg);

  ScalarFn fn = [&](Tape& tape, const std::vector<Value>& vs) {
    BoundParams params(store, {vs.begin() + 1, vs.end()});
    Value out = encoder_stack(tape, vs[0], inputs, params, cfg);
    return tape.reduce_mean(tape.tanh_(out));
  };
  std::vector<Tensor> probe;
  probe.push_back(random_tensor(rng, {n, 4}));
  for (std::size_t i = 0; i < store.size(); ++i) probe.push_back(store.tensor(i));
  double err = grad_check(fn, probe);
  INFO("max relative error " << err);
  CHECK(err <= 1e-4);
}
