#include <cmath>

#include "doctest.h"
#include "fd_check.hpp"
#include "qdt/checkpoint.hpp"
#include "qdt/errors.hpp"
#include "qdt/graph.hpp"
#include "qdt/optim.hpp"
#include "qdt/rng.hpp"

using namespace qdt;
using namespace qdt_test;

namespace {

nn::Tensor random_tensor(std::size_t r, std::size_t c, nn::Rng& rng,
                         double scale = 1.0) {
  nn::Tensor t(r, c);
  for (double& x : t.v) x = scale * rng.normal();
  return t;
}

}  // namespace

TEST_CASE("rng basics") {
  nn::Rng rng(42);
  for (int i = 0; i < 1000; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
  for (int i = 0; i < 1000; ++i) CHECK(rng.below(7) < 7);

  // Counter-based: same seed, same stream.
  nn::Rng a(9), b(9);
  for (int i = 0; i < 10; ++i) CHECK(a.next_u64() == b.next_u64());
  CHECK(nn::Rng::fork(1, 2).next_u64() != nn::Rng::fork(1, 3).next_u64());

  nn::Rng c(7);
  for (int i = 0; i < 1000; ++i) {
    CHECK(std::abs(c.truncated_normal(0.02)) <= 0.04 + 1e-15);
  }
}

TEST_CASE("relu gradient at positive inputs is all ones") {
  nn::Graph g;
  nn::Tensor x(2, 3);
  for (std::size_t i = 0; i < x.v.size(); ++i) x.v[i] = 0.5 + double(i);
  const nn::NodeId xid = g.input(x);
  g.backward(g.sum(g.relu(xid)));
  for (double gv : g.grad(xid).v) CHECK(gv == 1.0);
}

TEST_CASE("cross entropy at a huge correct margin goes to zero") {
  nn::Graph g;
  nn::Tensor logits(1, 4);
  logits.v = {40.0, -5.0, -5.0, -5.0};
  const double loss =
      g.value(g.softmax_cross_entropy(g.input(logits), {0})).v[0];
  CHECK(loss == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(loss < 1e-12);
}

TEST_CASE("two-layer mlp matches central finite differences") {
  nn::Rng rng(1234);
  std::vector<nn::Tensor> inputs = {
      random_tensor(4, 5, rng),        // x
      random_tensor(5, 8, rng, 0.5),   // w1
      random_tensor(1, 8, rng, 0.1),   // b1
      random_tensor(8, 3, rng, 0.5),   // w2
      random_tensor(1, 3, rng, 0.1),   // b2
  };
  GraphBuilder build = [](nn::Graph& g, const std::vector<nn::NodeId>& in) {
    nn::NodeId h = g.gelu(g.add_bias(g.matmul(in[0], in[1]), in[2]));
    nn::NodeId logits = g.add_bias(g.matmul(h, in[3]), in[4]);
    return g.softmax_cross_entropy(logits, {0, 2, 1, 0});
  };
  CHECK(max_grad_rel_error(build, inputs) < 1e-4);
}

TEST_CASE("finite differences for the remaining op set") {
  nn::Rng rng(77);

  SUBCASE("relu away from the kink") {
    std::vector<nn::Tensor> inputs = {random_tensor(3, 4, rng)};
    for (double& x : inputs[0].v) x += x >= 0.0 ? 0.5 : -0.5;
    GraphBuilder build = [](nn::Graph& g, const std::vector<nn::NodeId>& in) {
      return g.mean(g.relu(in[0]));
    };
    CHECK(max_grad_rel_error(build, inputs) < 1e-4);
  }

  SUBCASE("scale / select_per_row / sum") {
    std::vector<nn::Tensor> inputs = {random_tensor(4, 3, rng)};
    GraphBuilder build = [](nn::Graph& g, const std::vector<nn::NodeId>& in) {
      return g.sum(g.select_per_row(g.scale(in[0], -2.5), {0, 2, 1, 1}));
    };
    CHECK(max_grad_rel_error(build, inputs) < 1e-4);
  }

  SUBCASE("causal attention") {
    // Two windows of 3 tokens, 2 heads, head dim 2; second window padded.
    std::vector<nn::Tensor> inputs = {random_tensor(6, 12, rng)};
    GraphBuilder build = [](nn::Graph& g, const std::vector<nn::NodeId>& in) {
      return g.mean(g.causal_self_attention(in[0], 2, 3, 2, {0, 1}));
    };
    CHECK(max_grad_rel_error(build, inputs) < 1e-4);
  }

  SUBCASE("dropout with a fixed mask") {
    std::vector<nn::Tensor> inputs = {random_tensor(4, 5, rng)};
    GraphBuilder build = [](nn::Graph& g, const std::vector<nn::NodeId>& in) {
      nn::Rng mask_rng(99);  // same mask on every evaluation
      return g.mean(g.dropout(in[0], 0.4, true, mask_rng));
    };
    CHECK(max_grad_rel_error(build, inputs) < 1e-4);
  }

  SUBCASE("layer norm") {
    std::vector<nn::Tensor> inputs = {random_tensor(3, 6, rng),
                                      random_tensor(1, 6, rng),
                                      random_tensor(1, 6, rng)};
    GraphBuilder build = [](nn::Graph& g, const std::vector<nn::NodeId>& in) {
      return g.mean(g.layer_norm(in[0], in[1], in[2]));
    };
    CHECK(max_grad_rel_error(build, inputs) < 1e-4);
  }
}

TEST_CASE("randomized op graphs pass finite-difference checks") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    RandomGraph rg = make_random_graph(seed);
    CHECK_MESSAGE(max_grad_rel_error(rg.build, rg.inputs) < 1e-4,
                  "graph seed ", seed);
  }
}

TEST_CASE("adam") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    nn::ParameterStore store;
    nn::Rng rng(5);
    nn::Parameter& p = store.add("w", random_tensor(3, 3, rng));
    const std::vector<double> before = p.value.v;
    nn::Adam opt(store, {});
    store.zero_grad();
    opt.step();
    CHECK(p.value.v == before);
  }

  SUBCASE("constant gradient steps approach the learning rate") {
    nn::ParameterStore store;
    nn::Parameter& p = store.add("w", nn::Tensor::scalar(0.0));
    nn::AdamConfig cfg;
    cfg.lr = 1e-3;
    nn::Adam opt(store, cfg);
    double prev = 0.0;
    double step_size = 0.0;
    for (int i = 0; i < 500; ++i) {
      p.grad.v[0] = 3.7;  // constant
      opt.step();
      step_size = std::abs(p.value.v[0] - prev);
      prev = p.value.v[0];
    }
    CHECK(step_size == doctest::Approx(cfg.lr).epsilon(1e-4));
  }

  SUBCASE("quadratic converges to the minimizer") {
    nn::ParameterStore store;
    nn::Parameter& p = store.add("x", nn::Tensor::scalar(-4.0));
    nn::AdamConfig cfg;
    cfg.lr = 1e-2;
    nn::Adam opt(store, cfg);
    for (int i = 0; i < 5000; ++i) {
      nn::Graph g;
      const nn::NodeId x = g.param(p);
      const nn::NodeId c = g.input(nn::Tensor::scalar(3.0));
      const nn::NodeId d = g.sub(x, c);
      store.zero_grad();
      g.backward(g.mul(d, d));
      opt.step();
    }
    CHECK(std::abs(p.value.v[0] - 3.0) < 1e-3);
  }

  SUBCASE("non-finite gradient aborts") {
    nn::ParameterStore store;
    nn::Parameter& p = store.add("w", nn::Tensor::scalar(0.0));
    nn::Adam opt(store, {});
    p.grad.v[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(opt.step(), DivergenceError);
  }
}

TEST_CASE("dropout semantics") {
  nn::Rng rng(31);
  nn::Graph g;
  nn::Tensor x = random_tensor(10, 10, rng);
  const nn::NodeId xid = g.input(x);

  SUBCASE("eval mode is the identity node") {
    nn::Rng drng(1);
    CHECK(g.dropout(xid, 0.5, false, drng) == xid);
    CHECK(g.dropout(xid, 0.0, true, drng) == xid);
  }

  SUBCASE("train mode preserves the mean within 3 sigma") {
    // 1e5 kept-or-dropped Bernoulli draws scaled by 1/(1-p).
    const std::size_t n = 100000;
    const double p = 0.3;
    nn::Graph big;
    nn::Tensor ones_t(100, 1000);
    ones_t.fill(1.0);
    nn::Rng drng(17);
    const nn::NodeId out = big.dropout(big.input(ones_t), p, true, drng);
    double mean = 0.0;
    for (double v : big.value(out).v) mean += v;
    mean /= static_cast<double>(n);
    const double sigma_mean = std::sqrt(p / (1.0 - p) / n);
    CHECK(std::abs(mean - 1.0) <= 3.0 * sigma_mean);
  }
}

TEST_CASE("causal attention is exactly invariant to future tokens") {
  nn::Rng rng(61);
  const std::size_t seq = 5, d = 8, heads = 2;
  nn::Tensor qkv = random_tensor(seq, 3 * d, rng);

  auto run = [&](const nn::Tensor& in) {
    nn::Graph g;
    return g.value(g.causal_self_attention(g.input(in), 1, seq, heads, {0}));
  };
  const nn::Tensor base = run(qkv);

  for (std::size_t i = 0; i < seq; ++i) {
    nn::Tensor fuzzed = qkv;
    for (std::size_t j = i + 1; j < seq; ++j) {
      for (std::size_t c = 0; c < 3 * d; ++c) fuzzed.at(j, c) += rng.normal();
    }
    const nn::Tensor out = run(fuzzed);
    for (std::size_t c = 0; c < d; ++c) {
      CHECK(out.at(i, c) == base.at(i, c));  // bit-exact
    }
  }
}

TEST_CASE("padded tokens are invisible to valid queries") {
  nn::Rng rng(62);
  const std::size_t seq = 4, d = 4;
  nn::Tensor qkv = random_tensor(seq, 3 * d, rng);
  auto run = [&](const nn::Tensor& in) {
    nn::Graph g;
    return g.value(g.causal_self_attention(g.input(in), 1, seq, 1, {2}));
  };
  const nn::Tensor base = run(qkv);
  nn::Tensor fuzzed = qkv;
  for (std::size_t j = 0; j < 2; ++j) {
    for (std::size_t c = 0; c < 3 * d; ++c) fuzzed.at(j, c) = rng.normal();
  }
  const nn::Tensor out = run(fuzzed);
  for (std::size_t i = 2; i < seq; ++i) {
    for (std::size_t c = 0; c < d; ++c) CHECK(out.at(i, c) == base.at(i, c));
  }
}

TEST_CASE("training is bit-deterministic given the seed") {
  auto run = [](std::uint64_t seed) {
    nn::Rng init = nn::Rng::fork(seed, 1);
    nn::Rng drop = nn::Rng::fork(seed, 2);
    nn::ParameterStore store;
    nn::Parameter& w = store.add("w", random_tensor(6, 4, init, 0.3));
    nn::Parameter& b = store.add("b", nn::Tensor(1, 4));
    nn::Adam opt(store, {1e-3, 0.9, 0.999, 1e-8});
    nn::Rng data = nn::Rng::fork(seed, 3);
    std::vector<double> losses;
    for (int step = 0; step < 30; ++step) {
      nn::Graph g;
      nn::Tensor x = random_tensor(5, 6, data);
      std::vector<int> targets;
      for (int i = 0; i < 5; ++i) targets.push_back(int(data.below(4)));
      nn::NodeId logits =
          g.dropout(g.add_bias(g.matmul(g.input(x), g.param(w)), g.param(b)),
                    0.2, true, drop);
      nn::NodeId loss = g.softmax_cross_entropy(logits, targets);
      losses.push_back(g.value(loss).v[0]);
      store.zero_grad();
      g.backward(loss);
      opt.step();
    }
    return losses;
  };
  const auto a = run(99);
  const auto b = run(99);
  CHECK(a == b);  // bit-identical losses
  CHECK(run(100) != a);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  nn::Rng rng(8);
  nn::ParameterStore store;
  store.add("alpha", random_tensor(7, 3, rng));
  store.add("beta", random_tensor(1, 9, rng));
  const std::string path = "/tmp/qdt_test_ckpt.bin";
  nn::save_checkpoint(store, path, R"({"kind":"test"})");

  const nn::LoadedCheckpoint ckpt = nn::load_checkpoint(path);
  CHECK(ckpt.metadata_json == R"({"kind":"test"})");
  REQUIRE(ckpt.tensors.size() == 2);

  nn::ParameterStore fresh;
  fresh.add("alpha", nn::Tensor(7, 3));
  fresh.add("beta", nn::Tensor(1, 9));
  ckpt.restore_into(fresh);
  CHECK(fresh.get("alpha").value.v == store.get("alpha").value.v);
  CHECK(fresh.get("beta").value.v == store.get("beta").value.v);

  nn::ParameterStore wrong;
  wrong.add("alpha", nn::Tensor(7, 3));
  wrong.add("gamma", nn::Tensor(1, 9));
  CHECK_THROWS_AS(ckpt.restore_into(wrong), SchemaError);
}

TEST_CASE("shape mismatches are reported with the op name") {
  nn::Graph g;
  const nn::NodeId a = g.input(nn::Tensor(2, 3));
  const nn::NodeId b = g.input(nn::Tensor(2, 4));
  CHECK_THROWS_WITH_AS(g.add(a, b), "add: shape mismatch", Error);
  CHECK_THROWS_AS(g.matmul(a, a), Error);
}

TEST_CASE("non-finite values are located by op") {
  nn::Graph g;
  nn::Tensor x(1, 2);
  x.v = {1.0, 0.0};
  const nn::NodeId xid = g.input(x);
  const nn::NodeId bad = g.scale(xid, std::numeric_limits<double>::infinity());
  (void)bad;
  auto hit = g.find_non_finite();
  REQUIRE(hit.has_value());
  CHECK(hit->op == std::string("scale"));
}
