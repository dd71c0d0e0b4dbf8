#include <doctest.h>

#include <cmath>
#include <numeric>

#include "hmhi/nn.hpp"
#include "oracle_blocks.hpp"

using namespace hmhi;

namespace {

Tensor rand_t(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) { return Tensor::uniform(std::move(s), lo, hi, rng); }

void fill(Tensor t, double v) {
  for (auto& x : t.mutable_data()) x = v;
}

void randomize(Tensor t, Rng& rng, double lo = -1.0, double hi = 1.0) {
  for (auto& x : t.mutable_data()) x = rng.uniform(lo, hi);
}

}  // namespace

TEST_CASE("param store: names are unique and registered tensors require grad") {
  ParamStore store;
  Rng rng(1);
  const Linear l = Linear::create(store, "block.fc", 3, 2, rng);
  CHECK(store.contains("block.fc.weight"));
  CHECK(store.contains("block.fc.bias"));
  CHECK(store.get("block.fc.weight").requires_grad());
  CHECK(store.size() == 2);
  CHECK(store.total_numel() == 8);
  CHECK_THROWS_AS(Linear::create(store, "block.fc", 3, 2, rng), ConfigError);
  CHECK(store.named("block").size() == 2);
  CHECK(store.named("other").empty());
}

TEST_CASE("init: weights within +-sqrt(1/fan_in), biases zero, seeded") {
  ParamStore a, b;
  Rng ra(7), rb(7);
  const Conv2d ca = Conv2d::create(a, "c", 4, 6, 3, 1, 1, ra);
  const Conv2d cb = Conv2d::create(b, "c", 4, 6, 3, 1, 1, rb);
  const double bound = std::sqrt(1.0 / 36.0);
  for (double w : ca.weight.data()) CHECK(std::abs(w) <= bound);
  for (double v : ca.bias.data()) CHECK(v == 0.0);
  CHECK(oracle::vec(ca.weight) == oracle::vec(cb.weight));
}

TEST_CASE("linear: degenerate, identity and random oracle") {
  ParamStore store;
  Rng rng(2);
  Linear l = Linear::create(store, "l", 3, 3, rng);
  fill(l.weight, 0.0);
  l.bias.mutable_data()[0] = 1.5;
  l.bias.mutable_data()[2] = -2.0;
  const Tensor x = rand_t({4, 3}, rng);
  const Tensor y = linear_apply(l, x);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(y.at({i, 0}) == 1.5);
    CHECK(y.at({i, 1}) == 0.0);
    CHECK(y.at({i, 2}) == -2.0);
  }
  fill(l.bias, 0.0);
  for (std::size_t i = 0; i < 3; ++i) l.weight.mutable_data()[i * 3 + i] = 1.0;
  CHECK(oracle::vec(linear_apply(l, x)) == oracle::vec(x));

  const Linear r = Linear::create(store, "r", 4, 2, rng);
  randomize(r.bias, rng);
  const Tensor x2 = rand_t({3, 4}, rng);
  CHECK(oracle::max_abs_diff(oracle::vec(linear_apply(r, x2)), oracle::linear(oracle::mat(x2), r.weight, r.bias).v) <
        1e-15);
  CHECK_THROWS_AS(linear_apply(r, rand_t({3, 5}, rng)), ShapeError);
}

TEST_CASE("attention: one key gives weight exactly 1 regardless of query") {
  ParamStore store;
  Rng rng(3);
  const AttentionBlock b = AttentionBlock::create(store, "a", 4, 4, {}, rng);
  const Tensor key = rand_t({1, 4}, rng);
  const auto expected =
      oracle::linear(oracle::linear(oracle::mat(key), b.v_proj.weight, b.v_proj.bias), b.out_proj->weight, b.out_proj->bias);
  const Tensor out = attention(b, rand_t({5, 4}, rng), key);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(out.at({i, j}) == doctest::Approx(expected.at(0, j)).epsilon(1e-14));
}

TEST_CASE("attention: identical key rows average their values") {
  ParamStore store;
  Rng rng(4);
  AttentionConfig cfg;
  cfg.out_proj = false;
  AttentionBlock b = AttentionBlock::create(store, "a", 3, 3, cfg, rng);
  // Keys depend only on the first input column; values only on the second.
  fill(b.k_proj.weight, 0.0);
  fill(b.v_proj.weight, 0.0);
  for (std::size_t j = 0; j < 3; ++j) {
    b.k_proj.weight.mutable_data()[0 * 3 + j] = 1.0;
    b.v_proj.weight.mutable_data()[1 * 3 + j] = 1.0;
  }
  const Tensor keys = Tensor::from({2, 3}, {0.5, 2.0, 0.0, 0.5, 6.0, 0.0});
  const Tensor out = attention(b, rand_t({2, 3}, rng), keys);
  for (double v : out.data()) CHECK(v == doctest::Approx(4.0).epsilon(1e-14));
}

TEST_CASE("attention: random Nq=4, Nk=6 against composed oracle") {
  ParamStore store;
  Rng rng(5);
  for (bool out_proj : {true, false}) {
    AttentionConfig cfg;
    cfg.out_proj = out_proj;
    const AttentionBlock b = AttentionBlock::create(store, out_proj ? "a" : "b", 6, 5, cfg, rng);
    for (auto* l : {&b.q_proj, &b.k_proj, &b.v_proj}) randomize(l->bias, rng);
    const Tensor q = rand_t({4, 6}, rng), k = rand_t({6, 5}, rng);
    const auto ref = oracle::attention_ref(b, oracle::mat(q), oracle::mat(k));
    CHECK(oracle::max_abs_diff(oracle::vec(attention(b, q, k)), ref.v) < 1e-14);
  }
}

TEST_CASE("attention: heads split the model width") {
  ParamStore store;
  Rng rng(6);
  AttentionConfig cfg;
  cfg.heads = 2;
  cfg.out_proj = false;
  const AttentionBlock b = AttentionBlock::create(store, "a", 4, 4, cfg, rng);
  const Tensor q = rand_t({3, 4}, rng), k = rand_t({5, 4}, rng);
  const auto qm = oracle::linear(oracle::mat(q), b.q_proj.weight, b.q_proj.bias);
  const auto km = oracle::linear(oracle::mat(k), b.k_proj.weight, b.k_proj.bias);
  const auto vm = oracle::linear(oracle::mat(k), b.v_proj.weight, b.v_proj.bias);
  const Tensor out = attention(b, q, k);
  for (std::size_t h = 0; h < 2; ++h) {
    auto cols = [&](const oracle::Mat& m) {
      oracle::Mat r = oracle::zeros(m.rows, 2);
      for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < 2; ++j) r.at(i, j) = m.at(i, h * 2 + j);
      return r;
    };
    const auto p = oracle::softmax_rows(oracle::scale(oracle::matmul(cols(qm), oracle::transpose(cols(km))), 1.0 / std::sqrt(2.0)));
    const auto o = oracle::matmul(p, cols(vm));
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 2; ++j) CHECK(out.at({i, h * 2 + j}) == doctest::Approx(o.at(i, j)).epsilon(1e-13));
  }
  CHECK_THROWS_AS(AttentionBlock::create(store, "bad", 5, 5, cfg, rng), ConfigError);
}

TEST_CASE("attention: empty key set is an error") {
  ParamStore store;
  Rng rng(7);
  const AttentionBlock b = AttentionBlock::create(store, "a", 4, 4, {}, rng);
  CHECK_THROWS_AS(attention(b, rand_t({2, 4}, rng), std::vector<Tensor>{}), EmptyKeysError);
}

TEST_CASE("attention: key-row permutation invariance and query-row equivariance") {
  ParamStore store;
  Rng rng(8);
  const AttentionBlock b = AttentionBlock::create(store, "a", 4, 4, {}, rng);
  const Tensor q = rand_t({5, 4}, rng), k = rand_t({7, 4}, rng);
  const auto base = oracle::vec(attention(b, q, k));
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::size_t> perm(7);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(perm));
    CHECK(oracle::max_abs_diff(oracle::vec(attention(b, q, gather_rows(k, perm))), base) <= 1e-10);

    std::vector<std::size_t> qperm(5);
    std::iota(qperm.begin(), qperm.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(qperm));
    const Tensor out = attention(b, gather_rows(q, qperm), k);
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(out.at({i, j}) - base[qperm[i] * 4 + j]) <= 1e-12);
  }
}

TEST_CASE("ffn: zero path, hidden width and random oracle") {
  ParamStore store;
  Rng rng(9);
  const FFNBlock z = FFNBlock::create(store, "z", 16, 16, 4, rng);
  CHECK(z.fc1.out_dim() == 64);
  fill(z.fc1.weight, 0.0);
  fill(z.fc2.weight, 0.0);
  const Tensor x = rand_t({5, 16}, rng);
  const Tensor y = ffn_apply(z, x);
  CHECK(y.shape() == Shape{5, 16});
  for (double v : y.data()) CHECK(v == 0.0);

  const FFNBlock f = FFNBlock::create(store, "f", 6, 3, 4, rng);
  randomize(f.fc1.bias, rng);
  randomize(f.fc2.bias, rng);
  const Tensor x2 = rand_t({4, 6}, rng);
  CHECK(oracle::max_abs_diff(oracle::vec(ffn_apply(f, x2)), oracle::ffn_ref(f, oracle::mat(x2)).v) < 1e-14);
  CHECK_THROWS_AS(FFNBlock::create(store, "r0", 4, 4, 0, rng), ConfigError);
}

TEST_CASE("channel-spatial gate: saturated gates pass input through") {
  ParamStore store;
  Rng rng(10);
  ChannelSpatialGate g = ChannelSpatialGate::create(store, "g", 8, rng);
  fill(g.mlp1.weight, 0.0);
  fill(g.mlp2.weight, 0.0);
  fill(g.mlp2.bias, 20.0);  // two descriptors summed: logit 40
  fill(g.spatial.weight, 0.0);
  fill(g.spatial.bias, 40.0);
  const Tensor x = rand_t({8, 5, 5}, rng, -3, 3);
  CHECK(oracle::max_abs_diff(oracle::vec(channel_spatial_attend(g, x)), oracle::vec(x)) <= 1e-8);
}

TEST_CASE("channel-spatial gate: bounds, sign and random oracle") {
  ParamStore store;
  Rng rng(11);
  const ChannelSpatialGate g = ChannelSpatialGate::create(store, "g", 4, rng);
  randomize(g.mlp1.bias, rng);
  randomize(g.mlp2.bias, rng);
  randomize(g.spatial.bias, rng);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor x = rand_t({4, 5, 5}, rng, -2, 2);
    GateTrace trace;
    const Tensor y = channel_spatial_attend(g, x, &trace);
    const auto xv = oracle::vec(x), yv = oracle::vec(y);
    for (std::size_t i = 0; i < xv.size(); ++i) {
      CHECK(std::abs(yv[i]) <= std::abs(xv[i]));
      CHECK(yv[i] * xv[i] >= 0.0);
    }
    for (double v : trace.channel_gate.data()) CHECK((v > 0.0 && v < 1.0));
    for (double v : trace.spatial_gate.data()) CHECK((v > 0.0 && v < 1.0));
    CHECK(oracle::max_abs_diff(yv, oracle::gate_ref(g, oracle::map(x)).v) < 1e-14);
  }
}

TEST_CASE("downsample stack: shape, zero path and oracle") {
  ParamStore store;
  Rng rng(12);
  const DownsampleStack d = DownsampleStack::create(store, "d", 16, 64, rng);
  const Tensor x = rand_t({16, 8, 8}, rng);
  CHECK(downsample_stack(d, x).shape() == Shape{64, 2, 2});
  // Biases are zero at init, so a zero input stays zero throughout.
  const Tensor zero_out = downsample_stack(d, Tensor::zeros({16, 8, 8}));
  for (double v : zero_out.data()) CHECK(v == 0.0);

  randomize(d.conv1.bias, rng);
  randomize(d.conv2.bias, rng);
  randomize(d.proj.bias, rng);
  const auto ref = oracle::downsample_ref(d, oracle::map(x));
  CHECK(oracle::max_abs_diff(oracle::vec(downsample_stack(d, x)), ref.v) < 1e-13);
  CHECK_THROWS_AS(downsample_stack(d, rand_t({16, 6, 6}, rng)), ShapeError);
}

TEST_CASE("every block passes the gradient check at 1e-4") {
  Rng rng(13);
  ParamStore store;
  const AttentionBlock attn = AttentionBlock::create(store, "attn", 4, 6, {}, rng);
  const FFNBlock ffn = FFNBlock::create(store, "ffn", 4, 3, 4, rng);
  const ChannelSpatialGate gate = ChannelSpatialGate::create(store, "gate", 8, rng);
  const DownsampleStack down = DownsampleStack::create(store, "down", 4, 8, rng);
  for (const auto& np : store.named()) randomize(np.tensor, rng, -0.5, 0.5);

  const Tensor q = rand_t({3, 4}, rng), k = rand_t({5, 6}, rng), x4 = rand_t({8, 4, 4}, rng), x8 = rand_t({4, 8, 8}, rng);
  const Tensor w1 = rand_t({3, 4}, rng), w2 = rand_t({3, 3}, rng), w3 = rand_t({8, 4, 4}, rng), w4 = rand_t({8, 2, 2}, rng);
  auto loss = [&] {
    return sum_all(mul(attention(attn, q, k), w1)) + sum_all(mul(ffn_apply(ffn, q), w2)) +
           sum_all(mul(channel_spatial_attend(gate, x4), w3)) + sum_all(mul(downsample_stack(down, x8), w4));
  };
  auto params = store.named();
  params.push_back({"q", q});
  params.push_back({"k", k});
  params.push_back({"x4", x4});
  params.push_back({"x8", x8});
  const auto report = finite_difference_check(loss, params);
  for (const auto& p : report.params) {
    INFO(p.name << " rel " << p.rel_error);
    CHECK(p.passed);
  }
}
