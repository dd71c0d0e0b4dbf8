#include <doctest.h>

#include "hmhi/gradcheck.hpp"
#include "hmhi/interaction.hpp"
#include "oracle_blocks.hpp"

using namespace hmhi;

namespace {

void fill(Tensor t, double v) {
  for (auto& x : t.mutable_data()) x = v;
}

void randomize(Tensor t, Rng& rng, double lo = -0.5, double hi = 0.5) {
  for (auto& x : t.mutable_data()) x = rng.uniform(lo, hi);
}

struct Fixture {
  ParamStore store;
  InteractionParams params;
  std::size_t c2, c4;

  Fixture(std::size_t shallow, std::size_t high, std::uint64_t seed = 1) : c2(shallow), c4(high) {
    Rng rng(seed);
    params.plam = PlamParams::create(store, "plam", c2, c4, 4, rng);
    params.sgim = SgimParams::create(store, "sgim", c2, c4, {}, 4, rng);
    params.swap = SwapAdapters::create(store, "swap", c2, c4, rng);
    for (const auto& np : store.named()) randomize(np.tensor, rng);
  }
};

oracle::Mat plam_ref(const PlamParams& p, const oracle::Mat& shallow, LevelGrid sg, const oracle::Mat& high, LevelGrid hg) {
  const auto aligned = oracle::downsample_ref(p.down, oracle::to_map(shallow, sg.height, sg.width));
  const auto joined = oracle::to_map(oracle::concat_cols(high, oracle::tokens(aligned)), hg.height, hg.width);
  return oracle::ffn_ref(p.ffn, oracle::tokens(oracle::gate_ref(p.gate, joined)));
}

oracle::Mat sgim_ref(const SgimParams& p, const oracle::Mat& high, const oracle::Mat& shallow) {
  const auto aligned = oracle::linear(high, p.align.weight, p.align.bias);
  const auto refined = oracle::attention_ref(p.self_attn, shallow, shallow);
  return oracle::ffn_ref(p.ffn, oracle::add(refined, oracle::attention_ref(p.cross_attn, refined, aligned)));
}

// Shifts a [HW, C] token grid by (d, d) cells, filling with zeros.
Tensor shift_tokens(const Tensor& t, std::size_t h, std::size_t w, std::size_t d) {
  Tensor out = Tensor::zeros(t.shape());
  const std::size_t c = t.dim(1);
  for (std::size_t y = 0; y + d < h; ++y)
    for (std::size_t x = 0; x + d < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) out.mutable_data()[((y + d) * w + x + d) * c + ch] = t.data()[(y * w + x) * c + ch];
  return out;
}

Tensor compact(std::size_t h, std::size_t w, std::size_t c, std::size_t lo, std::size_t hi, Rng& rng) {
  Tensor t = Tensor::zeros({h * w, c});
  for (std::size_t y = lo; y < hi; ++y)
    for (std::size_t x = lo; x < hi; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) t.mutable_data()[(y * w + x) * c + ch] = rng.uniform(-1, 1);
  return t;
}

const LevelGrid kShallow{8, 8}, kHigh{2, 2};

}  // namespace

TEST_CASE("plam and sgim shapes at the default widths") {
  Fixture fx(16, 64);
  Rng rng(2);
  const Tensor f2 = Tensor::uniform({64, 16}, -1, 1, rng), f4 = Tensor::uniform({4, 64}, -1, 1, rng);
  CHECK(plam(f2, kShallow, f4, kHigh, fx.params.plam).shape() == Shape{4, 64});
  CHECK(sgim(f4, f2, fx.params.sgim).shape() == Shape{64, 16});
  for (auto mode : {InteractionMode::standard, InteractionMode::swapped, InteractionMode::s2h_only,
                    InteractionMode::h2s_only, InteractionMode::off}) {
    const auto out = interact(f2, kShallow, f4, kHigh, fx.params, mode);
    CHECK(out.shallow.shape() == Shape{64, 16});
    CHECK(out.high.shape() == Shape{4, 64});
  }
  CHECK(fx.params.plam.gate.mlp1.in_dim() == 128);
  CHECK_THROWS_AS(plam(f2, {4, 16}, f4, kHigh, fx.params.plam), ShapeError);
}

TEST_CASE("plam: zero shallow input with zero conv biases aligns to the projection bias") {
  Fixture fx(8, 16, 3);
  fill(fx.params.plam.down.conv1.bias, 0.0);
  fill(fx.params.plam.down.conv2.bias, 0.0);
  const Tensor aligned = downsample_stack(fx.params.plam.down, Tensor::zeros({8, 8, 8}));
  const auto bias = oracle::vec(fx.params.plam.down.proj.bias);
  for (std::size_t c = 0; c < 16; ++c)
    for (std::size_t i = 0; i < 4; ++i) CHECK(aligned.data()[c * 4 + i] == bias[c]);

  Rng rng(4);
  const Tensor f4 = Tensor::uniform({4, 16}, -1, 1, rng);
  oracle::Mat half = oracle::zeros(4, 16);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 16; ++c) half.at(i, c) = bias[c];
  const auto joined = oracle::to_map(oracle::concat_cols(oracle::mat(f4), half), 2, 2);
  const auto ref = oracle::ffn_ref(fx.params.plam.ffn, oracle::tokens(oracle::gate_ref(fx.params.plam.gate, joined)));
  CHECK(oracle::max_abs_diff(oracle::vec(plam(Tensor::zeros({64, 8}), kShallow, f4, kHigh, fx.params.plam)), ref.v) < 1e-13);
}

TEST_CASE("plam and sgim match composed oracles") {
  Fixture fx(8, 16, 5);
  Rng rng(6);
  for (int trial = 0; trial < 3; ++trial) {
    const Tensor f2 = Tensor::uniform({64, 8}, -1, 1, rng), f4 = Tensor::uniform({4, 16}, -1, 1, rng);
    CHECK(oracle::max_abs_diff(oracle::vec(plam(f2, kShallow, f4, kHigh, fx.params.plam)),
                               plam_ref(fx.params.plam, oracle::mat(f2), kShallow, oracle::mat(f4), kHigh).v) < 1e-13);
    CHECK(oracle::max_abs_diff(oracle::vec(sgim(f4, f2, fx.params.sgim)),
                               sgim_ref(fx.params.sgim, oracle::mat(f4), oracle::mat(f2)).v) < 1e-13);
  }
}

TEST_CASE("sgim: a single high-level token is added identically to every shallow token") {
  Fixture fx(8, 16, 7);
  Rng rng(8);
  const Tensor f4 = Tensor::uniform({1, 16}, -1, 1, rng), f2 = Tensor::uniform({16, 8}, -1, 1, rng);
  const auto& p = fx.params.sgim;
  const Tensor refined = attention(p.self_attn, f2, f2);
  const Tensor cross = attention(p.cross_attn, refined, linear_apply(p.align, f4));
  const auto expect = oracle::linear(
      oracle::linear(oracle::linear(oracle::mat(f4), p.align.weight, p.align.bias), p.cross_attn.v_proj.weight,
                     p.cross_attn.v_proj.bias),
      p.cross_attn.out_proj->weight, p.cross_attn.out_proj->bias);
  for (std::size_t i = 0; i < 16; ++i)
    for (std::size_t c = 0; c < 8; ++c) {
      CHECK(cross.at({i, c}) == cross.at({0, c}));
      CHECK(cross.at({i, c}) == doctest::Approx(expect.at(0, c)).epsilon(1e-14));
    }
}

TEST_CASE("sgim: zero cross-attention values reduce to self-attention and FFN exactly") {
  Fixture fx(8, 16, 9);
  fill(fx.params.sgim.cross_attn.v_proj.weight, 0.0);
  fill(fx.params.sgim.cross_attn.v_proj.bias, 0.0);
  fill(fx.params.sgim.cross_attn.out_proj->bias, 0.0);
  Rng rng(10);
  const Tensor f4 = Tensor::uniform({4, 16}, -1, 1, rng), f2 = Tensor::uniform({64, 8}, -1, 1, rng);
  const Tensor expect = ffn_apply(fx.params.sgim.ffn, attention(fx.params.sgim.self_attn, f2, f2));
  CHECK(oracle::vec(sgim(f4, f2, fx.params.sgim)) == oracle::vec(expect));
}

TEST_CASE("interact: mode identities") {
  Fixture fx(8, 16, 11);
  Rng rng(12);
  const Tensor f2 = Tensor::uniform({64, 8}, -1, 1, rng), f4 = Tensor::uniform({4, 16}, -1, 1, rng);
  const auto off = interact(f2, kShallow, f4, kHigh, fx.params, InteractionMode::off);
  CHECK(oracle::vec(off.shallow) == oracle::vec(f2));
  CHECK(oracle::vec(off.high) == oracle::vec(f4));

  const auto std_out = interact(f2, kShallow, f4, kHigh, fx.params, InteractionMode::standard);
  const auto s2h = interact(f2, kShallow, f4, kHigh, fx.params, InteractionMode::s2h_only);
  CHECK(oracle::vec(s2h.shallow) == oracle::vec(f2));
  CHECK(oracle::vec(s2h.high) == oracle::vec(std_out.high));
  const auto h2s = interact(f2, kShallow, f4, kHigh, fx.params, InteractionMode::h2s_only);
  CHECK(oracle::vec(h2s.high) == oracle::vec(f4));
  CHECK(oracle::vec(h2s.shallow) == oracle::vec(std_out.shallow));
  CHECK(oracle::vec(std_out.high) == oracle::vec(plam(f2, kShallow, f4, kHigh, fx.params.plam)));
  CHECK(oracle::vec(std_out.shallow) == oracle::vec(sgim(f4, f2, fx.params.sgim)));

  CHECK(parse_interaction_mode("swapped") == InteractionMode::swapped);
  CHECK_THROWS_AS(parse_interaction_mode("sequential"), ConfigError);
}

TEST_CASE("interact: swapped wiring uses the adapters") {
  Fixture fx(8, 16, 13);
  Rng rng(14);
  const Tensor f2 = Tensor::uniform({64, 8}, -1, 1, rng), f4 = Tensor::uniform({4, 16}, -1, 1, rng);
  const auto out = interact(f2, kShallow, f4, kHigh, fx.params, InteractionMode::swapped);
  const auto local = plam_ref(fx.params.plam, oracle::mat(f2), kShallow, oracle::mat(f4), kHigh);
  const auto up = oracle::tokens(oracle::upsample_bilinear(oracle::to_map(local, 2, 2), 4));
  const auto shallow_ref = oracle::linear(up, fx.params.swap.plam_to_shallow.weight, fx.params.swap.plam_to_shallow.bias);
  CHECK(oracle::max_abs_diff(oracle::vec(out.shallow), shallow_ref.v) < 1e-13);
  const auto pooled = oracle::tokens(oracle::avg_pool(oracle::to_map(oracle::mat(f2), 8, 8), 4));
  const auto high_ref = oracle::linear(sgim_ref(fx.params.sgim, oracle::mat(f4), pooled), fx.params.swap.sgim_to_high.weight,
                                       fx.params.swap.sgim_to_high.bias);
  CHECK(oracle::max_abs_diff(oracle::vec(out.high), high_ref.v) < 1e-13);
}

TEST_CASE("interact: each direction ignores the other module's parameters") {
  Rng rng(15);
  const Tensor f2 = Tensor::uniform({64, 8}, -1, 1, rng), f4 = Tensor::uniform({4, 16}, -1, 1, rng);
  for (const char* prefix : {"sgim", "plam"}) {
    Fixture fx(8, 16, 16);
    const auto before = interact(f2, kShallow, f4, kHigh, fx.params, InteractionMode::standard);
    for (const auto& np : fx.store.named(prefix))
      for (auto& v : Tensor(np.tensor).mutable_data()) v += rng.uniform(-0.3, 0.3);
    const auto after = interact(f2, kShallow, f4, kHigh, fx.params, InteractionMode::standard);
    if (std::string(prefix) == "sgim") {
      CHECK(oracle::vec(after.high) == oracle::vec(before.high));
      CHECK(oracle::max_abs_diff(oracle::vec(after.shallow), oracle::vec(before.shallow)) > 0.0);
    } else {
      CHECK(oracle::vec(after.shallow) == oracle::vec(before.shallow));
      CHECK(oracle::max_abs_diff(oracle::vec(after.high), oracle::vec(before.high)) > 0.0);
    }
  }
}

TEST_CASE("plam: translating the inputs translates the output on interior cells") {
  Fixture fx(4, 8, 17);
  fill(fx.params.plam.down.conv1.bias, 0.0);
  fill(fx.params.plam.down.conv2.bias, 0.0);
  fill(fx.params.plam.down.proj.bias, 0.0);
  Rng rng(18);
  const LevelGrid sg{64, 64}, hg{16, 16};
  const Tensor f2 = compact(64, 64, 4, 16, 36, rng), f4 = compact(16, 16, 8, 4, 9, rng);
  const Tensor out = plam(f2, sg, f4, hg, fx.params.plam);
  const Tensor moved = plam(shift_tokens(f2, 64, 64, 4), sg, shift_tokens(f4, 16, 16, 1), hg, fx.params.plam);
  const std::size_t c = 8, halo = 3;
  double worst = 0.0;
  for (std::size_t y = halo; y < 16 - halo; ++y)
    for (std::size_t x = halo; x < 16 - halo; ++x)
      for (std::size_t ch = 0; ch < c; ++ch)
        worst = std::max(worst, std::abs(moved.data()[(y * 16 + x) * c + ch] - out.data()[((y - 1) * 16 + x - 1) * c + ch]));
  CHECK(worst <= 1e-12);
}

TEST_CASE("interaction gradients pass the finite-difference check") {
  Fixture fx(4, 8, 19);
  Rng rng(20);
  const Tensor f2 = Tensor::uniform({64, 4}, -1, 1, rng), f4 = Tensor::uniform({4, 8}, -1, 1, rng);
  const Tensor w2 = Tensor::uniform({64, 4}, -1, 1, rng), w4 = Tensor::uniform({4, 8}, -1, 1, rng);
  for (auto mode : {InteractionMode::standard, InteractionMode::swapped}) {
    auto loss = [&] {
      const auto out = interact(f2, kShallow, f4, kHigh, fx.params, mode);
      return sum_all(mul(out.shallow, w2)) + sum_all(mul(out.high, w4));
    };
    auto params = fx.store.named();
    params.push_back({"f2", f2});
    params.push_back({"f4", f4});
    const auto report = finite_difference_check(loss, params);
    for (const auto& p : report.params) {
      INFO(to_string(mode) << " " << p.name << " rel " << p.rel_error);
      CHECK(p.passed);
    }
  }
}
