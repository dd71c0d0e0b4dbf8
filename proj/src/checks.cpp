#include "hmhi/checks.hpp"

#include <chrono>

#include "hmhi/pipeline.hpp"

namespace hmhi {

RunConfig toy_gradcheck_config() {
  RunConfig c;
  c.pyramid.side = 32;
  c.pyramid.channels = {4, 8, 16, 32};
  c.memory_capacity = 2;
  c.memory_stride = 1;
  c.sequence_length = 3;
  return c;
}

namespace {

BlockCheck timed(const std::string& name, const std::function<Tensor()>& loss, std::vector<NamedParam> params,
                 const GradCheckOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  BlockCheck b{name, finite_difference_check(loss, std::move(params), options), 0.0};
  b.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return b;
}

std::vector<NamedParam> with_input(std::vector<NamedParam> params, const std::string& name, const Tensor& input) {
  params.push_back({name, input});
  return params;
}

}  // namespace

std::vector<BlockCheck> run_gradcheck_suite(const RunConfig& config, const GradSuiteOptions& options) {
  config.validate();
  const auto& pc = config.pyramid;
  const std::size_t c1 = pc.level_channels(1), c2 = pc.level_channels(2), c4 = pc.level_channels(4);
  const std::size_t s2 = pc.level_side(2), s4 = pc.level_side(4);
  Rng rng(config.seed ^ 0x6a09e667f3bcc908ULL);
  const auto& opt = options.check;
  std::vector<BlockCheck> out;

  {
    ParamStore store;
    const Linear layer = Linear::create(store, "linear", c1, c2, rng);
    const Tensor x = Tensor::uniform({5, c1}, -1, 1, rng);
    const Tensor w = Tensor::uniform({5, c2}, -1, 1, rng);
    out.push_back(timed("linear", [&] { return sum_all(mul(linear_apply(layer, x), w)); },
                        with_input(store.named(), "input", x), opt));
  }
  {
    ParamStore store;
    const Conv2d conv = Conv2d::create(store, "conv", 3, c1, 3, 2, 1, rng);
    const Tensor x = Tensor::uniform({3, 8, 8}, -1, 1, rng);
    const Tensor w = Tensor::uniform({c1, 4, 4}, -1, 1, rng);
    out.push_back(timed("conv2d", [&] { return sum_all(mul(conv_apply(conv, x), w)); },
                        with_input(store.named(), "input", x), opt));
  }
  {
    ParamStore store;
    const AttentionBlock attn = AttentionBlock::create(store, "attn", c2, c4, config.attention, rng);
    const Tensor q = Tensor::uniform({6, c2}, -1, 1, rng);
    const Tensor k = Tensor::uniform({4, c4}, -1, 1, rng);
    const Tensor w = Tensor::uniform({6, c2}, -1, 1, rng);
    auto params = with_input(with_input(store.named(), "query", q), "keys", k);
    out.push_back(timed("attention", [&] { return sum_all(mul(attention(attn, q, k), w)); }, params, opt));
  }
  {
    ParamStore store;
    const FFNBlock ffn = FFNBlock::create(store, "ffn", c2, c1, config.ffn_ratio, rng);
    const Tensor x = Tensor::uniform({5, c2}, -1, 1, rng);
    const Tensor w = Tensor::uniform({5, c1}, -1, 1, rng);
    out.push_back(timed("ffn", [&] { return sum_all(mul(ffn_apply(ffn, x), w)); },
                        with_input(store.named(), "input", x), opt));
  }
  {
    ParamStore store;
    const ChannelSpatialGate gate = ChannelSpatialGate::create(store, "gate", 2 * c1, rng);
    const Tensor x = Tensor::uniform({2 * c1, 4, 4}, -1, 1, rng);
    const Tensor w = Tensor::uniform({2 * c1, 4, 4}, -1, 1, rng);
    out.push_back(timed("channel_spatial_gate", [&] { return sum_all(mul(channel_spatial_attend(gate, x), w)); },
                        with_input(store.named(), "input", x), opt));
  }
  {
    ParamStore store;
    const DownsampleStack down = DownsampleStack::create(store, "down", c2, c4, rng);
    const Tensor x = Tensor::uniform({c2, 8, 8}, -1, 1, rng);
    const Tensor w = Tensor::uniform({c4, 2, 2}, -1, 1, rng);
    out.push_back(timed("downsample_stack", [&] { return sum_all(mul(downsample_stack(down, x), w)); },
                        with_input(store.named(), "input", x), opt));
  }
  {
    ParamStore store;
    const EncoderParams enc = EncoderParams::create(store, pc, config.share_towers, rng);
    const DecoderParams dec = DecoderParams::create(store, pc, rng);
    const Tensor image = Tensor::uniform({3, pc.side, pc.side}, 0, 1, rng);
    const Tensor flow = Tensor::uniform({3, pc.side, pc.side}, 0, 1, rng);
    const Tensor w = Tensor::uniform({1, pc.side, pc.side}, -1, 1, rng);
    GradCheckOptions sampled = opt;
    sampled.max_entries_per_param = options.full_model_entries;
    out.push_back(timed(
        "encoder_decoder",
        [&] { return sum_all(mul(decode(encode_frame(image, flow, enc, pc, config.input_mode), dec, pc), w)); },
        store.named(), sampled));
  }
  {
    ParamStore store;
    const MemoryReadParams reader = MemoryReadParams::create(store, "memory", c2, config.attention, config.ffn_ratio,
                                                             config.self_attn_residual, rng);
    const std::size_t tokens = s2 * s2;
    MemoryBank bank(2, config.memory_capacity, 1);
    std::vector<Tensor> stored;
    for (std::size_t t = 0; t < config.memory_capacity; ++t) {
      stored.push_back(Tensor::uniform({tokens, c2}, -1, 1, rng));
      bank.offer(static_cast<std::int64_t>(t), [&] { return stored.back(); });
    }
    const Tensor x = Tensor::uniform({tokens, c2}, -1, 1, rng);
    const Tensor w = Tensor::uniform({tokens, c2}, -1, 1, rng);
    auto params = with_input(store.named(), "features", x);
    for (std::size_t t = 0; t < stored.size(); ++t) params.push_back({"memory_entry" + std::to_string(t), stored[t]});
    out.push_back(timed("memory_readout", [&] { return sum_all(mul(mem_refine(x, bank, reader).refined, w)); },
                        params, opt));
  }
  {
    ParamStore store;
    const MemoryEncoderParams writer = MemoryEncoderParams::create(store, "memory_encoder", c2, config.ffn_ratio, rng);
    const std::size_t tokens = s2 * s2;
    const Tensor x = Tensor::uniform({tokens, c2}, -1, 1, rng);
    const Tensor mask = Tensor::uniform({1, pc.side, pc.side}, -3, 3, rng);
    const Tensor w = Tensor::uniform({tokens, c2}, -1, 1, rng);
    auto params = with_input(with_input(store.named(), "features", x), "mask_logits", mask);
    out.push_back(timed("memory_encoder", [&] { return sum_all(mul(memory_encode(x, mask, s2, s2, writer), w)); },
                        params, opt));
  }
  {
    ParamStore store;
    const PlamParams p = PlamParams::create(store, "plam", c2, c4, config.ffn_ratio, rng);
    const Tensor shallow = Tensor::uniform({s2 * s2, c2}, -1, 1, rng);
    const Tensor high = Tensor::uniform({s4 * s4, c4}, -1, 1, rng);
    const Tensor w = Tensor::uniform({s4 * s4, c4}, -1, 1, rng);
    auto params = with_input(with_input(store.named(), "shallow", shallow), "high", high);
    out.push_back(timed(
        "plam", [&] { return sum_all(mul(plam(shallow, {s2, s2}, high, {s4, s4}, p), w)); }, params, opt));
  }
  {
    ParamStore store;
    const SgimParams p = SgimParams::create(store, "sgim", c2, c4, config.attention, config.ffn_ratio, rng);
    const Tensor shallow = Tensor::uniform({s2 * s2, c2}, -1, 1, rng);
    const Tensor high = Tensor::uniform({s4 * s4, c4}, -1, 1, rng);
    const Tensor w = Tensor::uniform({s2 * s2, c2}, -1, 1, rng);
    auto params = with_input(with_input(store.named(), "shallow", shallow), "high", high);
    out.push_back(timed("sgim", [&] { return sum_all(mul(sgim(high, shallow, p), w)); }, params, opt));
  }
  {
    const Tensor logits = Tensor::uniform({1, 8, 8}, -3, 3, rng);
    Mask gt = Mask::zeros(8, 8);
    for (std::size_t i = 0; i < gt.pixels.size(); ++i) gt.pixels[i] = rng.coin() ? 1 : 0;
    out.push_back(timed("combined_loss", [&] { return combined_loss(logits, gt, config.loss); },
                        {{"logits", logits}}, opt));
  }
  if (options.include_full_model) {
    const ModelParams model = ModelParams::create(config);
    const ClipSample clip = generate_clip(Scenario::translate, pc.side, pc.side, config.sequence_length, config.seed);
    GradCheckOptions sampled = opt;
    sampled.max_entries_per_param = options.full_model_entries;
    out.push_back(timed("full_model", [&] { return clip_loss(clip, model, config); }, model.store.named(), sampled));
  }
  return out;
}

}  // namespace hmhi
