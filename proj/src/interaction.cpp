#include "hmhi/interaction.hpp"

namespace hmhi {

PlamParams PlamParams::create(ParamStore& store, const std::string& name, std::size_t shallow_channels,
                              std::size_t high_channels, std::size_t ffn_ratio, Rng& rng) {
  PlamParams p;
  p.down = DownsampleStack::create(store, join_name(name, "down"), shallow_channels, high_channels, rng);
  p.gate = ChannelSpatialGate::create(store, name, 2 * high_channels, rng);
  p.ffn = FFNBlock::create(store, join_name(name, "ffn"), 2 * high_channels, high_channels, ffn_ratio, rng);
  return p;
}

SgimParams SgimParams::create(ParamStore& store, const std::string& name, std::size_t shallow_channels,
                              std::size_t high_channels, const AttentionConfig& attention, std::size_t ffn_ratio,
                              Rng& rng) {
  SgimParams p;
  p.align = Linear::create(store, join_name(name, "align"), high_channels, shallow_channels, rng);
  p.self_attn =
      AttentionBlock::create(store, join_name(name, "self_attn"), shallow_channels, shallow_channels, attention, rng);
  p.cross_attn =
      AttentionBlock::create(store, join_name(name, "cross_attn"), shallow_channels, shallow_channels, attention, rng);
  p.ffn = FFNBlock::create(store, join_name(name, "ffn"), shallow_channels, shallow_channels, ffn_ratio, rng);
  return p;
}

SwapAdapters SwapAdapters::create(ParamStore& store, const std::string& name, std::size_t shallow_channels,
                                  std::size_t high_channels, Rng& rng) {
  SwapAdapters a;
  a.plam_to_shallow = Linear::create(store, join_name(name, "plam_to_shallow"), high_channels, shallow_channels, rng);
  a.sgim_to_high = Linear::create(store, join_name(name, "sgim_to_high"), shallow_channels, high_channels, rng);
  return a;
}

std::string to_string(InteractionMode mode) {
  switch (mode) {
    case InteractionMode::standard: return "standard";
    case InteractionMode::swapped: return "swapped";
    case InteractionMode::s2h_only: return "s2h_only";
    case InteractionMode::h2s_only: return "h2s_only";
    case InteractionMode::off: return "off";
  }
  return "?";
}

InteractionMode parse_interaction_mode(const std::string& text) {
  if (text == "standard") return InteractionMode::standard;
  if (text == "swapped") return InteractionMode::swapped;
  if (text == "s2h_only") return InteractionMode::s2h_only;
  if (text == "h2s_only") return InteractionMode::h2s_only;
  if (text == "off") return InteractionMode::off;
  throw ConfigError("unknown interaction mode '" + text + "' (expected standard|swapped|s2h_only|h2s_only|off)");
}

namespace {

void check_ratio(LevelGrid shallow, LevelGrid high) {
  if (shallow.height != 4 * high.height || shallow.width != 4 * high.width) {
    throw ShapeError("shallow grid " + std::to_string(shallow.height) + "x" + std::to_string(shallow.width) +
                     " is not 4x the high grid " + std::to_string(high.height) + "x" + std::to_string(high.width));
  }
}

}  // namespace

Tensor plam(const Tensor& shallow, LevelGrid shallow_grid, const Tensor& high, LevelGrid high_grid,
            const PlamParams& params) {
  check_ratio(shallow_grid, high_grid);
  const Tensor aligned = downsample_stack(params.down, tokens_to_map(shallow, shallow_grid.height, shallow_grid.width));
  // High-level channels first, then the aligned shallow channels; positions
  // stay in correspondence.
  const Tensor joined = concat({tokens_to_map(high, high_grid.height, high_grid.width), aligned}, 0);
  return ffn_apply(params.ffn, map_to_tokens(channel_spatial_attend(params.gate, joined)));
}

Tensor sgim(const Tensor& high, const Tensor& shallow, const SgimParams& params) {
  const Tensor aligned = linear_apply(params.align, high);
  const Tensor refined = attention(params.self_attn, shallow, shallow);
  const Tensor integrated = add(refined, attention(params.cross_attn, refined, aligned));
  return ffn_apply(params.ffn, integrated);
}

InteractionOutput interact(const Tensor& shallow, LevelGrid shallow_grid, const Tensor& high, LevelGrid high_grid,
                           const InteractionParams& params, InteractionMode mode) {
  switch (mode) {
    case InteractionMode::off:
      return {shallow, high};
    case InteractionMode::standard:
      return {sgim(high, shallow, params.sgim), plam(shallow, shallow_grid, high, high_grid, params.plam)};
    case InteractionMode::s2h_only:
      return {shallow, plam(shallow, shallow_grid, high, high_grid, params.plam)};
    case InteractionMode::h2s_only:
      return {sgim(high, shallow, params.sgim), high};
    case InteractionMode::swapped: {
      check_ratio(shallow_grid, high_grid);
      // PLAM in the high-to-shallow slot: upsample its output to the shallow grid.
      const Tensor local = plam(shallow, shallow_grid, high, high_grid, params.plam);
      const Tensor local_up = map_to_tokens(upsample_bilinear(tokens_to_map(local, high_grid.height, high_grid.width), 4));
      const Tensor to_shallow = linear_apply(params.swap.plam_to_shallow, local_up);
      // SGIM in the shallow-to-high slot: queries pooled to the high grid.
      const Tensor pooled = map_to_tokens(avg_pool2d(tokens_to_map(shallow, shallow_grid.height, shallow_grid.width), 4));
      const Tensor to_high = linear_apply(params.swap.sgim_to_high, sgim(high, pooled, params.sgim));
      return {to_shallow, to_high};
    }
  }
  throw ConfigError("interact: unknown mode");
}

}  // namespace hmhi
