#pragma once

#include <string>
#include <utility>

#include "hmhi/nn.hpp"

namespace hmhi {

struct LevelGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t tokens() const { return height * width; }
};

/// Shallow-to-high: downsampled shallow detail concatenated with the high-level
/// map, channel then spatial gating, FFN back to the high-level width.
struct PlamParams {
  DownsampleStack down;     // C2 -> C4, 4x spatial reduction
  ChannelSpatialGate gate;  // over 2*C4 channels
  FFNBlock ffn;             // 2*C4 -> C4

  static PlamParams create(ParamStore& store, const std::string& name, std::size_t shallow_channels,
                           std::size_t high_channels, std::size_t ffn_ratio, Rng& rng);
};

/// High-to-shallow: high-level tokens aligned to the shallow width, shallow
/// self-attention, global cross-attention into the aligned tokens, FFN.
struct SgimParams {
  Linear align;  // C4 -> C2
  AttentionBlock self_attn;
  AttentionBlock cross_attn;
  FFNBlock ffn;

  static SgimParams create(ParamStore& store, const std::string& name, std::size_t shallow_channels,
                           std::size_t high_channels, const AttentionConfig& attention, std::size_t ffn_ratio,
                           Rng& rng);
};

// Shape adapters used only when the two modules trade places.
struct SwapAdapters {
  Linear plam_to_shallow;  // C4 -> C2
  Linear sgim_to_high;     // C2 -> C4

  static SwapAdapters create(ParamStore& store, const std::string& name, std::size_t shallow_channels,
                             std::size_t high_channels, Rng& rng);
};

struct InteractionParams {
  PlamParams plam;
  SgimParams sgim;
  SwapAdapters swap;
};

enum class InteractionMode { standard, swapped, s2h_only, h2s_only, off };

std::string to_string(InteractionMode mode);
InteractionMode parse_interaction_mode(const std::string& text);

/// F2p [H2W2, C2], F4p [H4W4, C4] -> [H4W4, C4]. Requires H2 = 4 H4, W2 = 4 W4.
Tensor plam(const Tensor& shallow, LevelGrid shallow_grid, const Tensor& high, LevelGrid high_grid,
            const PlamParams& params);

/// F4p [H4W4, C4], F2p [H2W2, C2] -> [H2W2, C2].
Tensor sgim(const Tensor& high, const Tensor& shallow, const SgimParams& params);

struct InteractionOutput {
  Tensor shallow;  // F2''
  Tensor high;     // F4''
};

/// Both directions read only the primed inputs, never each other's output.
InteractionOutput interact(const Tensor& shallow, LevelGrid shallow_grid, const Tensor& high, LevelGrid high_grid,
                           const InteractionParams& params, InteractionMode mode);

}  // namespace hmhi
