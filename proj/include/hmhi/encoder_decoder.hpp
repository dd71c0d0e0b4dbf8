#pragma once

#include <array>
#include <string>

#include "hmhi/nn.hpp"

namespace hmhi {

class StageError : public Error {
 public:
  using Error::Error;
};

/// Four-level pyramid geometry: level i (1-based) has side / 2^(i+1) cells per
/// axis and channels[i-1] channels.
struct PyramidConfig {
  std::size_t side = 64;
  std::array<std::size_t, 4> channels{8, 16, 32, 64};

  void validate() const;
  std::size_t level_side(int level) const;
  std::size_t level_channels(int level) const;
  std::size_t level_tokens(int level) const;
};

enum class Stage { raw, mem_refined, interacted };
enum class InputMode { both, image, flow };

std::string to_string(Stage stage);
std::string to_string(InputMode mode);
InputMode parse_input_mode(const std::string& text);

struct PyramidLevel {
  Tensor image;  // I, [HW, C]
  Tensor flow;   // O, [HW, C]
  Tensor fused;  // F, [HW, C]; rewritten by refinement and interaction
  Stage stage = Stage::raw;
  std::size_t height = 0;
  std::size_t width = 0;

  // Replaces the fused feature, enforcing raw -> mem_refined -> interacted.
  void advance(Tensor next, Stage to);
};

struct FeaturePyramid {
  std::array<PyramidLevel, 4> levels;

  PyramidLevel& level(int i) { return levels.at(static_cast<std::size_t>(i - 1)); }
  const PyramidLevel& level(int i) const { return levels.at(static_cast<std::size_t>(i - 1)); }
};

struct EncoderTower {
  Conv2d stem1, stem2;  // two stride-2 convs: level 1 is stride 4
  Conv2d stage2, stage3, stage4;

  static EncoderTower create(ParamStore& store, const std::string& name, const PyramidConfig& config, Rng& rng);
};

struct EncoderParams {
  EncoderTower image;
  EncoderTower flow;  // aliases `image` when the towers are shared

  static EncoderParams create(ParamStore& store, const PyramidConfig& config, bool share_towers, Rng& rng);
};

struct DecoderParams {
  Linear proj43, proj32, proj21;
  Conv2d fuse3, fuse2, fuse1;
  Conv2d head;

  static DecoderParams create(ParamStore& store, const PyramidConfig& config, Rng& rng);
};

/// Runs both towers over [3, H, W] inputs and fuses each level by addition.
FeaturePyramid encode_frame(const Tensor& image, const Tensor& flow, const EncoderParams& params,
                            const PyramidConfig& config, InputMode mode = InputMode::both);

enum class DecodeStages {
  baseline,  // every level raw
  memory,    // levels 2 and 4 interacted, levels 1 and 3 not interacted
};

/// Top-down decoder over [F1, F2, F3, F4]; returns [1, H, W] logits.
Tensor decode(const FeaturePyramid& pyramid, const DecoderParams& params, const PyramidConfig& config,
              DecodeStages expected = DecodeStages::baseline);

}  // namespace hmhi
