#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "hmhi/mask.hpp"
#include "hmhi/tensor.hpp"

namespace hmhi {

enum class Scenario { translate, scale, occlude, multi_object, camera_pan };

std::string to_string(Scenario scenario);
Scenario parse_scenario(const std::string& text);
const std::vector<Scenario>& all_scenarios();

/// Per-pixel displacement from frame t to frame t+1, in pixels.
struct FlowField {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> u;  // +x (columns)
  std::vector<double> v;  // +y (rows)

  double max_magnitude() const;
};

// Surface ids in ClipSample::surfaces.
inline constexpr std::uint8_t kBackgroundSurface = 0;
inline constexpr std::uint8_t kOccluderSurface = 255;

struct ClipSample {
  Scenario scenario = Scenario::translate;
  std::uint64_t seed = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  double flow_max_mag = 1.0;

  std::vector<Tensor> frames;  // [3, H, W] in [0, 1]
  std::vector<Tensor> flows;   // color-coded flow, [3, H, W]
  std::vector<Mask> gt_masks;
  std::vector<FlowField> flow_fields;
  // Which surface is visible at each pixel: background, object 1..3, occluder.
  std::vector<std::vector<std::uint8_t>> surfaces;

  std::size_t length() const { return frames.size(); }
};

/// Renders hard-edged rectangles/discs over a textured background. Masks are
/// the exact rendered foreground and flow fields the exact renderer motion.
/// translate, occlude, multi_object and camera_pan use integer displacements.
ClipSample generate_clip(Scenario scenario, std::size_t height, std::size_t width, std::size_t length,
                         std::uint64_t seed);

/// Color-wheel encoding: hue = atan2(v, u), saturation = min(|f| / max_mag, 1),
/// value 1. Zero flow is white.
Tensor flow_to_color(const FlowField& flow, double max_mag);

/// h in degrees [0, 360), s and v in [0, 1].
std::array<double, 3> hsv_to_rgb(double hue_deg, double saturation, double value);

}  // namespace hmhi
