#include "hmhi/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <tuple>

#include "hmhi/rng.hpp"

namespace hmhi {

std::string to_string(Scenario scenario) {
  switch (scenario) {
    case Scenario::translate: return "translate";
    case Scenario::scale: return "scale";
    case Scenario::occlude: return "occlude";
    case Scenario::multi_object: return "multi_object";
    case Scenario::camera_pan: return "camera_pan";
  }
  return "?";
}

Scenario parse_scenario(const std::string& text) {
  for (Scenario s : all_scenarios()) {
    if (to_string(s) == text) return s;
  }
  throw ConfigError("unknown scenario '" + text + "' (expected translate|scale|occlude|multi_object|camera_pan)");
}

const std::vector<Scenario>& all_scenarios() {
  static const std::vector<Scenario> all = {Scenario::translate, Scenario::scale, Scenario::occlude,
                                            Scenario::multi_object, Scenario::camera_pan};
  return all;
}

double FlowField::max_magnitude() const {
  double m = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) m = std::max(m, std::hypot(u[i], v[i]));
  return m;
}

std::array<double, 3> hsv_to_rgb(double hue_deg, double saturation, double value) {
  double h = std::fmod(hue_deg, 360.0);
  if (h < 0) h += 360.0;
  const double c = value * saturation;
  const double hp = h / 60.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  const double m = value - c;
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(hp)) {
    case 0: r = c, g = x; break;
    case 1: r = x, g = c; break;
    case 2: g = c, b = x; break;
    case 3: g = x, b = c; break;
    case 4: r = x, b = c; break;
    default: r = c, b = x; break;
  }
  return {r + m, g + m, b + m};
}

Tensor flow_to_color(const FlowField& flow, double max_mag) {
  if (!(max_mag > 0.0)) throw ConfigError("flow_to_color: max_mag must be positive");
  const std::size_t n = flow.height * flow.width;
  if (flow.u.size() != n || flow.v.size() != n) throw ShapeError("flow_to_color: u/v size does not match H x W");
  std::vector<double> rgb(3 * n);
  for (std::size_t i = 0; i < n; ++i) {
    const double mag = std::hypot(flow.u[i], flow.v[i]);
    const double hue = mag > 0.0 ? std::atan2(flow.v[i], flow.u[i]) * 180.0 / std::numbers::pi : 0.0;
    const auto c = hsv_to_rgb(hue, std::min(mag / max_mag, 1.0), 1.0);
    for (std::size_t ch = 0; ch < 3; ++ch) rgb[ch * n + i] = c[ch];
  }
  return Tensor::from({3, flow.height, flow.width}, std::move(rgb));
}

namespace {

enum class ShapeKind { rect, disc };

struct Body {
  ShapeKind kind = ShapeKind::rect;
  // Per frame 0..L (one past the clip so the last flow is defined).
  std::vector<double> cx, cy, scale;
  double hx = 0, hy = 0;  // half extents (disc uses hx as radius) at scale 1
  std::array<double, 3> color{};
  std::uint8_t surface = 1;

  bool covers(std::size_t t, double px, double py) const {
    const double dx = (px - cx[t]) / scale[t], dy = (py - cy[t]) / scale[t];
    if (kind == ShapeKind::rect) return std::abs(dx) < hx && std::abs(dy) < hy;
    return dx * dx + dy * dy < hx * hx;
  }
  // Renderer motion of the point under (px, py) from frame t to t+1.
  std::pair<double, double> displacement(std::size_t t, double px, double py) const {
    const double r = scale[t + 1] / scale[t];
    const double nx = cx[t + 1] + (px - cx[t]) * r, ny = cy[t + 1] + (py - cy[t]) * r;
    return {nx - px, ny - py};
  }
  double extent_x(std::size_t t) const { return hx * scale[t]; }
  double extent_y(std::size_t t) const { return (kind == ShapeKind::rect ? hy : hx) * scale[t]; }
};

// Integer velocity walk that reflects off the borders so the whole shape
// stays inside the frame.
void walk(Body& b, std::int64_t vx, std::int64_t vy, std::size_t steps, double width, double height) {
  for (std::size_t t = 0; t < steps; ++t) {
    const double ex = b.extent_x(t + 1), ey = b.extent_y(t + 1);
    auto step = [](double c, std::int64_t& v, double e, double limit) {
      if (c + v - e < 0 || c + v + e > limit) v = -v;
      if (c + v - e < 0 || c + v + e > limit) v = 0;
      return c + static_cast<double>(v);
    };
    b.cx.push_back(step(b.cx[t], vx, ex, width));
    b.cy.push_back(step(b.cy[t], vy, ey, height));
  }
}

struct Texture {
  std::array<double, 3> base{}, amp{};
  double fx = 0, fy = 0, phase = 0;
  std::uint64_t salt = 0;

  double at(std::int64_t wx, std::int64_t wy, std::size_t ch) const {
    std::uint64_t h = salt ^ (static_cast<std::uint64_t>(wx >> 2) * 0x9E3779B97F4A7C15ULL) ^
                      (static_cast<std::uint64_t>(wy >> 2) * 0xC2B2AE3D27D4EB4FULL) ^ (ch * 0x165667B19E3779F9ULL);
    h = (h ^ (h >> 31)) * 0xBF58476D1CE4E5B9ULL;
    h ^= h >> 29;
    const double block = static_cast<double>(h >> 11) * 0x1.0p-53;
    const double wave = std::sin(fx * static_cast<double>(wx) + fy * static_cast<double>(wy) + phase);
    return std::clamp(base[ch] + amp[ch] * (block - 0.5) + 0.05 * wave, 0.0, 1.0);
  }
};

Texture make_texture(Rng& rng) {
  Texture tex;
  for (std::size_t c = 0; c < 3; ++c) {
    tex.base[c] = rng.uniform(0.3, 0.5);
    tex.amp[c] = rng.uniform(0.1, 0.25);
  }
  tex.fx = rng.uniform(0.2, 0.8);
  tex.fy = rng.uniform(0.2, 0.8);
  tex.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  tex.salt = rng.next_u64();
  return tex;
}

Body make_body(Rng& rng, double side, double min_frac, double max_frac, std::uint8_t surface, bool allow_disc) {
  Body b;
  b.surface = surface;
  b.kind = allow_disc && rng.coin() ? ShapeKind::disc : ShapeKind::rect;
  b.hx = std::round(rng.uniform(min_frac, max_frac) * side);
  b.hy = b.kind == ShapeKind::rect ? std::round(rng.uniform(min_frac, max_frac) * side) : b.hx;
  b.hx = std::max(b.hx, 1.0);
  b.hy = std::max(b.hy, 1.0);
  b.color = hsv_to_rgb(rng.uniform(0.0, 360.0), rng.uniform(0.7, 1.0), rng.uniform(0.85, 1.0));
  return b;
}

void place(Body& b, Rng& rng, double width, double height) {
  const double ex = b.extent_x(0), ey = b.extent_y(0);
  b.cx = {static_cast<double>(rng.uniform_int(static_cast<std::int64_t>(std::ceil(ex)),
                                              static_cast<std::int64_t>(std::floor(width - ex))))};
  b.cy = {static_cast<double>(rng.uniform_int(static_cast<std::int64_t>(std::ceil(ey)),
                                              static_cast<std::int64_t>(std::floor(height - ey))))};
}

std::pair<std::int64_t, std::int64_t> draw_velocity(Rng& rng, std::int64_t limit) {
  for (;;) {
    const auto vx = rng.uniform_int(-limit, limit), vy = rng.uniform_int(-limit, limit);
    if (vx != 0 || vy != 0) return {vx, vy};
  }
}

}  // namespace

ClipSample generate_clip(Scenario scenario, std::size_t height, std::size_t width, std::size_t length,
                         std::uint64_t seed) {
  if (height == 0 || height != width || height % 32 != 0) {
    throw ShapeError("generate_clip: need H = W, a positive multiple of 32; got " + std::to_string(height) + "x" +
                     std::to_string(width));
  }
  if (length == 0) throw ShapeError("generate_clip: clip length must be at least 1");

  ClipSample clip;
  clip.scenario = scenario;
  clip.seed = seed;
  clip.height = height;
  clip.width = width;
  const double side = static_cast<double>(height), w = static_cast<double>(width), h = side;
  clip.flow_max_mag = 0.1 * side;
  const auto vlimit = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::floor(clip.flow_max_mag / std::sqrt(2.0))));

  Rng rng(seed ^ (static_cast<std::uint64_t>(scenario) << 56));
  Rng tex_rng = rng.fork(1);
  const Texture background = make_texture(tex_rng);
  const std::size_t frames = length + 1;

  std::vector<Body> bodies;
  auto unit_scale = [&](Body& b) { b.scale.assign(frames, 1.0); };
  switch (scenario) {
    case Scenario::translate:
    case Scenario::camera_pan:
    case Scenario::occlude: {
      Body b = make_body(rng, side, 0.15, 0.22, 1, true);
      unit_scale(b);
      place(b, rng, w, h);
      const auto [vx, vy] = draw_velocity(rng, vlimit);
      walk(b, vx, vy, length, w, h);
      bodies.push_back(std::move(b));
      break;
    }
    case Scenario::multi_object: {
      const auto count = static_cast<std::size_t>(rng.uniform_int(2, 3));
      for (std::size_t i = 0; i < count; ++i) {
        Body b = make_body(rng, side, 0.08, 0.14, static_cast<std::uint8_t>(i + 1), true);
        unit_scale(b);
        place(b, rng, w, h);
        const auto [vx, vy] = draw_velocity(rng, vlimit);
        walk(b, vx, vy, length, w, h);
        bodies.push_back(std::move(b));
      }
      break;
    }
    case Scenario::scale: {
      Body b = make_body(rng, side, 0.12, 0.18, 1, true);
      // Keep |boundary growth| + |velocity| within the flow bound.
      const double max_extent = std::hypot(b.hx, b.hy) * 1.6;
      const double room = std::max(0.0, clip.flow_max_mag - std::sqrt(2.0));
      const double step = std::min(0.08, room / max_extent);
      double ratio = rng.coin() ? 1.0 + step : 1.0 / (1.0 + step);
      b.scale = {1.0};
      for (std::size_t t = 1; t < frames; ++t) {
        double next = b.scale.back() * ratio;
        if (next > 1.6 || next < 0.6) {
          ratio = 1.0 / ratio;
          next = b.scale.back() * ratio;
        }
        b.scale.push_back(next);
      }
      // Room for the largest extent the shape will reach.
      const double grow = *std::max_element(b.scale.begin(), b.scale.end());
      const double ex = b.hx * grow, ey = (b.kind == ShapeKind::rect ? b.hy : b.hx) * grow;
      b.cx = {static_cast<double>(rng.uniform_int(static_cast<std::int64_t>(std::ceil(ex)),
                                                  static_cast<std::int64_t>(std::floor(w - ex))))};
      b.cy = {static_cast<double>(rng.uniform_int(static_cast<std::int64_t>(std::ceil(ey)),
                                                  static_cast<std::int64_t>(std::floor(h - ey))))};
      const auto [vx, vy] = draw_velocity(rng, 1);
      walk(b, vx, vy, length, w, h);
      bodies.push_back(std::move(b));
      break;
    }
  }

  // Occluder: a vertical bar narrower than the object, centred on it at the
  // middle frame, drifting horizontally by whole pixels.
  std::optional<Body> occluder;
  if (scenario == Scenario::occlude) {
    const Body& target = bodies.front();
    const std::size_t mid = (length - 1) / 2;
    Body bar;
    bar.kind = ShapeKind::rect;
    bar.surface = kOccluderSurface;
    bar.hx = std::max(1.0, std::floor(target.extent_x(mid) / 3.0));
    bar.hy = h;  // taller than the frame
    bar.color = {0.05, 0.05, 0.08};
    bar.scale.assign(frames, 1.0);
    const std::int64_t drift = rng.coin() ? 1 : -1;
    bar.cx.resize(frames);
    bar.cy.assign(frames, h / 2.0);
    for (std::size_t t = 0; t < frames; ++t) {
      bar.cx[t] = target.cx[mid] + static_cast<double>(drift) * (static_cast<double>(t) - static_cast<double>(mid));
    }
    occluder = std::move(bar);
  }

  std::int64_t pan_x = 0, pan_y = 0;
  if (scenario == Scenario::camera_pan) std::tie(pan_x, pan_y) = draw_velocity(rng, vlimit);

  const std::size_t n = height * width;
  for (std::size_t t = 0; t < length; ++t) {
    std::vector<double> rgb(3 * n);
    std::vector<std::uint8_t> surface(n, kBackgroundSurface);
    Mask gt = Mask::zeros(height, width);
    FlowField flow{height, width, std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
    const auto cam_x = pan_x * static_cast<std::int64_t>(t), cam_y = pan_y * static_cast<std::int64_t>(t);

    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        const std::size_t i = y * width + x;
        const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
        const Body* top = nullptr;
        if (occluder && occluder->covers(t, px, py)) {
          top = &*occluder;
        } else {
          for (auto it = bodies.rbegin(); it != bodies.rend(); ++it) {
            if (it->covers(t, px, py)) {
              top = &*it;
              break;
            }
          }
        }
        if (top) {
          surface[i] = top->surface;
          for (std::size_t c = 0; c < 3; ++c) rgb[c * n + i] = top->color[c];
          std::tie(flow.u[i], flow.v[i]) = top->displacement(t, px, py);
          if (top->surface != kOccluderSurface) gt.pixels[i] = 1;
        } else {
          const auto wx = static_cast<std::int64_t>(x) + cam_x, wy = static_cast<std::int64_t>(y) + cam_y;
          for (std::size_t c = 0; c < 3; ++c) rgb[c * n + i] = background.at(wx, wy, c);
          // The world moves opposite to the camera.
          flow.u[i] = -static_cast<double>(pan_x);
          flow.v[i] = -static_cast<double>(pan_y);
        }
      }
    }
    clip.frames.push_back(Tensor::from({3, height, width}, std::move(rgb)));
    clip.flows.push_back(flow_to_color(flow, clip.flow_max_mag));
    clip.flow_fields.push_back(std::move(flow));
    clip.gt_masks.push_back(std::move(gt));
    clip.surfaces.push_back(std::move(surface));
  }
  return clip;
}

}  // namespace hmhi
