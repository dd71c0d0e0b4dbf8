#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "hmhi/errors.hpp"

namespace hmhi {

/// Binary H x W mask, row-major, one byte per pixel holding 0 or 1.
struct Mask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;

  static Mask zeros(std::size_t height, std::size_t width) { return {height, width, std::vector<std::uint8_t>(height * width, 0)}; }

  std::uint8_t at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
  void set(std::size_t y, std::size_t x, bool on) { pixels[y * width + x] = on ? 1 : 0; }
  std::size_t count() const {
    std::size_t n = 0;
    for (auto p : pixels) n += p != 0;
    return n;
  }
  bool is_binary() const {
    for (auto p : pixels)
      if (p > 1) return false;
    return true;
  }
  bool operator==(const Mask&) const = default;
};

/// Per-pixel probabilities in [0, 1].
struct ProbMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;
};

}  // namespace hmhi
