#pragma once

// Brute-force metric references: direct set counting, all-pairs contour
// matching and a per-threshold F sweep.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <utility>
#include <vector>

#include "hmhi/mask.hpp"
#include "hmhi/rng.hpp"

namespace oracle {

inline double jaccard(const hmhi::Mask& a, const hmhi::Mask& b) {
  double inter = 0, uni = 0;
  for (std::size_t y = 0; y < a.height; ++y)
    for (std::size_t x = 0; x < a.width; ++x) {
      const bool p = a.at(y, x) == 1, g = b.at(y, x) == 1;
      inter += p && g;
      uni += p || g;
    }
  return uni == 0 ? 1.0 : inter / uni;
}

inline std::vector<std::pair<long, long>> contour(const hmhi::Mask& m) {
  std::vector<std::pair<long, long>> out;
  const long h = static_cast<long>(m.height), w = static_cast<long>(m.width);
  auto fg = [&](long y, long x) { return y >= 0 && x >= 0 && y < h && x < w && m.at(std::size_t(y), std::size_t(x)) == 1; };
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x)
      if (fg(y, x) && (!fg(y - 1, x) || !fg(y + 1, x) || !fg(y, x - 1) || !fg(y, x + 1))) out.emplace_back(y, x);
  return out;
}

inline double boundary_f(const hmhi::Mask& pred, const hmhi::Mask& gt, long tol) {
  const auto pb = contour(pred), gb = contour(gt);
  if (pb.empty() && gb.empty()) return 1.0;
  if (pb.empty() || gb.empty()) return 0.0;
  auto matched = [&](const std::vector<std::pair<long, long>>& from, const std::vector<std::pair<long, long>>& to) {
    double n = 0;
    for (const auto& a : from)
      for (const auto& b : to)
        if (std::max(std::labs(a.first - b.first), std::labs(a.second - b.second)) <= tol) {
          ++n;
          break;
        }
    return n / double(from.size());
  };
  const double p = matched(pb, gb), r = matched(gb, pb);
  return p + r > 0 ? 2 * p * r / (p + r) : 0.0;
}

inline double mae(const hmhi::ProbMap& p, const hmhi::Mask& g) {
  double s = 0;
  for (std::size_t i = 0; i < p.values.size(); ++i) s += std::abs(p.values[i] - double(g.pixels[i]));
  return s / double(p.values.size());
}

inline double max_f(const hmhi::ProbMap& p, const hmhi::Mask& g) {
  double best = 0;
  for (int j = 1; j <= 255; ++j) {
    const double t = j / 256.0;
    double tp = 0, pp = 0, pos = 0;
    for (std::size_t i = 0; i < p.values.size(); ++i) {
      pp += p.values[i] >= t;
      pos += g.pixels[i];
      tp += p.values[i] >= t && g.pixels[i];
    }
    const double prec = pp > 0 ? tp / pp : 0.0, rec = pos > 0 ? tp / pos : 0.0;
    if (0.3 * prec + rec > 0) best = std::max(best, 1.3 * prec * rec / (0.3 * prec + rec));
  }
  return best;
}

// Random blobby masks: a few filled rectangles plus salt noise.
inline hmhi::Mask random_mask(std::size_t h, std::size_t w, hmhi::Rng& rng) {
  hmhi::Mask m = hmhi::Mask::zeros(h, w);
  const auto rects = rng.uniform_int(0, 3);
  for (std::int64_t r = 0; r < rects; ++r) {
    const auto y0 = std::size_t(rng.uniform_int(0, std::int64_t(h) - 1)), x0 = std::size_t(rng.uniform_int(0, std::int64_t(w) - 1));
    const auto y1 = std::size_t(rng.uniform_int(std::int64_t(y0), std::int64_t(h) - 1));
    const auto x1 = std::size_t(rng.uniform_int(std::int64_t(x0), std::int64_t(w) - 1));
    for (std::size_t y = y0; y <= y1; ++y)
      for (std::size_t x = x0; x <= x1; ++x) m.set(y, x, true);
  }
  const double salt = rng.uniform(0, 0.1);
  for (auto& px : m.pixels)
    if (rng.uniform() < salt) px = 1 - px;
  return m;
}

}  // namespace oracle
