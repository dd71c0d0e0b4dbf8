#include "hmhi/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

namespace hmhi {

namespace {

void check_same(std::size_t h1, std::size_t w1, std::size_t h2, std::size_t w2, const char* op) {
  if (h1 != h2 || w1 != w2) {
    throw ShapeError(std::string(op) + ": " + std::to_string(h1) + "x" + std::to_string(w1) + " vs " +
                     std::to_string(h2) + "x" + std::to_string(w2));
  }
}

// Marks every pixel within Chebyshev distance `radius` of a set pixel.
Mask dilate_square(const Mask& m, int radius) {
  const std::size_t h = m.height, w = m.width;
  // Summed-area table with a zero border row/column.
  std::vector<std::size_t> sat((h + 1) * (w + 1), 0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      sat[(y + 1) * (w + 1) + x + 1] =
          m.at(y, x) + sat[y * (w + 1) + x + 1] + sat[(y + 1) * (w + 1) + x] - sat[y * (w + 1) + x];
  Mask out = Mask::zeros(h, w);
  const auto r = static_cast<std::ptrdiff_t>(std::max(radius, 0));
  for (std::size_t y = 0; y < h; ++y) {
    const auto y0 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(y) - r));
    const std::size_t y1 = std::min(h, y + static_cast<std::size_t>(r) + 1);
    for (std::size_t x = 0; x < w; ++x) {
      const auto x0 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(x) - r));
      const std::size_t x1 = std::min(w, x + static_cast<std::size_t>(r) + 1);
      const std::size_t n = sat[y1 * (w + 1) + x1] - sat[y0 * (w + 1) + x1] - sat[y1 * (w + 1) + x0] + sat[y0 * (w + 1) + x0];
      out.set(y, x, n > 0);
    }
  }
  return out;
}

std::size_t count_and(const Mask& a, const Mask& b) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) n += (a.pixels[i] && b.pixels[i]);
  return n;
}

double f_beta(std::size_t tp, std::size_t predicted, std::size_t positives) {
  const double precision = predicted ? static_cast<double>(tp) / static_cast<double>(predicted) : 0.0;
  const double recall = positives ? static_cast<double>(tp) / static_cast<double>(positives) : 0.0;
  const double denom = kFBetaSquared * precision + recall;
  return denom > 0.0 ? (1.0 + kFBetaSquared) * precision * recall / denom : 0.0;
}

void check_prob(const ProbMap& p) {
  for (double v : p.values) {
    if (!(v >= 0.0 && v <= 1.0)) throw NumericError("probability outside [0, 1]");
  }
}

}  // namespace

double region_similarity(const Mask& pred, const Mask& gt) {
  check_same(pred.height, pred.width, gt.height, gt.width, "region_similarity");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.pixels.size(); ++i) {
    inter += pred.pixels[i] && gt.pixels[i];
    uni += pred.pixels[i] || gt.pixels[i];
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

Mask boundary_pixels(const Mask& mask) {
  Mask out = Mask::zeros(mask.height, mask.width);
  const std::size_t h = mask.height, w = mask.width;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (!mask.at(y, x)) continue;
      const bool edge = y == 0 || x == 0 || y + 1 == h || x + 1 == w || !mask.at(y - 1, x) || !mask.at(y + 1, x) ||
                        !mask.at(y, x - 1) || !mask.at(y, x + 1);
      out.set(y, x, edge);
    }
  }
  return out;
}

int default_boundary_tolerance(std::size_t height, std::size_t width) {
  const double diag = std::sqrt(static_cast<double>(height * height + width * width));
  return static_cast<int>(std::ceil(0.008 * diag));
}

double boundary_f(const Mask& pred, const Mask& gt, int tolerance) {
  check_same(pred.height, pred.width, gt.height, gt.width, "boundary_f");
  const Mask pb = boundary_pixels(pred);
  const Mask gb = boundary_pixels(gt);
  const std::size_t np = pb.count(), ng = gb.count();
  if (np == 0 && ng == 0) return 1.0;
  if (np == 0 || ng == 0) return 0.0;
  const double precision = static_cast<double>(count_and(pb, dilate_square(gb, tolerance))) / static_cast<double>(np);
  const double recall = static_cast<double>(count_and(gb, dilate_square(pb, tolerance))) / static_cast<double>(ng);
  return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

double mae(const ProbMap& pred, const Mask& gt) {
  check_same(pred.height, pred.width, gt.height, gt.width, "mae");
  check_prob(pred);
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.values.size(); ++i) acc += std::abs(pred.values[i] - gt.pixels[i]);
  return acc / static_cast<double>(pred.values.size());
}

double max_f_measure(const ProbMap& pred, const Mask& gt) {
  check_same(pred.height, pred.width, gt.height, gt.width, "max_f_measure");
  // bin b = number of thresholds j/256 (j >= 1) that the pixel reaches; exact
  // because scaling by 256 is exact in binary floating point.
  std::array<std::size_t, kFThresholds + 1> all{}, hit{};
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    const double scaled = std::floor(pred.values[i] * 256.0);
    const auto bin = static_cast<std::size_t>(std::clamp(scaled, 0.0, static_cast<double>(kFThresholds)));
    ++all[bin];
    if (gt.pixels[i]) ++hit[bin];
  }
  const std::size_t positives = gt.count();
  double best = 0.0;
  std::size_t predicted = 0, tp = 0;
  for (int j = kFThresholds; j >= 1; --j) {
    predicted += all[static_cast<std::size_t>(j)];
    tp += hit[static_cast<std::size_t>(j)];
    best = std::max(best, f_beta(tp, predicted, positives));
  }
  return best;
}

double f_beta_at(const ProbMap& pred, const Mask& gt, double threshold) {
  check_same(pred.height, pred.width, gt.height, gt.width, "f_beta_at");
  std::size_t tp = 0, predicted = 0;
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    if (pred.values[i] >= threshold) {
      ++predicted;
      tp += gt.pixels[i];
    }
  }
  return f_beta(tp, predicted, gt.count());
}

Mask binarize(const ProbMap& prob, double threshold) {
  Mask m = Mask::zeros(prob.height, prob.width);
  for (std::size_t i = 0; i < prob.values.size(); ++i) m.pixels[i] = prob.values[i] >= threshold ? 1 : 0;
  return m;
}

FrameMetrics evaluate_frame(const ProbMap& prob, const Mask& gt, double threshold, int boundary_tolerance) {
  const Mask pred = binarize(prob, threshold);
  FrameMetrics m;
  m.j = region_similarity(pred, gt);
  m.f = boundary_f(pred, gt, boundary_tolerance);
  m.jf = 0.5 * (m.j + m.f);
  m.mae = mae(prob, gt);
  m.fm = max_f_measure(prob, gt);
  return m;
}

namespace {

FrameMetrics mean_of(const std::vector<FrameMetrics>& items) {
  FrameMetrics m;
  if (items.empty()) return m;
  for (const auto& f : items) {
    m.j += f.j;
    m.f += f.f;
    m.mae += f.mae;
    m.fm += f.fm;
  }
  const double n = static_cast<double>(items.size());
  m.j /= n;
  m.f /= n;
  m.mae /= n;
  m.fm /= n;
  m.jf = 0.5 * (m.j + m.f);
  return m;
}

}  // namespace

SequenceReport summarize(std::string name, std::vector<FrameMetrics> frames) {
  SequenceReport r;
  r.name = std::move(name);
  r.mean = mean_of(frames);
  r.frames = std::move(frames);
  return r;
}

FrameMetrics aggregate(const std::vector<SequenceReport>& sequences) {
  std::vector<FrameMetrics> means;
  for (const auto& s : sequences) means.push_back(s.mean);
  return mean_of(means);
}

nlohmann::json to_json(const FrameMetrics& m) {
  return {{"J", m.j}, {"F", m.f}, {"J&F", m.jf}, {"MAE", m.mae}, {"F_m", m.fm}};
}

nlohmann::json to_json(const SequenceReport& report) {
  nlohmann::json j = to_json(report.mean);
  j["sequence"] = report.name;
  j["frames"] = report.frames.size();
  j["per_frame"] = nlohmann::json::array();
  for (const auto& f : report.frames) j["per_frame"].push_back(to_json(f));
  return j;
}

std::string to_json_lines(const std::vector<SequenceReport>& sequences) {
  std::ostringstream os;
  std::size_t frames = 0;
  for (const auto& s : sequences) {
    os << to_json(s).dump() << '\n';
    frames += s.frames.size();
  }
  nlohmann::json agg = to_json(aggregate(sequences));
  agg["sequence"] = "*";
  agg["sequences"] = sequences.size();
  agg["frames"] = frames;
  os << agg.dump() << '\n';
  return os.str();
}

}  // namespace hmhi
