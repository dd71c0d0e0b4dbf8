#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "hmhi/mask.hpp"

namespace hmhi {

/// Intersection over union; two empty masks score 1.
double region_similarity(const Mask& pred, const Mask& gt);

/// Foreground pixels with a 4-neighbour that is background or outside the image.
Mask boundary_pixels(const Mask& mask);

/// ceil(0.008 * image diagonal), the DAVIS default.
int default_boundary_tolerance(std::size_t height, std::size_t width);

/// Contour F1: a boundary pixel matches when some boundary pixel of the other
/// mask lies within Chebyshev distance `tolerance`. Both contours empty gives 1;
/// exactly one empty gives 0.
double boundary_f(const Mask& pred, const Mask& gt, int tolerance);

/// Mean |p - g|. Throws NumericError for probabilities outside [0, 1].
double mae(const ProbMap& pred, const Mask& gt);

inline constexpr double kFBetaSquared = 0.3;
inline constexpr int kFThresholds = 255;

/// Max over thresholds t_j = j/256 (j = 1..255) of F_beta with beta^2 = 0.3,
/// binarising p >= t_j. Precision with no positive predictions is 0.
double max_f_measure(const ProbMap& pred, const Mask& gt);

/// F_beta at a single threshold, computed by direct counting.
double f_beta_at(const ProbMap& pred, const Mask& gt, double threshold);

Mask binarize(const ProbMap& prob, double threshold);

struct FrameMetrics {
  double j = 0.0;
  double f = 0.0;
  double jf = 0.0;
  double mae = 0.0;
  double fm = 0.0;
};

FrameMetrics evaluate_frame(const ProbMap& prob, const Mask& gt, double threshold, int boundary_tolerance);

struct SequenceReport {
  std::string name;
  std::vector<FrameMetrics> frames;
  FrameMetrics mean;
};

SequenceReport summarize(std::string name, std::vector<FrameMetrics> frames);
/// Mean of per-sequence means.
FrameMetrics aggregate(const std::vector<SequenceReport>& sequences);

nlohmann::json to_json(const FrameMetrics& m);
nlohmann::json to_json(const SequenceReport& report);
/// One JSON object per sequence, then an aggregate object with "sequence": "*".
std::string to_json_lines(const std::vector<SequenceReport>& sequences);

}  // namespace hmhi
