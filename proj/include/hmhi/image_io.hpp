#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "hmhi/mask.hpp"
#include "hmhi/synthdata.hpp"
#include "hmhi/tensor.hpp"

namespace hmhi {

/// Masks as 8-bit grayscale PNG (".png") or ASCII PGM (".pgm"), chosen by
/// extension. Writing emits 0/255; reading treats values >= 128 as foreground.
void write_mask(const std::filesystem::path& path, const Mask& mask);
Mask read_mask(const std::filesystem::path& path);

// P2 layout: "P2\n<w> <h>\n255\n", then one line per row of space-separated values.
std::string encode_pgm(const Mask& mask);
Mask decode_pgm(const std::string& text);

/// [3, H, W] in [0, 1] <-> 8-bit RGB PNG (values rounded to the nearest 1/255).
void write_rgb_png(const std::filesystem::path& path, const Tensor& image);
Tensor read_rgb_png(const std::filesystem::path& path);

/// Probability map as an 8-bit grayscale PNG.
void write_prob_png(const std::filesystem::path& path, const ProbMap& prob);

/// Writes frames/, flows/ and masks/ as PNG plus manifest.json into `dir` and
/// returns the manifest path. Paths in the manifest are relative to it.
std::filesystem::path save_clip(const ClipSample& clip, const std::filesystem::path& dir);

/// Reads a manifest written by save_clip. Frames and flows carry the 8-bit
/// quantization of the PNG files; flow_fields and surfaces are left empty.
ClipSample load_clip(const std::filesystem::path& manifest);

/// Sequence name used in reports: the manifest's parent directory name.
std::string clip_name(const std::filesystem::path& manifest);

}  // namespace hmhi
