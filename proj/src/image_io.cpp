#include "hmhi/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

namespace hmhi {

namespace {

std::string lower_ext(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return ext;
}

void write_png(const std::filesystem::path& path, std::size_t height, std::size_t width, std::uint32_t format,
               const std::vector<std::uint8_t>& bytes) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = format;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, bytes.data(), 0, nullptr)) {
    throw IoError("cannot write " + path.string() + ": " + image.message);
  }
}

struct PngData {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> bytes;
};

PngData read_png(const std::filesystem::path& path, std::uint32_t format, bool require_gray) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    throw IoError("cannot read " + path.string() + ": " + image.message);
  }
  if (require_gray && (image.format & PNG_FORMAT_FLAG_COLOR)) {
    png_image_free(&image);
    throw IoError(path.string() + " is not a grayscale image");
  }
  image.format = format;
  PngData out{image.height, image.width, std::vector<std::uint8_t>(PNG_IMAGE_SIZE(image))};
  if (!png_image_finish_read(&image, nullptr, out.bytes.data(), 0, nullptr)) {
    throw IoError("cannot decode " + path.string() + ": " + image.message);
  }
  return out;
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string encode_pgm(const Mask& mask) {
  std::ostringstream out;
  out << "P2\n" << mask.width << ' ' << mask.height << "\n255\n";
  for (std::size_t y = 0; y < mask.height; ++y) {
    for (std::size_t x = 0; x < mask.width; ++x) out << (x ? " " : "") << (mask.at(y, x) ? 255 : 0);
    out << '\n';
  }
  return out.str();
}

Mask decode_pgm(const std::string& text) {
  // Strip comments, then read whitespace-separated tokens.
  std::string clean;
  std::istringstream lines(text);
  for (std::string line; std::getline(lines, line);) {
    clean += line.substr(0, line.find('#'));
    clean += '\n';
  }
  std::istringstream in(clean);
  std::string magic;
  long long w = -1, h = -1, maxval = -1;
  in >> magic >> w >> h >> maxval;
  if (magic != "P2" || !in || w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) {
    throw IoError("not an ASCII (P2) PGM image");
  }
  Mask mask = Mask::zeros(static_cast<std::size_t>(h), static_cast<std::size_t>(w));
  const long long cut = maxval == 255 ? 128 : (maxval + 1) / 2;
  for (auto& p : mask.pixels) {
    long long v = -1;
    if (!(in >> v) || v < 0 || v > maxval) throw IoError("PGM: truncated or out-of-range pixel data");
    p = v >= cut ? 1 : 0;
  }
  return mask;
}

void write_mask(const std::filesystem::path& path, const Mask& mask) {
  if (mask.pixels.size() != mask.height * mask.width) throw ShapeError("write_mask: pixel count does not match H x W");
  const std::string ext = lower_ext(path);
  if (ext == ".pgm") {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << encode_pgm(mask);
    return;
  }
  if (ext != ".png") throw IoError("unsupported mask extension '" + ext + "' (use .png or .pgm)");
  std::vector<std::uint8_t> bytes(mask.pixels.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = mask.pixels[i] ? 255 : 0;
  write_png(path, mask.height, mask.width, PNG_FORMAT_GRAY, bytes);
}

Mask read_mask(const std::filesystem::path& path) {
  const std::string ext = lower_ext(path);
  if (ext == ".pgm") return decode_pgm(read_file(path));
  if (ext != ".png") throw IoError("unsupported mask extension '" + ext + "' (use .png or .pgm)");
  const PngData png = read_png(path, PNG_FORMAT_GRAY, true);
  Mask mask = Mask::zeros(png.height, png.width);
  for (std::size_t i = 0; i < mask.pixels.size(); ++i) mask.pixels[i] = png.bytes[i] >= 128 ? 1 : 0;
  return mask;
}

void write_rgb_png(const std::filesystem::path& path, const Tensor& image) {
  const auto& s = image.shape();
  if (s.size() != 3 || s[0] != 3) throw ShapeError("write_rgb_png: expected [3,H,W], got " + shape_str(s));
  const std::size_t n = s[1] * s[2];
  const auto data = image.data();
  std::vector<std::uint8_t> bytes(3 * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < 3; ++c) bytes[3 * i + c] = to_byte(data[c * n + i]);
  }
  write_png(path, s[1], s[2], PNG_FORMAT_RGB, bytes);
}

Tensor read_rgb_png(const std::filesystem::path& path) {
  const PngData png = read_png(path, PNG_FORMAT_RGB, false);
  const std::size_t n = png.height * png.width;
  std::vector<double> values(3 * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < 3; ++c) values[c * n + i] = png.bytes[3 * i + c] / 255.0;
  }
  return Tensor::from({3, png.height, png.width}, std::move(values));
}

void write_prob_png(const std::filesystem::path& path, const ProbMap& prob) {
  std::vector<std::uint8_t> bytes(prob.values.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = to_byte(prob.values[i]);
  write_png(path, prob.height, prob.width, PNG_FORMAT_GRAY, bytes);
}

std::filesystem::path save_clip(const ClipSample& clip, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  for (const char* sub : {"frames", "flows", "masks"}) fs::create_directories(dir / sub);
  nlohmann::json manifest;
  manifest["scenario"] = to_string(clip.scenario);
  manifest["seed"] = clip.seed;
  manifest["height"] = clip.height;
  manifest["width"] = clip.width;
  manifest["length"] = clip.length();
  manifest["flow_max_mag"] = clip.flow_max_mag;
  for (const char* key : {"frames", "flows", "masks"}) manifest[key] = nlohmann::json::array();
  for (std::size_t t = 0; t < clip.length(); ++t) {
    std::ostringstream id;
    id << std::setw(5) << std::setfill('0') << t;
    const std::string frame = "frames/" + id.str() + ".png";
    const std::string flow = "flows/" + id.str() + ".png";
    const std::string mask = "masks/" + id.str() + ".png";
    write_rgb_png(dir / frame, clip.frames[t]);
    write_rgb_png(dir / flow, clip.flows[t]);
    write_mask(dir / mask, clip.gt_masks[t]);
    manifest["frames"].push_back(frame);
    manifest["flows"].push_back(flow);
    manifest["masks"].push_back(mask);
  }
  const fs::path path = dir / "manifest.json";
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << manifest.dump(2) << '\n';
  return path;
}

ClipSample load_clip(const std::filesystem::path& manifest_path) {
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(read_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  const auto base = manifest_path.parent_path();
  ClipSample clip;
  try {
    clip.scenario = parse_scenario(m.at("scenario").get<std::string>());
    clip.seed = m.at("seed").get<std::uint64_t>();
    clip.height = m.at("height").get<std::size_t>();
    clip.width = m.at("width").get<std::size_t>();
    clip.flow_max_mag = m.value("flow_max_mag", 0.1 * static_cast<double>(clip.height));
    const auto& frames = m.at("frames");
    const auto& flows = m.at("flows");
    const auto& masks = m.at("masks");
    if (frames.size() != flows.size() || frames.size() != masks.size()) {
      throw IoError("manifest " + manifest_path.string() + ": frame/flow/mask lists differ in length");
    }
    for (std::size_t t = 0; t < frames.size(); ++t) {
      clip.frames.push_back(read_rgb_png(base / frames[t].get<std::string>()));
      clip.flows.push_back(read_rgb_png(base / flows[t].get<std::string>()));
      clip.gt_masks.push_back(read_mask(base / masks[t].get<std::string>()));
      const auto& f = clip.frames.back();
      const auto& g = clip.gt_masks.back();
      if (f.dim(1) != clip.height || f.dim(2) != clip.width || g.height != clip.height || g.width != clip.width ||
          clip.flows.back().shape() != f.shape()) {
        throw IoError("manifest " + manifest_path.string() + ": image " + std::to_string(t) +
                      " does not match the declared size");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  return clip;
}

std::string clip_name(const std::filesystem::path& manifest) {
  const auto parent = manifest.parent_path().filename().string();
  return parent.empty() ? manifest.stem().string() : parent;
}

}  // namespace hmhi
