#include "hmhi/encoder_decoder.hpp"

namespace hmhi {

void PyramidConfig::validate() const {
  if (side == 0 || side % 32 != 0) {
    throw ShapeError("image side must be a positive multiple of 32, got " + std::to_string(side));
  }
  for (std::size_t i = 0; i < channels.size(); ++i) {
    if (channels[i] == 0 || (i > 0 && channels[i] <= channels[i - 1])) {
      throw ConfigError("pyramid channels must be positive and strictly increasing");
    }
  }
}

std::size_t PyramidConfig::level_side(int level) const {
  if (level < 1 || level > 4) throw ConfigError("pyramid level must be in 1..4");
  return side >> (level + 1);
}

std::size_t PyramidConfig::level_channels(int level) const {
  if (level < 1 || level > 4) throw ConfigError("pyramid level must be in 1..4");
  return channels[static_cast<std::size_t>(level - 1)];
}

std::size_t PyramidConfig::level_tokens(int level) const { return level_side(level) * level_side(level); }

std::string to_string(Stage stage) {
  switch (stage) {
    case Stage::raw: return "raw";
    case Stage::mem_refined: return "mem_refined";
    case Stage::interacted: return "interacted";
  }
  return "?";
}

std::string to_string(InputMode mode) {
  switch (mode) {
    case InputMode::both: return "both";
    case InputMode::image: return "image";
    case InputMode::flow: return "flow";
  }
  return "?";
}

InputMode parse_input_mode(const std::string& text) {
  if (text == "both") return InputMode::both;
  if (text == "image") return InputMode::image;
  if (text == "flow") return InputMode::flow;
  throw ConfigError("unknown input mode '" + text + "' (expected image|flow|both)");
}

void PyramidLevel::advance(Tensor next, Stage to) {
  if (static_cast<int>(to) <= static_cast<int>(stage)) {
    throw StageError("illegal stage transition " + to_string(stage) + " -> " + to_string(to));
  }
  if (next.shape() != fused.shape()) {
    throw ShapeError("level feature changed shape from " + shape_str(fused.shape()) + " to " + shape_str(next.shape()));
  }
  fused = std::move(next);
  stage = to;
}

EncoderTower EncoderTower::create(ParamStore& store, const std::string& name, const PyramidConfig& config, Rng& rng) {
  const auto& c = config.channels;
  EncoderTower t;
  t.stem1 = Conv2d::create(store, join_name(name, "stage1.conv1"), 3, c[0], 3, 2, 1, rng);
  t.stem2 = Conv2d::create(store, join_name(name, "stage1.conv2"), c[0], c[0], 3, 2, 1, rng);
  t.stage2 = Conv2d::create(store, join_name(name, "stage2.conv"), c[0], c[1], 3, 2, 1, rng);
  t.stage3 = Conv2d::create(store, join_name(name, "stage3.conv"), c[1], c[2], 3, 2, 1, rng);
  t.stage4 = Conv2d::create(store, join_name(name, "stage4.conv"), c[2], c[3], 3, 2, 1, rng);
  return t;
}

EncoderParams EncoderParams::create(ParamStore& store, const PyramidConfig& config, bool share_towers, Rng& rng) {
  EncoderParams p;
  if (share_towers) {
    p.image = EncoderTower::create(store, "encoder.shared", config, rng);
    p.flow = p.image;
  } else {
    p.image = EncoderTower::create(store, "encoder.image", config, rng);
    p.flow = EncoderTower::create(store, "encoder.flow", config, rng);
  }
  return p;
}

DecoderParams DecoderParams::create(ParamStore& store, const PyramidConfig& config, Rng& rng) {
  const auto& c = config.channels;
  DecoderParams d;
  d.proj43 = Linear::create(store, "decoder.proj43", c[3], c[2], rng);
  d.fuse3 = Conv2d::create(store, "decoder.fuse3", c[2], c[2], 3, 1, 1, rng);
  d.proj32 = Linear::create(store, "decoder.proj32", c[2], c[1], rng);
  d.fuse2 = Conv2d::create(store, "decoder.fuse2", c[1], c[1], 3, 1, 1, rng);
  d.proj21 = Linear::create(store, "decoder.proj21", c[1], c[0], rng);
  d.fuse1 = Conv2d::create(store, "decoder.fuse1", c[0], c[0], 3, 1, 1, rng);
  d.head = Conv2d::create(store, "decoder.head", c[0], 1, 3, 1, 1, rng);
  return d;
}

namespace {

std::array<Tensor, 4> run_tower(const EncoderTower& t, const Tensor& input) {
  std::array<Tensor, 4> maps;
  maps[0] = relu(conv_apply(t.stem2, relu(conv_apply(t.stem1, input))));
  maps[1] = relu(conv_apply(t.stage2, maps[0]));
  maps[2] = relu(conv_apply(t.stage3, maps[1]));
  maps[3] = relu(conv_apply(t.stage4, maps[2]));
  return maps;
}

void check_input(const Tensor& t, const PyramidConfig& config, const char* what) {
  const auto& s = t.shape();
  if (s.size() != 3 || s[0] != 3 || s[1] != config.side || s[2] != config.side) {
    throw ShapeError(std::string("encode_frame: ") + what + " must be [3x" + std::to_string(config.side) + "x" +
                     std::to_string(config.side) + "], got " + shape_str(s));
  }
}

}  // namespace

FeaturePyramid encode_frame(const Tensor& image, const Tensor& flow, const EncoderParams& params,
                            const PyramidConfig& config, InputMode mode) {
  config.validate();
  check_input(image, config, "image");
  check_input(flow, config, "flow");

  std::array<Tensor, 4> image_maps, flow_maps;
  if (mode != InputMode::flow) image_maps = run_tower(params.image, image);
  if (mode != InputMode::image) flow_maps = run_tower(params.flow, flow);

  FeaturePyramid pyr;
  for (int i = 1; i <= 4; ++i) {
    auto& lvl = pyr.level(i);
    const auto idx = static_cast<std::size_t>(i - 1);
    lvl.height = lvl.width = config.level_side(i);
    const Shape token_shape{config.level_tokens(i), config.level_channels(i)};
    lvl.image = mode != InputMode::flow ? map_to_tokens(image_maps[idx]) : Tensor::zeros(token_shape);
    lvl.flow = mode != InputMode::image ? map_to_tokens(flow_maps[idx]) : Tensor::zeros(token_shape);
    switch (mode) {
      case InputMode::both: lvl.fused = add(lvl.image, lvl.flow); break;
      case InputMode::image: lvl.fused = lvl.image; break;
      case InputMode::flow: lvl.fused = lvl.flow; break;
    }
    lvl.stage = Stage::raw;
  }
  return pyr;
}

namespace {

void check_stages(const FeaturePyramid& pyr, DecodeStages expected) {
  for (int i = 1; i <= 4; ++i) {
    const Stage s = pyr.level(i).stage;
    bool ok = true;
    if (expected == DecodeStages::baseline) {
      ok = s == Stage::raw;
    } else if (i == 2 || i == 4) {
      ok = s == Stage::interacted;
    } else {
      ok = s != Stage::interacted;
    }
    if (!ok) {
      throw StageError("decode: level " + std::to_string(i) + " is " + to_string(s) + ", not valid for " +
                       (expected == DecodeStages::baseline ? "baseline" : "memory") + " decoding");
    }
  }
}

// proj -> 2x bilinear -> add skip -> conv+relu.
Tensor merge_up(const Tensor& coarse_map, const Linear& proj, const Conv2d& fuse, const PyramidLevel& skip) {
  const std::size_t h = coarse_map.dim(1), w = coarse_map.dim(2);
  const Tensor projected = tokens_to_map(linear_apply(proj, map_to_tokens(coarse_map)), h, w);
  const Tensor up = upsample_bilinear(projected, 2);
  return relu(conv_apply(fuse, add(up, tokens_to_map(skip.fused, skip.height, skip.width))));
}

}  // namespace

Tensor decode(const FeaturePyramid& pyramid, const DecoderParams& params, const PyramidConfig& config,
              DecodeStages expected) {
  check_stages(pyramid, expected);
  for (int i = 1; i <= 4; ++i) {
    const auto& lvl = pyramid.level(i);
    const Shape want{config.level_tokens(i), config.level_channels(i)};
    if (lvl.fused.shape() != want) {
      throw ShapeError("decode: level " + std::to_string(i) + " feature " + shape_str(lvl.fused.shape()) +
                       ", expected " + shape_str(want));
    }
  }
  const auto& top = pyramid.level(4);
  Tensor x = tokens_to_map(top.fused, top.height, top.width);
  x = merge_up(x, params.proj43, params.fuse3, pyramid.level(3));
  x = merge_up(x, params.proj32, params.fuse2, pyramid.level(2));
  x = merge_up(x, params.proj21, params.fuse1, pyramid.level(1));
  return upsample_bilinear(conv_apply(params.head, x), 4);
}

}  // namespace hmhi
