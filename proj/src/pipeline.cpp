#include "hmhi/pipeline.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>

#include "hmhi/serialize.hpp"

namespace hmhi {

ModelParams ModelParams::create(const RunConfig& config) {
  config.validate();
  ModelParams p;
  p.config = config;
  Rng rng(config.seed);
  const auto& pc = config.pyramid;
  p.encoder = EncoderParams::create(p.store, pc, config.share_towers, rng);
  p.decoder = DecoderParams::create(p.store, pc, rng);
  for (int level = 1; level <= 4; ++level) {
    const std::string name = "memory.l" + std::to_string(level);
    const std::size_t c = pc.level_channels(level);
    p.readers.emplace(level, MemoryReadParams::create(p.store, name, c, config.attention, config.ffn_ratio,
                                                      config.self_attn_residual, rng));
    p.writers.emplace(level, MemoryEncoderParams::create(p.store, name + ".encoder", c, config.ffn_ratio, rng));
  }
  const std::size_t c2 = pc.level_channels(2), c4 = pc.level_channels(4);
  p.interaction.plam = PlamParams::create(p.store, "plam", c2, c4, config.ffn_ratio, rng);
  p.interaction.sgim = SgimParams::create(p.store, "sgim", c2, c4, config.attention, config.ffn_ratio, rng);
  p.interaction.swap = SwapAdapters::create(p.store, "swap", c2, c4, rng);
  return p;
}

ModelParams ModelParams::clone() const {
  ModelParams copy = create(config);
  for (const auto& [name, t] : store.all()) {
    Tensor dst = copy.store.get(name);
    std::copy(t.data().begin(), t.data().end(), dst.mutable_data().begin());
  }
  return copy;
}

SessionState::SessionState(RunConfig run_config) : config(std::move(run_config)) {
  config.validate();
  for (int level : config.memory_levels) {
    banks.emplace(level, MemoryBank(level, config.memory_capacity, config.memory_stride));
  }
}

bool SessionState::memory_empty() const {
  return std::all_of(banks.begin(), banks.end(), [](const auto& kv) { return kv.second.empty(); });
}

namespace {

void check_compatible(const RunConfig& run, const RunConfig& model) {
  if (run.pyramid.side != model.pyramid.side || run.pyramid.channels != model.pyramid.channels) {
    throw ConfigError("run configuration geometry (side/channels) does not match the model parameters");
  }
}

LevelGrid grid_of(const PyramidLevel& lvl) { return {lvl.height, lvl.width}; }

}  // namespace

Tensor process_frame(SessionState& state, const Tensor& image, const Tensor& flow, const ModelParams& params,
                     FrameTrace* trace) {
  const RunConfig& run = state.config;
  check_compatible(run, params.config);
  const PyramidConfig& pc = params.config.pyramid;

  FeaturePyramid pyr = encode_frame(image, flow, params.encoder, pc, run.input_mode);
  const bool bypass = state.cursor == 0;
  std::map<int, Tensor> scores;
  Tensor logits;
  if (bypass) {
    logits = decode(pyr, params.decoder, pc, DecodeStages::baseline);
  } else {
    for (int level = 1; level <= 4; ++level) {
      auto& lvl = pyr.level(level);
      auto bank = state.banks.find(level);
      if (bank != state.banks.end() && !bank->second.empty()) {
        auto readout = mem_refine(lvl.fused, bank->second, params.readers.at(level));
        lvl.advance(readout.refined, Stage::mem_refined);
        scores.emplace(level, readout.scores);
      } else if (level == 2 || level == 4) {
        lvl.advance(lvl.fused, Stage::mem_refined);  // no memory at this level: identity
      }
    }
    auto& shallow = pyr.level(2);
    auto& high = pyr.level(4);
    auto out = interact(shallow.fused, grid_of(shallow), high.fused, grid_of(high), params.interaction, run.interaction);
    shallow.advance(out.shallow, Stage::interacted);
    high.advance(out.high, Stage::interacted);
    logits = decode(pyr, params.decoder, pc, DecodeStages::memory);
  }

  for (auto& [level, bank] : state.banks) {
    const auto& lvl = pyr.level(level);
    memory_update(bank, lvl.fused, logits, state.cursor, lvl.height, lvl.width, params.writers.at(level),
                  run.detach_memory);
  }
  ++state.cursor;

  if (trace) {
    trace->pyramid = std::move(pyr);
    trace->bypassed = bypass;
    trace->scores = std::move(scores);
  }
  return logits;
}

Tensor baseline_forward(const Tensor& image, const Tensor& flow, const ModelParams& params, InputMode mode) {
  const PyramidConfig& pc = params.config.pyramid;
  return decode(encode_frame(image, flow, params.encoder, pc, mode), params.decoder, pc, DecodeStages::baseline);
}

std::vector<Tensor> process_video(const std::vector<Tensor>& frames, const std::vector<Tensor>& flows,
                                  const ModelParams& params, const RunConfig& config) {
  if (frames.size() != flows.size()) {
    throw ShapeError("process_video: " + std::to_string(frames.size()) + " frames but " +
                     std::to_string(flows.size()) + " flow maps");
  }
  if (frames.empty()) throw ShapeError("process_video: empty video");
  SessionState state(config);
  std::vector<Tensor> out;
  out.reserve(frames.size());
  for (std::size_t t = 0; t < frames.size(); ++t) out.push_back(process_frame(state, frames[t], flows[t], params));
  return out;
}

Tensor clip_loss(const ClipSample& clip, const ModelParams& params, const RunConfig& config) {
  const std::size_t len = config.sequence_length;
  if (clip.length() == 0) throw ShapeError("train: empty clip");
  if (clip.length() < len) {
    throw ShapeError("train: clip has " + std::to_string(clip.length()) + " frames, sequence length is " +
                     std::to_string(len));
  }
  const std::vector<Tensor> frames(clip.frames.begin(), clip.frames.begin() + static_cast<std::ptrdiff_t>(len));
  const std::vector<Tensor> flows(clip.flows.begin(), clip.flows.begin() + static_cast<std::ptrdiff_t>(len));
  const auto logits = process_video(frames, flows, params, config);
  Tensor total;
  for (std::size_t t = 0; t < len; ++t) {
    Tensor l = combined_loss(logits[t], clip.gt_masks[t], config.loss);
    total = total.defined() ? add(total, l) : l;
  }
  return scale(total, 1.0 / static_cast<double>(len));
}

void AdamW::step(ParamStore& store) {
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (const auto& [name, handle] : store.all()) {
    Tensor param = handle;
    auto values = param.mutable_data();
    auto& m = m_[name];
    auto& v = v_[name];
    if (m.empty()) {
      m.assign(values.size(), 0.0);
      v.assign(values.size(), 0.0);
    }
    const bool has_grad = param.has_grad();
    const std::span<const double> grad = has_grad ? param.grad() : std::span<const double>{};
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = has_grad ? grad[i] : 0.0;
      values[i] -= config_.lr * config_.weight_decay * values[i];
      m[i] = b1 * m[i] + (1.0 - b1) * g;
      v[i] = b2 * v[i] + (1.0 - b2) * g * g;
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      values[i] -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps);
    }
  }
}

double train_step(const ClipSample& clip, ModelParams& params, AdamW& optimizer, const RunConfig& config) {
  params.store.zero_grad();
  const Tensor loss = clip_loss(clip, params, config);
  const double value = loss.item();
  if (!std::isfinite(value)) throw NumericError("train_step: non-finite loss");
  loss.backward();
  optimizer.step(params.store);
  return value;
}

ProbMap logits_to_prob(const Tensor& logits) {
  const auto& s = logits.shape();
  if (s.size() != 3 || s[0] != 1) throw ShapeError("logits_to_prob: expected [1,H,W], got " + shape_str(s));
  ProbMap p{s[1], s[2], std::vector<double>(logits.numel())};
  const auto data = logits.data();
  for (std::size_t i = 0; i < p.values.size(); ++i) {
    p.values[i] = 1.0 / (1.0 + std::exp(-std::clamp(data[i], -kSigmoidClamp, kSigmoidClamp)));
  }
  return p;
}

namespace {

constexpr std::array<char, 8> kCheckpointMagic = {'H', 'M', 'H', 'I', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  le::put_u32(out, kCheckpointVersion);
  le::put_u64(out, params.store.size());
  for (const auto& [name, t] : params.store.all()) {
    le::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(out, t);
  }
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

void load_checkpoint(const std::filesystem::path& path, ModelParams& into) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kCheckpointMagic) throw IoError(path.string() + " is not a checkpoint");
  const auto version = le::get_u32(in);
  if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  const auto count = le::get_u64(in);
  std::map<std::string, Tensor> loaded;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = le::get_u32(in);
    if (len > 4096) throw IoError("checkpoint: implausible parameter name length");
    std::string name(len, '\0');
    in.read(name.data(), len);
    if (!in) throw IoError("checkpoint: truncated name");
    loaded.emplace(name, read_tensor(in));
  }
  for (const auto& [name, target] : into.store.all()) {
    auto it = loaded.find(name);
    if (it == loaded.end()) throw IoError("checkpoint is missing parameter '" + name + "'");
    if (it->second.shape() != target.shape()) {
      throw ShapeError("checkpoint parameter '" + name + "' has shape " + shape_str(it->second.shape()) +
                       ", model expects " + shape_str(target.shape()));
    }
  }
  for (const auto& [name, t] : loaded) {
    if (!into.store.contains(name)) throw IoError("checkpoint has unexpected parameter '" + name + "'");
  }
  for (const auto& [name, handle] : into.store.all()) {
    Tensor target = handle;
    const auto src = loaded.at(name).data();
    std::copy(src.begin(), src.end(), target.mutable_data().begin());
  }
}

ModelParams load_checkpoint(const std::filesystem::path& path, const RunConfig& config) {
  ModelParams params = ModelParams::create(config);
  load_checkpoint(path, params);
  return params;
}

}  // namespace hmhi
