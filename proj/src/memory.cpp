#include "hmhi/memory.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "hmhi/serialize.hpp"

namespace hmhi {

MemoryBank::MemoryBank(int level, std::size_t capacity, std::size_t stride)
    : level_(level), capacity_(capacity), stride_(stride) {
  if (capacity == 0) throw ConfigError("memory capacity N must be positive");
  if (stride == 0) throw ConfigError("memory update stride k must be positive");
}

std::vector<std::int64_t> MemoryBank::frame_indices() const {
  std::vector<std::int64_t> out;
  for (const auto& e : entries_) out.push_back(e.frame_index);
  return out;
}

std::vector<Tensor> MemoryBank::features() const {
  std::vector<Tensor> out;
  for (const auto& e : entries_) out.push_back(e.features);
  return out;
}

bool MemoryBank::due(std::int64_t frame_index) const {
  if (last_seen_ && frame_index <= *last_seen_) {
    throw FrameOrderError("memory bank (level " + std::to_string(level_) + "): frame " + std::to_string(frame_index) +
                          " does not follow frame " + std::to_string(*last_seen_));
  }
  return entries_.empty() || !last_update_ || frame_index - *last_update_ >= static_cast<std::int64_t>(stride_);
}

bool MemoryBank::offer(std::int64_t frame_index, const std::function<Tensor()>& make_features) {
  const bool store = due(frame_index);
  last_seen_ = frame_index;
  if (!store) return false;
  entries_.push_back({make_features(), frame_index});
  last_update_ = frame_index;
  while (entries_.size() > capacity_) entries_.pop_front();
  return true;
}

MemoryReadParams MemoryReadParams::create(ParamStore& store, const std::string& name, std::size_t channels,
                                          const AttentionConfig& attention, std::size_t ffn_ratio,
                                          bool self_attn_residual, Rng& rng) {
  MemoryReadParams p;
  p.self_attn = AttentionBlock::create(store, join_name(name, "self_attn"), channels, channels, attention, rng);
  p.q_mem = Linear::create(store, join_name(name, "read.q_mem"), channels, channels, rng);
  p.k_mem = Linear::create(store, join_name(name, "read.k_mem"), channels, channels, rng);
  p.v_mem = Linear::create(store, join_name(name, "read.v_mem"), channels, channels, rng);
  p.ffn = FFNBlock::create(store, join_name(name, "read.ffn"), channels, channels, ffn_ratio, rng);
  p.self_attn_residual = self_attn_residual;
  return p;
}

MemoryEncoderParams MemoryEncoderParams::create(ParamStore& store, const std::string& name, std::size_t channels,
                                                std::size_t ffn_ratio, Rng& rng) {
  MemoryEncoderParams p;
  p.mask_proj = Linear::create(store, join_name(name, "mask_proj"), 1, channels, rng);
  p.ffn = FFNBlock::create(store, join_name(name, "ffn"), channels, channels, ffn_ratio, rng);
  return p;
}

ReadoutResult mem_refine(const Tensor& features, const MemoryBank& bank, const MemoryReadParams& params) {
  if (bank.empty()) {
    throw BypassRequiredError("mem_refine: level " + std::to_string(bank.level()) +
                              " memory is empty; the first frame must bypass refinement");
  }
  Tensor current = attention(params.self_attn, features, features);
  if (params.self_attn_residual) current = add(features, current);

  const std::vector<Tensor> stored = bank.features();
  const Tensor memory = stored.size() == 1 ? stored.front() : concat(stored, 0);
  const Tensor q = linear_apply(params.q_mem, current);
  const Tensor k = linear_apply(params.k_mem, memory);
  const Tensor v = linear_apply(params.v_mem, memory);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
  const Tensor scores = scale(matmul(q, transpose(k)), inv_sqrt_d);

  current = add(current, matmul(softmax(scores, 1), v));
  current = add(current, ffn_apply(params.ffn, current));
  return {current, scores};
}

Tensor memory_encode(const Tensor& features, const Tensor& mask_logits, std::size_t height, std::size_t width,
                     const MemoryEncoderParams& params) {
  const auto& ms = mask_logits.shape();
  if (ms.size() != 3 || ms[0] != 1 || ms[1] % height != 0 || ms[2] % width != 0 || ms[1] / height != ms[2] / width) {
    throw ShapeError("memory_encode: mask " + shape_str(ms) + " does not tile a " + std::to_string(height) + "x" +
                     std::to_string(width) + " grid");
  }
  const Tensor pooled = avg_pool2d(sigmoid(mask_logits), ms[1] / height);
  const Tensor mask_embed = linear_apply(params.mask_proj, map_to_tokens(pooled));
  return ffn_apply(params.ffn, add(features, mask_embed));
}

bool memory_update(MemoryBank& bank, const Tensor& features, const Tensor& mask_logits, std::int64_t frame_index,
                   std::size_t height, std::size_t width, const MemoryEncoderParams& params, bool detach) {
  return bank.offer(frame_index, [&] {
    Tensor entry = memory_encode(features, mask_logits, height, width, params);
    return detach ? entry.detach() : entry;
  });
}

void dump_bank(const MemoryBank& bank, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["level"] = bank.level();
  manifest["capacity"] = bank.capacity();
  manifest["stride"] = bank.stride();
  manifest["entries"] = nlohmann::json::array();
  for (const auto& e : bank.entries()) {
    std::ostringstream file;
    file << "entry_" << std::setw(6) << std::setfill('0') << e.frame_index << ".hmt";
    save_tensor(dir / file.str(), e.features);
    manifest["entries"].push_back({{"frame_index", e.frame_index}, {"file", file.str()}});
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

}  // namespace hmhi
