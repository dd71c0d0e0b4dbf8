#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hmhi/nn.hpp"

namespace hmhi {

// Raised when memory readout is requested with nothing stored; the first
// frame of a sequence must skip refinement instead.
class BypassRequiredError : public Error {
 public:
  using Error::Error;
};

class FrameOrderError : public Error {
 public:
  using Error::Error;
};

struct MemoryEntry {
  Tensor features;  // [H_i W_i, C_i], mask-conditioned
  std::int64_t frame_index = 0;
};

/// Sliding-window FIFO of reference features for one pyramid level. A frame is
/// stored when the bank is empty or at least `stride` frames have passed since
/// the last stored one; the oldest entry is evicted beyond `capacity`.
class MemoryBank {
 public:
  MemoryBank(int level, std::size_t capacity, std::size_t stride);

  int level() const { return level_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t stride() const { return stride_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::deque<MemoryEntry>& entries() const { return entries_; }
  std::optional<std::int64_t> last_update_frame() const { return last_update_; }

  std::vector<std::int64_t> frame_indices() const;
  std::vector<Tensor> features() const;

  /// Whether `frame_index` should be stored. Throws FrameOrderError unless
  /// frame_index is greater than every frame previously offered to the bank.
  bool due(std::int64_t frame_index) const;
  /// Records that `frame_index` was offered, storing `entry` when due. Returns
  /// whether it was stored.
  bool offer(std::int64_t frame_index, const std::function<Tensor()>& make_features);

 private:
  int level_;
  std::size_t capacity_;
  std::size_t stride_;
  std::deque<MemoryEntry> entries_;
  std::optional<std::int64_t> last_update_;
  std::optional<std::int64_t> last_seen_;
};

struct MemoryReadParams {
  AttentionBlock self_attn;
  Linear q_mem, k_mem, v_mem;
  FFNBlock ffn;
  bool self_attn_residual = false;

  static MemoryReadParams create(ParamStore& store, const std::string& name, std::size_t channels,
                                 const AttentionConfig& attention, std::size_t ffn_ratio, bool self_attn_residual,
                                 Rng& rng);
};

struct MemoryEncoderParams {
  Linear mask_proj;  // 1 -> C
  FFNBlock ffn;

  static MemoryEncoderParams create(ParamStore& store, const std::string& name, std::size_t channels,
                                    std::size_t ffn_ratio, Rng& rng);
};

struct ReadoutResult {
  Tensor refined;  // F', [HW, C]
  Tensor scores;   // S_corr, [HW, T*HW], before softmax
};

/// Self-attention over the current feature, cross-attention readout from the
/// bank (keys oldest-first), then a residual FFN.
ReadoutResult mem_refine(const Tensor& features, const MemoryBank& bank, const MemoryReadParams& params);

/// Pools sigmoid(mask_logits) to the level grid, projects it to C channels,
/// adds it to the features and applies the encoder FFN.
Tensor memory_encode(const Tensor& features, const Tensor& mask_logits, std::size_t height, std::size_t width,
                     const MemoryEncoderParams& params);

/// Offers a frame to the bank; the entry is encoded only when it will be stored.
bool memory_update(MemoryBank& bank, const Tensor& features, const Tensor& mask_logits, std::int64_t frame_index,
                   std::size_t height, std::size_t width, const MemoryEncoderParams& params, bool detach = false);

/// Writes manifest.json (level, capacity, stride, entries) plus one tensor
/// container per entry into `dir`.
void dump_bank(const MemoryBank& bank, const std::filesystem::path& dir);

}  // namespace hmhi
