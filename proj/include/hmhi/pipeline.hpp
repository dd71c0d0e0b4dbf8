#pragma once

#include <filesystem>
#include <map>
#include <vector>

#include "hmhi/config.hpp"
#include "hmhi/encoder_decoder.hpp"
#include "hmhi/interaction.hpp"
#include "hmhi/losses.hpp"
#include "hmhi/memory.hpp"
#include "hmhi/metrics.hpp"
#include "hmhi/synthdata.hpp"

namespace hmhi {

/// Every learnable tensor of the model, registered by hierarchical name.
/// Memory readout/encoder parameters exist for all four levels so one
/// checkpoint serves every memory-level ablation. Copies would alias the same
/// storage, so the type is move-only; use clone() for an independent copy.
struct ModelParams {
  RunConfig config;  // architecture snapshot used to build the parameters
  ParamStore store;
  EncoderParams encoder;
  DecoderParams decoder;
  std::map<int, MemoryReadParams> readers;
  std::map<int, MemoryEncoderParams> writers;
  InteractionParams interaction;

  static ModelParams create(const RunConfig& config);
  ModelParams clone() const;

  ModelParams() = default;
  ModelParams(ModelParams&&) = default;
  ModelParams& operator=(ModelParams&&) = default;
  ModelParams(const ModelParams&) = delete;
  ModelParams& operator=(const ModelParams&) = delete;
};

/// Per-video state: one memory bank per enabled level plus the frame cursor.
struct SessionState {
  RunConfig config;
  std::map<int, MemoryBank> banks;
  std::int64_t cursor = 0;

  explicit SessionState(RunConfig run_config);
  bool memory_empty() const;
};

struct FrameTrace {
  FeaturePyramid pyramid;
  bool bypassed = false;
  std::map<int, Tensor> scores;  // S_corr per refined level
};

/// One frame: encode; on the first frame decode the raw pyramid, otherwise
/// refine with memory, interact and decode; then offer the frame to every bank.
Tensor process_frame(SessionState& state, const Tensor& image, const Tensor& flow, const ModelParams& params,
                     FrameTrace* trace = nullptr);

/// Memory-free forward: encode then decode.
Tensor baseline_forward(const Tensor& image, const Tensor& flow, const ModelParams& params,
                        InputMode mode = InputMode::both);

std::vector<Tensor> process_video(const std::vector<Tensor>& frames, const std::vector<Tensor>& flows,
                                  const ModelParams& params, const RunConfig& config);

/// Mean over the first L frames of the combined loss.
Tensor clip_loss(const ClipSample& clip, const ModelParams& params, const RunConfig& config);

/// AdamW with decoupled weight decay and bias correction.
class AdamW {
 public:
  explicit AdamW(AdamWConfig config) : config_(config) {}
  void step(ParamStore& store);
  std::size_t step_count() const { return t_; }

 private:
  AdamWConfig config_;
  std::size_t t_ = 0;
  std::map<std::string, std::vector<double>> m_, v_;
};

/// Forward + backward + one optimizer update; returns the loss value.
double train_step(const ClipSample& clip, ModelParams& params, AdamW& optimizer, const RunConfig& config);

ProbMap logits_to_prob(const Tensor& logits);

// Checkpoint: magic "HMHICKPT", u32 version, u64 count, then per parameter
// (name order) a u32 name length, the name bytes and a tensor container.
void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
void load_checkpoint(const std::filesystem::path& path, ModelParams& into);
ModelParams load_checkpoint(const std::filesystem::path& path, const RunConfig& config);

}  // namespace hmhi
