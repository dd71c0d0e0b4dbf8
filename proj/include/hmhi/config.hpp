#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "hmhi/encoder_decoder.hpp"
#include "hmhi/interaction.hpp"
#include "hmhi/losses.hpp"
#include "hmhi/nn.hpp"

namespace hmhi {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Everything needed to reproduce a run. Defaults: N = 5, k = 1, L = 5,
/// side 64, standard interaction, memory on levels 2 and 4.
struct RunConfig {
  PyramidConfig pyramid;
  AttentionConfig attention;
  std::size_t ffn_ratio = 4;
  bool share_towers = false;
  bool self_attn_residual = false;

  std::size_t memory_capacity = 5;  // N
  std::size_t memory_stride = 1;    // k
  std::set<int> memory_levels{2, 4};
  bool detach_memory = false;

  InteractionMode interaction = InteractionMode::standard;
  InputMode input_mode = InputMode::both;

  std::size_t sequence_length = 5;  // L
  std::size_t steps = 2000;
  std::uint64_t seed = 0;
  LossConfig loss;
  AdamWConfig optim;

  double threshold = 0.5;
  int boundary_tolerance = -1;  // -1: derive from the image diagonal

  void validate() const;
};

/// Sets one field from a dotted key ("memory.capacity") and its text value.
void apply_override(RunConfig& config, const std::string& key, const std::string& value);
/// Parses "key=value".
void apply_override(RunConfig& config, const std::string& assignment);

/// INI-style text: [section] headers, key = value lines, '#'/';' comments.
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});
RunConfig parse_config(const std::string& text, RunConfig base = {});
/// Canonical text form; parse_config(format_config(c)) reproduces c exactly.
std::string format_config(const RunConfig& config);
std::vector<std::string> config_keys();

std::string format_levels(const std::set<int>& levels);
std::set<int> parse_levels(const std::string& text);

}  // namespace hmhi
