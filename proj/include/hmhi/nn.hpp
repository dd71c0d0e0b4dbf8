#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hmhi/gradcheck.hpp"
#include "hmhi/rng.hpp"
#include "hmhi/tensor.hpp"

namespace hmhi {

class EmptyKeysError : public Error {
 public:
  using Error::Error;
};

/// Name -> parameter map. Names are hierarchical ("plam.channel_gate.mlp1.weight")
/// and double as checkpoint keys. Iteration order is lexicographic.
class ParamStore {
 public:
  // Registers a leaf tensor and marks it as requiring grad.
  Tensor add(const std::string& name, Tensor tensor);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  const std::map<std::string, Tensor>& all() const { return params_; }
  std::vector<NamedParam> named(const std::string& prefix = "") const;
  std::size_t size() const { return params_.size(); }
  std::size_t total_numel() const;
  void zero_grad();

 private:
  std::map<std::string, Tensor> params_;
};

std::string join_name(const std::string& prefix, const std::string& leaf);

/// Uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)) weights.
Tensor init_weight(Shape shape, std::size_t fan_in, Rng& rng);

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  static Linear create(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng);
  std::size_t in_dim() const { return weight.dim(0); }
  std::size_t out_dim() const { return weight.dim(1); }
};

/// x[N, in] -> x W + b.
Tensor linear_apply(const Linear& layer, const Tensor& x);

struct Conv2d {
  Tensor weight;  // [out, in, k, k]
  Tensor bias;    // [out]
  std::size_t stride = 1;
  std::size_t padding = 0;

  static Conv2d create(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
                       std::size_t kernel, std::size_t stride, std::size_t padding, Rng& rng);
};

Tensor conv_apply(const Conv2d& conv, const Tensor& x);

struct AttentionConfig {
  std::size_t heads = 1;
  bool out_proj = true;
};

/// Scaled dot-product attention with separate Q/K/V projections. The model
/// dimension is the query-source width; keys may come from a source of a
/// different width. Scores are divided by sqrt(model_dim / heads).
struct AttentionBlock {
  Linear q_proj, k_proj, v_proj;
  std::optional<Linear> out_proj;
  std::size_t model_dim = 0;
  std::size_t heads = 1;

  static AttentionBlock create(ParamStore& store, const std::string& name, std::size_t query_dim,
                               std::size_t key_dim, const AttentionConfig& config, Rng& rng);
  std::size_t head_dim() const { return model_dim / heads; }
};

Tensor attention(const AttentionBlock& block, const Tensor& query_src, const Tensor& key_src);
/// Keys are the row-wise concatenation of `key_parts`; throws EmptyKeysError
/// when there are none.
Tensor attention(const AttentionBlock& block, const Tensor& query_src, const std::vector<Tensor>& key_parts);

struct FFNBlock {
  Linear fc1, fc2;

  static FFNBlock create(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
                         std::size_t ratio, Rng& rng);
};

/// fc2(relu(fc1(x))), no residual.
Tensor ffn_apply(const FFNBlock& block, const Tensor& x);

/// Channel gate (avg+max pooled descriptors through a shared two-layer MLP,
/// summed, sigmoid) followed by a spatial gate (channel-wise avg and max maps,
/// 7x7 conv, sigmoid).
struct ChannelSpatialGate {
  Linear mlp1, mlp2;
  Conv2d spatial;

  static constexpr std::size_t kReduction = 4;
  static constexpr std::size_t kSpatialKernel = 7;

  static ChannelSpatialGate create(ParamStore& store, const std::string& name, std::size_t channels, Rng& rng);
};

struct GateTrace {
  Tensor channel_gate;  // [C, 1, 1]
  Tensor spatial_gate;  // [1, H, W]
};

Tensor channel_spatial_attend(const ChannelSpatialGate& gate, const Tensor& x, GateTrace* trace = nullptr);

/// Two stride-2 3x3 conv+relu stages, then a per-token linear projection to
/// the output width: [Cin, 4h, 4w] -> [Cout, h, w].
struct DownsampleStack {
  Conv2d conv1, conv2;
  Linear proj;

  static DownsampleStack create(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
                                Rng& rng);
};

Tensor downsample_stack(const DownsampleStack& stack, const Tensor& x);

}  // namespace hmhi
