#include "hmhi/nn.hpp"

#include <cmath>

namespace hmhi {

Tensor ParamStore::add(const std::string& name, Tensor tensor) {
  if (name.empty()) throw ConfigError("parameter name must not be empty");
  if (params_.count(name)) throw ConfigError("duplicate parameter name: " + name);
  tensor.set_requires_grad(true);
  params_.emplace(name, tensor);
  return tensor;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

std::vector<NamedParam> ParamStore::named(const std::string& prefix) const {
  std::vector<NamedParam> out;
  for (const auto& [name, t] : params_) {
    if (name.compare(0, prefix.size(), prefix) == 0) out.push_back({name, t});
  }
  return out;
}

std::size_t ParamStore::total_numel() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [name, t] : params_) {
    Tensor handle = t;
    handle.zero_grad();
  }
}

std::string join_name(const std::string& prefix, const std::string& leaf) {
  return prefix.empty() ? leaf : prefix + "." + leaf;
}

Tensor init_weight(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  return Tensor::uniform(std::move(shape), -bound, bound, rng);
}

// ---- Linear / Conv ------------------------------------------------------------

Linear Linear::create(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  Linear layer;
  layer.weight = store.add(join_name(name, "weight"), init_weight({in, out}, in, rng));
  layer.bias = store.add(join_name(name, "bias"), Tensor::zeros({out}));
  return layer;
}

Tensor linear_apply(const Linear& layer, const Tensor& x) {
  const auto& s = x.shape();
  if (s.size() != 2 || s[1] != layer.in_dim()) {
    throw ShapeError("linear: input " + shape_str(s) + " does not match weight " + shape_str(layer.weight.shape()));
  }
  return add(matmul(x, layer.weight), reshape(layer.bias, {1, layer.out_dim()}));
}

Conv2d Conv2d::create(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
                      std::size_t kernel, std::size_t stride, std::size_t padding, Rng& rng) {
  Conv2d conv;
  conv.weight = store.add(join_name(name, "weight"), init_weight({out, in, kernel, kernel}, in * kernel * kernel, rng));
  conv.bias = store.add(join_name(name, "bias"), Tensor::zeros({out}));
  conv.stride = stride;
  conv.padding = padding;
  return conv;
}

Tensor conv_apply(const Conv2d& conv, const Tensor& x) {
  return add(conv2d(x, conv.weight, conv.stride, conv.padding), reshape(conv.bias, {conv.weight.dim(0), 1, 1}));
}

// ---- attention ------------------------------------------------------------------

AttentionBlock AttentionBlock::create(ParamStore& store, const std::string& name, std::size_t query_dim,
                                      std::size_t key_dim, const AttentionConfig& config, Rng& rng) {
  if (config.heads == 0 || query_dim % config.heads != 0) {
    throw ConfigError("attention " + name + ": width " + std::to_string(query_dim) + " not divisible by " +
                      std::to_string(config.heads) + " heads");
  }
  AttentionBlock block;
  block.model_dim = query_dim;
  block.heads = config.heads;
  block.q_proj = Linear::create(store, join_name(name, "q_proj"), query_dim, query_dim, rng);
  block.k_proj = Linear::create(store, join_name(name, "k_proj"), key_dim, query_dim, rng);
  block.v_proj = Linear::create(store, join_name(name, "v_proj"), key_dim, query_dim, rng);
  if (config.out_proj) block.out_proj = Linear::create(store, join_name(name, "out_proj"), query_dim, query_dim, rng);
  return block;
}

Tensor attention(const AttentionBlock& block, const Tensor& query_src, const Tensor& key_src) {
  const Tensor q = linear_apply(block.q_proj, query_src);
  const Tensor k = linear_apply(block.k_proj, key_src);
  const Tensor v = linear_apply(block.v_proj, key_src);
  const std::size_t dh = block.head_dim();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(dh));

  auto head = [&](const Tensor& qh, const Tensor& kh, const Tensor& vh) {
    return matmul(softmax(scale(matmul(qh, transpose(kh)), inv_sqrt_d), 1), vh);
  };
  Tensor mixed;
  if (block.heads == 1) {
    mixed = head(q, k, v);
  } else {
    std::vector<Tensor> outs;
    for (std::size_t h = 0; h < block.heads; ++h) {
      outs.push_back(head(slice(q, 1, h * dh, dh), slice(k, 1, h * dh, dh), slice(v, 1, h * dh, dh)));
    }
    mixed = concat(outs, 1);
  }
  return block.out_proj ? linear_apply(*block.out_proj, mixed) : mixed;
}

Tensor attention(const AttentionBlock& block, const Tensor& query_src, const std::vector<Tensor>& key_parts) {
  if (key_parts.empty()) throw EmptyKeysError("attention: no key rows; the caller must bypass this block");
  return attention(block, query_src, key_parts.size() == 1 ? key_parts.front() : concat(key_parts, 0));
}

// ---- FFN ----------------------------------------------------------------------------

FFNBlock FFNBlock::create(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
                          std::size_t ratio, Rng& rng) {
  if (ratio == 0) throw ConfigError("ffn " + name + ": expansion ratio must be positive");
  FFNBlock block;
  block.fc1 = Linear::create(store, join_name(name, "fc1"), in, in * ratio, rng);
  block.fc2 = Linear::create(store, join_name(name, "fc2"), in * ratio, out, rng);
  return block;
}

Tensor ffn_apply(const FFNBlock& block, const Tensor& x) {
  return linear_apply(block.fc2, relu(linear_apply(block.fc1, x)));
}

// ---- channel / spatial gate ---------------------------------------------------------------

ChannelSpatialGate ChannelSpatialGate::create(ParamStore& store, const std::string& name, std::size_t channels,
                                              Rng& rng) {
  const std::size_t hidden = std::max<std::size_t>(1, channels / kReduction);
  ChannelSpatialGate gate;
  gate.mlp1 = Linear::create(store, join_name(name, "channel_gate.mlp1"), channels, hidden, rng);
  gate.mlp2 = Linear::create(store, join_name(name, "channel_gate.mlp2"), hidden, channels, rng);
  gate.spatial = Conv2d::create(store, join_name(name, "spatial_gate.conv"), 2, 1, kSpatialKernel, 1,
                                kSpatialKernel / 2, rng);
  return gate;
}

Tensor channel_spatial_attend(const ChannelSpatialGate& gate, const Tensor& x, GateTrace* trace) {
  const auto& s = x.shape();
  if (s.size() != 3) throw ShapeError("channel_spatial_attend: expected CxHxW, got " + shape_str(s));
  const std::size_t c = s[0], h = s[1], w = s[2];
  if (c != gate.mlp1.in_dim()) {
    throw ShapeError("channel_spatial_attend: " + std::to_string(c) + " channels, gate built for " +
                     std::to_string(gate.mlp1.in_dim()));
  }

  const Tensor flat = reshape(x, {c, h * w});
  // Rows 0/1 hold the avg/max descriptors; the MLP is shared across them.
  const Tensor desc = transpose(concat({mean(flat, 1), max(flat, 1)}, 1));
  const Tensor mlp = linear_apply(gate.mlp2, relu(linear_apply(gate.mlp1, desc)));
  const Tensor channel_gate = reshape(sigmoid(sum(mlp, 0, false)), {c, 1, 1});
  const Tensor after_channel = mul(x, channel_gate);

  const Tensor pooled = concat({mean(after_channel, 0), max(after_channel, 0)}, 0);
  const Tensor spatial_gate = sigmoid(conv_apply(gate.spatial, pooled));
  if (trace) *trace = {channel_gate, spatial_gate};
  return mul(after_channel, spatial_gate);
}

// ---- downsample stack ------------------------------------------------------------------------

DownsampleStack DownsampleStack::create(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
                                        Rng& rng) {
  DownsampleStack stack;
  stack.conv1 = Conv2d::create(store, join_name(name, "conv1"), in, in, 3, 2, 1, rng);
  stack.conv2 = Conv2d::create(store, join_name(name, "conv2"), in, in, 3, 2, 1, rng);
  stack.proj = Linear::create(store, join_name(name, "linear"), in, out, rng);
  return stack;
}

Tensor downsample_stack(const DownsampleStack& stack, const Tensor& x) {
  const auto& s = x.shape();
  if (s.size() != 3 || s[1] % 4 != 0 || s[2] % 4 != 0) {
    throw ShapeError("downsample_stack: spatial size of " + shape_str(s) + " is not divisible by 4");
  }
  const Tensor y = relu(conv_apply(stack.conv2, relu(conv_apply(stack.conv1, x))));
  const std::size_t h = s[1] / 4, w = s[2] / 4;
  return tokens_to_map(linear_apply(stack.proj, map_to_tokens(y)), h, w);
}

}  // namespace hmhi
