#pragma once

// Layer compositions over the plain-loop oracle, reading weights straight out
// of the block structs.

#include "hmhi/nn.hpp"
#include "oracle.hpp"

namespace oracle {

inline Mat attention_ref(const hmhi::AttentionBlock& b, const Mat& q_src, const Mat& k_src) {
  const auto q = linear(q_src, b.q_proj.weight, b.q_proj.bias);
  const auto k = linear(k_src, b.k_proj.weight, b.k_proj.bias);
  const auto v = linear(k_src, b.v_proj.weight, b.v_proj.bias);
  const auto p = softmax_rows(scale(matmul(q, transpose(k)), 1.0 / std::sqrt(double(q.cols))));
  const auto mixed = matmul(p, v);
  return b.out_proj ? linear(mixed, b.out_proj->weight, b.out_proj->bias) : mixed;
}

inline Mat ffn_ref(const hmhi::FFNBlock& f, const Mat& x) {
  return linear(relu(linear(x, f.fc1.weight, f.fc1.bias)), f.fc2.weight, f.fc2.bias);
}

inline Map gate_ref(const hmhi::ChannelSpatialGate& g, const Map& x) {
  const std::size_t c = x.c, n = x.h * x.w;
  Mat avg = zeros(1, c), mx = zeros(1, c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double s = 0, m = -INFINITY;
    for (std::size_t i = 0; i < n; ++i) {
      s += x.v[ch * n + i];
      m = std::max(m, x.v[ch * n + i]);
    }
    avg.v[ch] = s / double(n);
    mx.v[ch] = m;
  }
  auto mlp = [&](const Mat& d) {
    return linear(relu(linear(d, g.mlp1.weight, g.mlp1.bias)), g.mlp2.weight, g.mlp2.bias);
  };
  const auto logits = add(mlp(avg), mlp(mx));
  Map x1 = x;
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < n; ++i) x1.v[ch * n + i] *= sigmoid(logits.v[ch]);
  Map pooled{2, x.h, x.w, std::vector<double>(2 * n)};
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0, m = -INFINITY;
    for (std::size_t ch = 0; ch < c; ++ch) {
      s += x1.v[ch * n + i];
      m = std::max(m, x1.v[ch * n + i]);
    }
    pooled.v[i] = s / double(c);
    pooled.v[n + i] = m;
  }
  const auto sp = conv2d(pooled, g.spatial.weight, vec(g.spatial.bias), 1, 3);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < n; ++i) x1.v[ch * n + i] *= sigmoid(sp.v[i]);
  return x1;
}

inline Map downsample_ref(const hmhi::DownsampleStack& d, const Map& x) {
  auto a = relu(conv2d(x, d.conv1.weight, vec(d.conv1.bias), 2, 1));
  a = relu(conv2d(a, d.conv2.weight, vec(d.conv2.bias), 2, 1));
  return to_map(linear(tokens(a), d.proj.weight, d.proj.bias), a.h, a.w);
}

}  // namespace oracle
