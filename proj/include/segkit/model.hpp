#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "segkit/adam.hpp"
#include "segkit/autodiff.hpp"
#include "segkit/errors.hpp"

namespace segkit {

// Architecture hyperparameters. depth counts resolution levels including
// the bottleneck, so depth - 1 poolings; input spatial dims must be
// divisible by 2^(depth-1).
struct ModelConfig {
  int depth = 3;
  int base_channels = 8;
  int in_channels = 4;
  int num_classes = 4;
  bool gate_enabled = true;
  std::uint64_t seed = 0;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct Param {
  std::string name;
  std::vector<int> shape;
  std::vector<float> data;
  std::vector<float> grad;

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
};

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;
  double dice = 0.0;
  double iou = 0.0;
  double accuracy = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
};

struct Checkpoint {
  ModelConfig config;
  std::vector<Param> params;
  AdamState<float> opt;
  int epoch = 0;
  std::vector<EpochStats> history;

  int param_index(const std::string& name) const {
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i].name == name) return static_cast<int>(i);
    }
    throw checkpoint_error("unknown parameter: " + name);
  }

  void zero_grad() {
    for (auto& p : params) std::fill(p.grad.begin(), p.grad.end(), 0.0f);
  }
};

namespace detail {

inline int level_channels(const ModelConfig& cfg, int level) {
  return cfg.base_channels << level;
}

inline int gate_inter_channels(int skip_channels) {
  return std::max(1, skip_channels / 2);
}

}  // namespace detail

// He-uniform conv init, zero biases; draw order is fixed so the same seed
// yields bit-identical parameters.
inline Checkpoint build_model(const ModelConfig& cfg) {
  if (cfg.depth < 2) throw config_error("model depth must be >= 2");
  if (cfg.base_channels < 1 || cfg.in_channels < 1 || cfg.num_classes < 2) {
    throw config_error("bad channel configuration");
  }
  Checkpoint ckpt;
  ckpt.config = cfg;
  std::mt19937_64 rng(cfg.seed);
  auto uniform = [&](double lo, double hi) {
    return lo + (hi - lo) * (static_cast<double>(rng() >> 11) * 0x1.0p-53);
  };
  auto conv_param = [&](const std::string& name, int co, int ci, int k) {
    Param w;
    w.name = name + ".w";
    w.shape = {co, ci, k, k, k};
    const std::int64_t n = static_cast<std::int64_t>(co) * ci * k * k * k;
    w.data.resize(static_cast<std::size_t>(n));
    const double limit = std::sqrt(6.0 / (static_cast<double>(ci) * k * k * k));
    for (auto& v : w.data) v = static_cast<float>(uniform(-limit, limit));
    w.grad.assign(w.data.size(), 0.0f);
    ckpt.params.push_back(std::move(w));
    Param b;
    b.name = name + ".b";
    b.shape = {co};
    b.data.assign(static_cast<std::size_t>(co), 0.0f);
    b.grad.assign(b.data.size(), 0.0f);
    ckpt.params.push_back(std::move(b));
  };

  // encoder + bottleneck
  int prev = cfg.in_channels;
  for (int level = 0; level < cfg.depth; ++level) {
    const int c = detail::level_channels(cfg, level);
    const std::string tag = level == cfg.depth - 1 ? "bottleneck" : "enc" + std::to_string(level);
    conv_param(tag + ".conv1", c, prev, 3);
    conv_param(tag + ".conv2", c, c, 3);
    prev = c;
  }
  // decoder with attention gates on the skips
  for (int level = cfg.depth - 2; level >= 0; --level) {
    const int c_skip = detail::level_channels(cfg, level);
    const int c_up = detail::level_channels(cfg, level + 1);
    const std::string tag = "dec" + std::to_string(level);
    if (cfg.gate_enabled) {
      const int c_int = detail::gate_inter_channels(c_skip);
      conv_param(tag + ".gate.x", c_int, c_skip, 1);
      conv_param(tag + ".gate.g", c_int, c_up, 1);
      conv_param(tag + ".gate.psi", 1, c_int, 1);
    }
    conv_param(tag + ".conv1", c_skip, c_skip + c_up, 3);
    conv_param(tag + ".conv2", c_skip, c_skip, 3);
  }
  conv_param("head", cfg.num_classes, cfg.base_channels, 1);

  std::vector<std::size_t> sizes;
  for (const auto& p : ckpt.params) sizes.push_back(p.data.size());
  ckpt.opt.init(sizes);
  return ckpt;
}

inline std::int64_t parameter_count(const Checkpoint& ckpt) {
  std::int64_t n = 0;
  for (const auto& p : ckpt.params) n += p.numel();
  return n;
}

// The gate of the skip connection: x strided-convolved, g 1x1-convolved,
// summed, relu, channel-reducing conv, sigmoid -> coefficients; trilinear
// restore to x's resolution; x scaled by the broadcast coefficients.
template <typename T>
ad::NodeId attention_gate(ad::Graph<T>& g, ad::NodeId x, ad::NodeId gate, ad::NodeId wx,
                          ad::NodeId bx, ad::NodeId wg, ad::NodeId bg, ad::NodeId wpsi,
                          ad::NodeId bpsi) {
  const auto& xs = g.value(x).shape;
  const auto& gs = g.value(gate).shape;
  if (xs.size() != 5 || gs.size() != 5 || gs[2] * 2 != xs[2] || gs[3] * 2 != xs[3] ||
      gs[4] * 2 != xs[4]) {
    throw shape_error("attention_gate: g must be at half of x's resolution");
  }
  const ad::NodeId x_strided = ad::conv3d(g, x, wx, bx, /*stride=*/2, /*padding=*/0);
  const ad::NodeId g_mapped = ad::conv3d(g, gate, wg, bg, 1, 0);
  const ad::NodeId joint = ad::relu(g, ad::add(g, x_strided, g_mapped));
  const ad::NodeId coeff = ad::sigmoid(g, ad::conv3d(g, joint, wpsi, bpsi, 1, 0));
  const ad::NodeId restored = ad::upsample_trilinear(g, coeff, 2);
  return ad::mul_broadcast(g, x, restored);
}

// Builds the network body on an existing graph. `pids` maps checkpoint
// parameter order onto graph nodes (see add_params_to_graph).
template <typename T>
ad::NodeId forward_graph(const Checkpoint& ckpt, ad::Graph<T>& g, ad::NodeId batch,
                         const std::vector<ad::NodeId>& pids) {
  const ModelConfig& cfg = ckpt.config;
  const auto& in_shape = g.value(batch).shape;
  if (in_shape.size() != 5 || in_shape[1] != cfg.in_channels) {
    throw shape_error("forward: batch must be (N, in_channels, D, H, W)");
  }
  const int div = 1 << (cfg.depth - 1);
  if (in_shape[2] % div || in_shape[3] % div || in_shape[4] % div) {
    throw config_error("input spatial dims must be divisible by 2^(depth-1)");
  }
  auto p = [&](const std::string& name) { return pids[static_cast<std::size_t>(ckpt.param_index(name))]; };
  auto conv_block = [&](ad::NodeId in, const std::string& tag) {
    ad::NodeId h = ad::relu(g, ad::conv3d(g, in, p(tag + ".conv1.w"), p(tag + ".conv1.b"), 1, 1));
    return ad::relu(g, ad::conv3d(g, h, p(tag + ".conv2.w"), p(tag + ".conv2.b"), 1, 1));
  };

  std::vector<ad::NodeId> skips;
  ad::NodeId cur = batch;
  for (int level = 0; level < cfg.depth - 1; ++level) {
    cur = conv_block(cur, "enc" + std::to_string(level));
    skips.push_back(cur);
    cur = ad::maxpool3d(g, cur, 2, 2);
  }
  cur = conv_block(cur, "bottleneck");
  for (int level = cfg.depth - 2; level >= 0; --level) {
    const std::string tag = "dec" + std::to_string(level);
    ad::NodeId skip = skips[static_cast<std::size_t>(level)];
    if (cfg.gate_enabled) {
      skip = attention_gate(g, skip, cur, p(tag + ".gate.x.w"), p(tag + ".gate.x.b"),
                            p(tag + ".gate.g.w"), p(tag + ".gate.g.b"), p(tag + ".gate.psi.w"),
                            p(tag + ".gate.psi.b"));
    }
    const ad::NodeId up = ad::upsample_trilinear(g, cur, 2);
    cur = conv_block(ad::concat_channels(g, skip, up), tag);
  }
  const ad::NodeId logits = ad::conv3d(g, cur, p("head.w"), p("head.b"), 1, 0);
  return ad::softmax_channels(g, logits);
}

template <typename T>
std::vector<ad::NodeId> add_params_to_graph(const Checkpoint& ckpt, ad::Graph<T>& g) {
  std::vector<ad::NodeId> ids;
  ids.reserve(ckpt.params.size());
  for (const auto& p : ckpt.params) {
    ad::Tensor<T> t(p.shape);
    for (std::size_t i = 0; i < p.data.size(); ++i) t.data[i] = static_cast<T>(p.data[i]);
    ids.push_back(g.input(std::move(t)));
  }
  return ids;
}

// Per-voxel class probabilities for a (N, in_channels, D, H, W) batch.
inline ad::Tensor<float> forward(const Checkpoint& ckpt, const ad::Tensor<float>& batch) {
  ad::Graph<float> g;
  const ad::NodeId in = g.input(batch);
  const auto pids = add_params_to_graph(ckpt, g);
  const ad::NodeId probs = forward_graph(ckpt, g, in, pids);
  return g.value(probs);
}

}  // namespace segkit
