#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

#include "segkit/errors.hpp"

namespace segkit::ad {

// Dense N-dimensional value. Canonical layout for spatial ops is
// (batch, channels, depth, height, width), row-major with width fastest.
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(static_cast<std::size_t>(numel_of(shape)), T{0});
  }
  Tensor(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<std::int64_t>(data.size()) != numel_of(shape)) {
      throw shape_error("tensor data length does not match shape");
    }
  }

  static std::int64_t numel_of(const std::vector<int>& s) {
    std::int64_t n = 1;
    for (int e : s) n *= e;
    return n;
  }
  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
};

using NodeId = int;

// Reverse-mode tape. Nodes are appended in evaluation order, so insertion
// order is a topological order; backward walks it in reverse.
template <typename T>
class Graph {
 public:
  struct Node {
    Tensor<T> value;
    std::vector<T> grad;  // materialized on first touch, same length as data
    std::vector<NodeId> parents;
    std::function<void(Graph&, NodeId)> backward_fn;  // may be empty (leaf)
  };

  NodeId input(Tensor<T> t) {
    nodes_.push_back(Node{std::move(t), {}, {}, nullptr});
    return static_cast<NodeId>(nodes_.size()) - 1;
  }

  NodeId emplace(Tensor<T> value, std::vector<NodeId> parents,
                 std::function<void(Graph&, NodeId)> backward_fn) {
    for (NodeId p : parents) {
      if (p < 0 || p >= static_cast<NodeId>(nodes_.size())) {
        throw invariant_error("graph parent precedes child violated");
      }
    }
    nodes_.push_back(Node{std::move(value), {}, std::move(parents), std::move(backward_fn)});
    return static_cast<NodeId>(nodes_.size()) - 1;
  }

  const Tensor<T>& value(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  Tensor<T>& value(NodeId id) { return nodes_[static_cast<std::size_t>(id)].value; }

  std::vector<T>& grad(NodeId id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty()) n.grad.assign(n.value.data.size(), T{0});
    return n.grad;
  }

  void zero_grad() {
    for (auto& n : nodes_) std::fill(n.grad.begin(), n.grad.end(), T{0});
  }

  std::size_t size() const { return nodes_.size(); }

  // Reverse accumulation from a scalar loss node. Grads accumulate across
  // repeated calls unless zero_grad() is used.
  void backward(NodeId loss) {
    if (value(loss).numel() != 1) throw error("backward requires a scalar loss node");
    // mark nodes reachable from the loss
    std::vector<char> reachable(nodes_.size(), 0);
    std::vector<NodeId> stack{loss};
    reachable[static_cast<std::size_t>(loss)] = 1;
    while (!stack.empty()) {
      const NodeId id = stack.back();
      stack.pop_back();
      for (NodeId p : nodes_[static_cast<std::size_t>(id)].parents) {
        if (!reachable[static_cast<std::size_t>(p)]) {
          reachable[static_cast<std::size_t>(p)] = 1;
          stack.push_back(p);
        }
      }
    }
    grad(loss)[0] += T{1};
    for (NodeId id = loss; id >= 0; --id) {
      if (!reachable[static_cast<std::size_t>(id)]) continue;
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.backward_fn) n.backward_fn(*this, id);
    }
  }

 private:
  std::vector<Node> nodes_;
};

namespace detail {

inline void require(bool cond, const char* msg) {
  if (!cond) throw shape_error(msg);
}

}  // namespace detail

template <typename T>
NodeId add(Graph<T>& g, NodeId a, NodeId b) {
  detail::require(g.value(a).shape == g.value(b).shape, "add: shape mismatch");
  Tensor<T> out = g.value(a);
  const auto& bd = g.value(b).data;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += bd[i];
  return g.emplace(std::move(out), {a, b}, [a, b](Graph<T>& gg, NodeId self) {
    const auto& dy = gg.grad(self);
    auto& da = gg.grad(a);
    auto& db = gg.grad(b);
    for (std::size_t i = 0; i < dy.size(); ++i) {
      da[i] += dy[i];
      db[i] += dy[i];
    }
  });
}

template <typename T>
NodeId mul(Graph<T>& g, NodeId a, NodeId b) {
  detail::require(g.value(a).shape == g.value(b).shape, "mul: shape mismatch");
  Tensor<T> out = g.value(a);
  const auto& bd = g.value(b).data;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= bd[i];
  return g.emplace(std::move(out), {a, b}, [a, b](Graph<T>& gg, NodeId self) {
    const auto& dy = gg.grad(self);
    const auto& av = gg.value(a).data;
    const auto& bv = gg.value(b).data;
    auto& da = gg.grad(a);
    auto& db = gg.grad(b);
    for (std::size_t i = 0; i < dy.size(); ++i) {
      da[i] += dy[i] * bv[i];
      db[i] += dy[i] * av[i];
    }
  });
}

template <typename T>
NodeId relu(Graph<T>& g, NodeId x) {
  Tensor<T> out = g.value(x);
  for (auto& v : out.data) v = v > T{0} ? v : T{0};
  return g.emplace(std::move(out), {x}, [x](Graph<T>& gg, NodeId self) {
    const auto& dy = gg.grad(self);
    const auto& xv = gg.value(x).data;
    auto& dx = gg.grad(x);
    for (std::size_t i = 0; i < dy.size(); ++i) {
      if (xv[i] > T{0}) dx[i] += dy[i];
    }
  });
}

template <typename T>
NodeId sigmoid(Graph<T>& g, NodeId x) {
  Tensor<T> out = g.value(x);
  for (auto& v : out.data) v = T{1} / (T{1} + std::exp(-v));
  return g.emplace(std::move(out), {x}, [x](Graph<T>& gg, NodeId self) {
    const auto& dy = gg.grad(self);
    const auto& yv = gg.value(self).data;
    auto& dx = gg.grad(x);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * yv[i] * (T{1} - yv[i]);
  });
}

template <typename T>
NodeId sum(Graph<T>& g, NodeId x) {
  T total{0};
  for (T v : g.value(x).data) total += v;
  Tensor<T> out({1}, {total});
  return g.emplace(std::move(out), {x}, [x](Graph<T>& gg, NodeId self) {
    const T dy = gg.grad(self)[0];
    auto& dx = gg.grad(x);
    for (auto& v : dx) v += dy;
  });
}

// Direct cross-correlation. x: (N, Ci, D, H, W), w: (Co, Ci, kd, kh, kw),
// b: (Co). Same stride and zero padding on all spatial axes.
template <typename T>
NodeId conv3d(Graph<T>& g, NodeId xid, NodeId wid, NodeId bid, int stride = 1, int padding = 0) {
  const auto& x = g.value(xid);
  const auto& w = g.value(wid);
  const auto& b = g.value(bid);
  detail::require(x.shape.size() == 5 && w.shape.size() == 5, "conv3d: expects 5-d tensors");
  detail::require(w.shape[1] == x.shape[1], "conv3d: channel mismatch");
  detail::require(b.shape.size() == 1 && b.shape[0] == w.shape[0], "conv3d: bias mismatch");
  detail::require(stride >= 1 && padding >= 0, "conv3d: bad stride/padding");
  const int N = x.shape[0], Ci = x.shape[1], D = x.shape[2], H = x.shape[3], W = x.shape[4];
  const int Co = w.shape[0], kd = w.shape[2], kh = w.shape[3], kw = w.shape[4];
  const int Do = (D + 2 * padding - kd) / stride + 1;
  const int Ho = (H + 2 * padding - kh) / stride + 1;
  const int Wo = (W + 2 * padding - kw) / stride + 1;
  detail::require(Do >= 1 && Ho >= 1 && Wo >= 1, "conv3d: kernel larger than padded input");

  Tensor<T> out({N, Co, Do, Ho, Wo});
  const std::int64_t in_sp = static_cast<std::int64_t>(D) * H * W;
  const std::int64_t out_sp = static_cast<std::int64_t>(Do) * Ho * Wo;
  const std::int64_t ker_sp = static_cast<std::int64_t>(kd) * kh * kw;

  for (int n = 0; n < N; ++n) {
    for (int co = 0; co < Co; ++co) {
      T* op = &out.data[static_cast<std::size_t>((static_cast<std::int64_t>(n) * Co + co) * out_sp)];
      for (std::int64_t i = 0; i < out_sp; ++i) op[i] = b.data[static_cast<std::size_t>(co)];
      for (int ci = 0; ci < Ci; ++ci) {
        const T* xp = &x.data[static_cast<std::size_t>((static_cast<std::int64_t>(n) * Ci + ci) * in_sp)];
        const T* wp = &w.data[static_cast<std::size_t>((static_cast<std::int64_t>(co) * Ci + ci) * ker_sp)];
        for (int kz = 0; kz < kd; ++kz) {
          for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
              const T wv = wp[(static_cast<std::int64_t>(kz) * kh + ky) * kw + kx];
              if (wv == T{0}) continue;
              for (int oz = 0; oz < Do; ++oz) {
                const int iz = oz * stride - padding + kz;
                if (iz < 0 || iz >= D) continue;
                for (int oy = 0; oy < Ho; ++oy) {
                  const int iy = oy * stride - padding + ky;
                  if (iy < 0 || iy >= H) continue;
                  T* orow = op + (static_cast<std::int64_t>(oz) * Ho + oy) * Wo;
                  const T* xrow = xp + (static_cast<std::int64_t>(iz) * H + iy) * W;
                  const int ox_lo = std::max(0, (padding - kx + stride - 1) / stride);
                  for (int ox = ox_lo; ox < Wo; ++ox) {
                    const int ix = ox * stride - padding + kx;
                    if (ix >= W) break;
                    orow[ox] += wv * xrow[ix];
                  }
                }
              }
            }
          }
        }
      }
    }
  }

  auto backward = [xid, wid, bid, stride, padding](Graph<T>& gg, NodeId self) {
    const auto& x = gg.value(xid);
    const auto& w = gg.value(wid);
    const auto& dy = gg.grad(self);
    auto& dx = gg.grad(xid);
    auto& dw = gg.grad(wid);
    auto& db = gg.grad(bid);
    const auto& oshape = gg.value(self).shape;
    const int N = x.shape[0], Ci = x.shape[1], D = x.shape[2], H = x.shape[3], W = x.shape[4];
    const int Co = w.shape[0], kd = w.shape[2], kh = w.shape[3], kw = w.shape[4];
    const int Do = oshape[2], Ho = oshape[3], Wo = oshape[4];
    const std::int64_t in_sp = static_cast<std::int64_t>(D) * H * W;
    const std::int64_t out_sp = static_cast<std::int64_t>(Do) * Ho * Wo;
    const std::int64_t ker_sp = static_cast<std::int64_t>(kd) * kh * kw;
    for (int n = 0; n < N; ++n) {
      for (int co = 0; co < Co; ++co) {
        const T* dyp = &dy[static_cast<std::size_t>((static_cast<std::int64_t>(n) * Co + co) * out_sp)];
        T db_acc{0};
        for (std::int64_t i = 0; i < out_sp; ++i) db_acc += dyp[i];
        db[static_cast<std::size_t>(co)] += db_acc;
        for (int ci = 0; ci < Ci; ++ci) {
          const T* xp = &x.data[static_cast<std::size_t>((static_cast<std::int64_t>(n) * Ci + ci) * in_sp)];
          T* dxp = &dx[static_cast<std::size_t>((static_cast<std::int64_t>(n) * Ci + ci) * in_sp)];
          const T* wp = &w.data[static_cast<std::size_t>((static_cast<std::int64_t>(co) * Ci + ci) * ker_sp)];
          T* dwp = &dw[static_cast<std::size_t>((static_cast<std::int64_t>(co) * Ci + ci) * ker_sp)];
          for (int kz = 0; kz < kd; ++kz) {
            for (int ky = 0; ky < kh; ++ky) {
              for (int kx = 0; kx < kw; ++kx) {
                const std::int64_t kidx = (static_cast<std::int64_t>(kz) * kh + ky) * kw + kx;
                const T wv = wp[kidx];
                T dw_acc{0};
                for (int oz = 0; oz < Do; ++oz) {
                  const int iz = oz * stride - padding + kz;
                  if (iz < 0 || iz >= D) continue;
                  for (int oy = 0; oy < Ho; ++oy) {
                    const int iy = oy * stride - padding + ky;
                    if (iy < 0 || iy >= H) continue;
                    const T* dyrow = dyp + (static_cast<std::int64_t>(oz) * Ho + oy) * Wo;
                    const T* xrow = xp + (static_cast<std::int64_t>(iz) * H + iy) * W;
                    T* dxrow = dxp + (static_cast<std::int64_t>(iz) * H + iy) * W;
                    for (int ox = 0; ox < Wo; ++ox) {
                      const int ix = ox * stride - padding + kx;
                      if (ix < 0 || ix >= W) continue;
                      dw_acc += dyrow[ox] * xrow[ix];
                      dxrow[ix] += dyrow[ox] * wv;
                    }
                  }
                }
                dwp[kidx] += dw_acc;
              }
            }
          }
        }
      }
    }
  };
  return g.emplace(std::move(out), {xid, wid, bid}, std::move(backward));
}

// Per-window max; gradient routes to the first maximal element per window.
template <typename T>
NodeId maxpool3d(Graph<T>& g, NodeId xid, int window = 2, int stride = 2) {
  const auto& x = g.value(xid);
  detail::require(x.shape.size() == 5, "maxpool3d: expects 5-d tensor");
  detail::require(window >= 1 && stride >= 1, "maxpool3d: bad window/stride");
  const int N = x.shape[0], C = x.shape[1], D = x.shape[2], H = x.shape[3], W = x.shape[4];
  detail::require(D >= window && H >= window && W >= window, "maxpool3d: input smaller than window");
  const int Do = (D - window) / stride + 1;
  const int Ho = (H - window) / stride + 1;
  const int Wo = (W - window) / stride + 1;
  Tensor<T> out({N, C, Do, Ho, Wo});
  std::vector<std::int64_t> argmax(out.data.size());
  const std::int64_t in_sp = static_cast<std::int64_t>(D) * H * W;
  std::int64_t oi = 0;
  for (int nc = 0; nc < N * C; ++nc) {
    const T* xp = &x.data[static_cast<std::size_t>(nc * in_sp)];
    for (int oz = 0; oz < Do; ++oz) {
      for (int oy = 0; oy < Ho; ++oy) {
        for (int ox = 0; ox < Wo; ++ox, ++oi) {
          T best{};
          std::int64_t best_idx = -1;
          for (int kz = 0; kz < window; ++kz) {
            for (int ky = 0; ky < window; ++ky) {
              for (int kx = 0; kx < window; ++kx) {
                const std::int64_t idx =
                    (static_cast<std::int64_t>(oz * stride + kz) * H + oy * stride + ky) * W +
                    ox * stride + kx;
                const T v = xp[idx];
                if (best_idx < 0 || v > best) {
                  best = v;
                  best_idx = idx;
                }
              }
            }
          }
          out.data[static_cast<std::size_t>(oi)] = best;
          argmax[static_cast<std::size_t>(oi)] = nc * in_sp + best_idx;
        }
      }
    }
  }
  return g.emplace(std::move(out), {xid},
                   [xid, argmax = std::move(argmax)](Graph<T>& gg, NodeId self) {
                     const auto& dy = gg.grad(self);
                     auto& dx = gg.grad(xid);
                     for (std::size_t i = 0; i < dy.size(); ++i) {
                       dx[static_cast<std::size_t>(argmax[i])] += dy[i];
                     }
                   });
}

namespace detail {

struct LerpAxis {
  int i0, i1;
  double w;  // weight of i1
};

inline std::vector<LerpAxis> align_corners_axis(int src, int dst) {
  std::vector<LerpAxis> out(static_cast<std::size_t>(dst));
  const double scale = dst > 1 ? static_cast<double>(src - 1) / (dst - 1) : 0.0;
  for (int i = 0; i < dst; ++i) {
    const double f = i * scale;
    int i0 = std::min(static_cast<int>(f), src - 1);
    int i1 = std::min(i0 + 1, src - 1);
    out[static_cast<std::size_t>(i)] = {i0, i1, f - i0};
  }
  return out;
}

}  // namespace detail

// Align-corners trilinear upsampling by an integer scale; exact linear map,
// backward is its transpose.
template <typename T>
NodeId upsample_trilinear(Graph<T>& g, NodeId xid, int scale = 2) {
  const auto& x = g.value(xid);
  detail::require(x.shape.size() == 5, "upsample_trilinear: expects 5-d tensor");
  detail::require(scale >= 1, "upsample_trilinear: bad scale");
  const int N = x.shape[0], C = x.shape[1], D = x.shape[2], H = x.shape[3], W = x.shape[4];
  const int Do = D * scale, Ho = H * scale, Wo = W * scale;
  const auto az = detail::align_corners_axis(D, Do);
  const auto ay = detail::align_corners_axis(H, Ho);
  const auto ax = detail::align_corners_axis(W, Wo);
  Tensor<T> out({N, C, Do, Ho, Wo});
  const std::int64_t in_sp = static_cast<std::int64_t>(D) * H * W;
  std::int64_t oi = 0;
  for (int nc = 0; nc < N * C; ++nc) {
    const T* xp = &x.data[static_cast<std::size_t>(nc * in_sp)];
    for (int oz = 0; oz < Do; ++oz) {
      const auto& lz = az[static_cast<std::size_t>(oz)];
      for (int oy = 0; oy < Ho; ++oy) {
        const auto& ly = ay[static_cast<std::size_t>(oy)];
        for (int ox = 0; ox < Wo; ++ox, ++oi) {
          const auto& lx = ax[static_cast<std::size_t>(ox)];
          auto sample = [&](int z, int y, int xx) {
            return static_cast<double>(xp[(static_cast<std::int64_t>(z) * H + y) * W + xx]);
          };
          const double c00 = sample(lz.i0, ly.i0, lx.i0) * (1 - lx.w) + sample(lz.i0, ly.i0, lx.i1) * lx.w;
          const double c01 = sample(lz.i0, ly.i1, lx.i0) * (1 - lx.w) + sample(lz.i0, ly.i1, lx.i1) * lx.w;
          const double c10 = sample(lz.i1, ly.i0, lx.i0) * (1 - lx.w) + sample(lz.i1, ly.i0, lx.i1) * lx.w;
          const double c11 = sample(lz.i1, ly.i1, lx.i0) * (1 - lx.w) + sample(lz.i1, ly.i1, lx.i1) * lx.w;
          const double c0 = c00 * (1 - ly.w) + c01 * ly.w;
          const double c1 = c10 * (1 - ly.w) + c11 * ly.w;
          out.data[static_cast<std::size_t>(oi)] = static_cast<T>(c0 * (1 - lz.w) + c1 * lz.w);
        }
      }
    }
  }
  auto backward = [xid, az, ay, ax](Graph<T>& gg, NodeId self) {
    const auto& dy = gg.grad(self);
    auto& dx = gg.grad(xid);
    const auto& xsh = gg.value(xid).shape;
    const int N = xsh[0], C = xsh[1], D = xsh[2], H = xsh[3], W = xsh[4];
    const int Do = static_cast<int>(az.size()), Ho = static_cast<int>(ay.size()),
              Wo = static_cast<int>(ax.size());
    const std::int64_t in_sp = static_cast<std::int64_t>(D) * H * W;
    std::int64_t oi = 0;
    for (int nc = 0; nc < N * C; ++nc) {
      T* dxp = &dx[static_cast<std::size_t>(nc * in_sp)];
      for (int oz = 0; oz < Do; ++oz) {
        const auto& lz = az[static_cast<std::size_t>(oz)];
        for (int oy = 0; oy < Ho; ++oy) {
          const auto& ly = ay[static_cast<std::size_t>(oy)];
          for (int ox = 0; ox < Wo; ++ox, ++oi) {
            const auto& lx = ax[static_cast<std::size_t>(ox)];
            const double gval = static_cast<double>(dy[static_cast<std::size_t>(oi)]);
            auto acc = [&](int z, int y, int xx, double w) {
              dxp[(static_cast<std::int64_t>(z) * H + y) * W + xx] += static_cast<T>(gval * w);
            };
            acc(lz.i0, ly.i0, lx.i0, (1 - lz.w) * (1 - ly.w) * (1 - lx.w));
            acc(lz.i0, ly.i0, lx.i1, (1 - lz.w) * (1 - ly.w) * lx.w);
            acc(lz.i0, ly.i1, lx.i0, (1 - lz.w) * ly.w * (1 - lx.w));
            acc(lz.i0, ly.i1, lx.i1, (1 - lz.w) * ly.w * lx.w);
            acc(lz.i1, ly.i0, lx.i0, lz.w * (1 - ly.w) * (1 - lx.w));
            acc(lz.i1, ly.i0, lx.i1, lz.w * (1 - ly.w) * lx.w);
            acc(lz.i1, ly.i1, lx.i0, lz.w * ly.w * (1 - lx.w));
            acc(lz.i1, ly.i1, lx.i1, lz.w * ly.w * lx.w);
          }
        }
      }
    }
  };
  return g.emplace(std::move(out), {xid}, std::move(backward));
}

// x: (N, C, D, H, W) scaled by single-channel coefficients (N, 1, D, H, W).
template <typename T>
NodeId mul_broadcast(Graph<T>& g, NodeId xid, NodeId aid) {
  const auto& x = g.value(xid);
  const auto& a = g.value(aid);
  detail::require(x.shape.size() == 5 && a.shape.size() == 5, "mul_broadcast: expects 5-d tensors");
  detail::require(a.shape[1] == 1 && a.shape[0] == x.shape[0] && a.shape[2] == x.shape[2] &&
                      a.shape[3] == x.shape[3] && a.shape[4] == x.shape[4],
                  "mul_broadcast: coefficient shape must be (N,1,D,H,W) matching x");
  const int N = x.shape[0], C = x.shape[1];
  const std::int64_t sp = static_cast<std::int64_t>(x.shape[2]) * x.shape[3] * x.shape[4];
  Tensor<T> out = x;
  for (int n = 0; n < N; ++n) {
    const T* ap = &a.data[static_cast<std::size_t>(n * sp)];
    for (int c = 0; c < C; ++c) {
      T* op = &out.data[static_cast<std::size_t>((static_cast<std::int64_t>(n) * C + c) * sp)];
      for (std::int64_t i = 0; i < sp; ++i) op[i] *= ap[i];
    }
  }
  return g.emplace(std::move(out), {xid, aid}, [xid, aid](Graph<T>& gg, NodeId self) {
    const auto& dy = gg.grad(self);
    const auto& x = gg.value(xid);
    const auto& a = gg.value(aid);
    auto& dx = gg.grad(xid);
    auto& da = gg.grad(aid);
    const int N = x.shape[0], C = x.shape[1];
    const std::int64_t sp = static_cast<std::int64_t>(x.shape[2]) * x.shape[3] * x.shape[4];
    for (int n = 0; n < N; ++n) {
      const T* ap = &a.data[static_cast<std::size_t>(n * sp)];
      T* dap = &da[static_cast<std::size_t>(n * sp)];
      for (int c = 0; c < C; ++c) {
        const std::size_t base = static_cast<std::size_t>((static_cast<std::int64_t>(n) * C + c) * sp);
        for (std::int64_t i = 0; i < sp; ++i) {
          dx[base + static_cast<std::size_t>(i)] += dy[base + static_cast<std::size_t>(i)] * ap[i];
          dap[i] += dy[base + static_cast<std::size_t>(i)] * x.data[base + static_cast<std::size_t>(i)];
        }
      }
    }
  });
}

template <typename T>
NodeId concat_channels(Graph<T>& g, NodeId aid, NodeId bid) {
  const auto& a = g.value(aid);
  const auto& b = g.value(bid);
  detail::require(a.shape.size() == 5 && b.shape.size() == 5, "concat_channels: expects 5-d tensors");
  detail::require(a.shape[0] == b.shape[0] && a.shape[2] == b.shape[2] &&
                      a.shape[3] == b.shape[3] && a.shape[4] == b.shape[4],
                  "concat_channels: non-channel dims must match");
  const int N = a.shape[0], Ca = a.shape[1], Cb = b.shape[1];
  const std::int64_t sp = static_cast<std::int64_t>(a.shape[2]) * a.shape[3] * a.shape[4];
  Tensor<T> out({N, Ca + Cb, a.shape[2], a.shape[3], a.shape[4]});
  for (int n = 0; n < N; ++n) {
    std::copy_n(&a.data[static_cast<std::size_t>(n * Ca * sp)], Ca * sp,
                &out.data[static_cast<std::size_t>(n * (Ca + Cb) * sp)]);
    std::copy_n(&b.data[static_cast<std::size_t>(n * Cb * sp)], Cb * sp,
                &out.data[static_cast<std::size_t>((n * (Ca + Cb) + Ca) * sp)]);
  }
  return g.emplace(std::move(out), {aid, bid}, [aid, bid](Graph<T>& gg, NodeId self) {
    const auto& dy = gg.grad(self);
    auto& da = gg.grad(aid);
    auto& db = gg.grad(bid);
    const auto& ash = gg.value(aid).shape;
    const auto& bsh = gg.value(bid).shape;
    const int N = ash[0], Ca = ash[1], Cb = bsh[1];
    const std::int64_t sp = static_cast<std::int64_t>(ash[2]) * ash[3] * ash[4];
    for (int n = 0; n < N; ++n) {
      for (std::int64_t i = 0; i < Ca * sp; ++i) {
        da[static_cast<std::size_t>(n * Ca * sp + i)] +=
            dy[static_cast<std::size_t>(n * (Ca + Cb) * sp + i)];
      }
      for (std::int64_t i = 0; i < Cb * sp; ++i) {
        db[static_cast<std::size_t>(n * Cb * sp + i)] +=
            dy[static_cast<std::size_t>((n * (Ca + Cb) + Ca) * sp + i)];
      }
    }
  });
}

// Softmax over the channel axis of (N, C, spatial...).
template <typename T>
NodeId softmax_channels(Graph<T>& g, NodeId xid) {
  const auto& x = g.value(xid);
  detail::require(x.shape.size() >= 2, "softmax_channels: needs a channel axis");
  const int N = x.shape[0], C = x.shape[1];
  std::int64_t sp = 1;
  for (std::size_t i = 2; i < x.shape.size(); ++i) sp *= x.shape[i];
  Tensor<T> out = x;
  for (int n = 0; n < N; ++n) {
    for (std::int64_t v = 0; v < sp; ++v) {
      const std::size_t base = static_cast<std::size_t>(n * C * sp + v);
      T mx = out.data[base];
      for (int c = 1; c < C; ++c) mx = std::max(mx, out.data[base + static_cast<std::size_t>(c * sp)]);
      T total{0};
      for (int c = 0; c < C; ++c) {
        T& e = out.data[base + static_cast<std::size_t>(c * sp)];
        e = std::exp(e - mx);
        total += e;
      }
      for (int c = 0; c < C; ++c) out.data[base + static_cast<std::size_t>(c * sp)] /= total;
    }
  }
  return g.emplace(std::move(out), {xid}, [xid](Graph<T>& gg, NodeId self) {
    const auto& dy = gg.grad(self);
    const auto& p = gg.value(self);
    auto& dx = gg.grad(xid);
    const int N = p.shape[0], C = p.shape[1];
    std::int64_t sp = 1;
    for (std::size_t i = 2; i < p.shape.size(); ++i) sp *= p.shape[i];
    for (int n = 0; n < N; ++n) {
      for (std::int64_t v = 0; v < sp; ++v) {
        const std::size_t base = static_cast<std::size_t>(n * C * sp + v);
        T dot{0};
        for (int c = 0; c < C; ++c) {
          const std::size_t i = base + static_cast<std::size_t>(c * sp);
          dot += dy[i] * p.data[i];
        }
        for (int c = 0; c < C; ++c) {
          const std::size_t i = base + static_cast<std::size_t>(c * sp);
          dx[i] += p.data[i] * (dy[i] - dot);
        }
      }
    }
  });
}

inline constexpr double kDiceSmooth = 1e-6;

// Soft dice loss: 1 - mean_c (2*sum(p*t) + eps) / (sum(p^2) + sum(t^2) + eps),
// channels macro-averaged over the foreground set {1..C-1} when
// foreground_only is set (a single-channel tensor always uses channel 0).
// The target is treated as a constant; gradients flow to the prediction only.
template <typename T>
NodeId dice_loss(Graph<T>& g, NodeId pid, NodeId tid, bool foreground_only = true) {
  const auto& p = g.value(pid);
  const auto& t = g.value(tid);
  detail::require(p.shape == t.shape, "dice_loss: shape mismatch");
  detail::require(p.shape.size() >= 2, "dice_loss: needs a channel axis");
  const int N = p.shape[0], C = p.shape[1];
  std::int64_t sp = 1;
  for (std::size_t i = 2; i < p.shape.size(); ++i) sp *= p.shape[i];
  const int c0 = (foreground_only && C > 1) ? 1 : 0;
  const int num_sel = C - c0;

  std::vector<double> inter(static_cast<std::size_t>(C), 0.0);
  std::vector<double> denom(static_cast<std::size_t>(C), 0.0);
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const std::size_t base = static_cast<std::size_t>((static_cast<std::int64_t>(n) * C + c) * sp);
      double num = 0.0, den = 0.0;
      for (std::int64_t i = 0; i < sp; ++i) {
        const double pv = p.data[base + static_cast<std::size_t>(i)];
        const double tv = t.data[base + static_cast<std::size_t>(i)];
        num += pv * tv;
        den += pv * pv + tv * tv;
      }
      inter[static_cast<std::size_t>(c)] += num;
      denom[static_cast<std::size_t>(c)] += den;
    }
  }
  double mean_dice = 0.0;
  for (int c = c0; c < C; ++c) {
    mean_dice += (2.0 * inter[static_cast<std::size_t>(c)] + kDiceSmooth) /
                 (denom[static_cast<std::size_t>(c)] + kDiceSmooth);
  }
  mean_dice /= num_sel;
  Tensor<T> out({1}, {static_cast<T>(1.0 - mean_dice)});

  auto backward = [pid, tid, c0, num_sel, inter = std::move(inter),
                   denom = std::move(denom)](Graph<T>& gg, NodeId self) {
    const T dloss = gg.grad(self)[0];
    const auto& p = gg.value(pid);
    const auto& t = gg.value(tid);
    auto& dp = gg.grad(pid);
    const int N = p.shape[0], C = p.shape[1];
    std::int64_t sp = 1;
    for (std::size_t i = 2; i < p.shape.size(); ++i) sp *= p.shape[i];
    for (int c = c0; c < C; ++c) {
      const double num = 2.0 * inter[static_cast<std::size_t>(c)] + kDiceSmooth;
      const double den = denom[static_cast<std::size_t>(c)] + kDiceSmooth;
      for (int n = 0; n < N; ++n) {
        const std::size_t base = static_cast<std::size_t>((static_cast<std::int64_t>(n) * C + c) * sp);
        for (std::int64_t i = 0; i < sp; ++i) {
          const double pv = p.data[base + static_cast<std::size_t>(i)];
          const double tv = t.data[base + static_cast<std::size_t>(i)];
          // d(dice_c)/dp = (2 t den - num 2 p) / den^2; loss adds -1/K of it
          const double ddice = (2.0 * tv * den - num * 2.0 * pv) / (den * den);
          dp[base + static_cast<std::size_t>(i)] +=
              static_cast<T>(-ddice / num_sel) * dloss;
        }
      }
    }
  };
  return g.emplace(std::move(out), {pid, tid}, std::move(backward));
}

}  // namespace segkit::ad
