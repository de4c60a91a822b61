#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "segkit/errors.hpp"

namespace segkit {

// (z, y, x) index triple. Voxel order throughout the library is z-major
// with x fastest: flat index = (z * height + y) * width + x.
struct Index3 {
  int z = 0;
  int y = 0;
  int x = 0;

  friend bool operator==(const Index3&, const Index3&) = default;
};

inline std::int64_t voxel_count(const Index3& dims) {
  return static_cast<std::int64_t>(dims.z) * dims.y * dims.x;
}

// Inclusive axis-aligned box in (z, y, x) coordinates.
struct BoundingBox3D {
  Index3 min;
  Index3 max;

  friend bool operator==(const BoundingBox3D&, const BoundingBox3D&) = default;

  Index3 extents() const {
    return {max.z - min.z + 1, max.y - min.y + 1, max.x - min.x + 1};
  }
  bool contains(const BoundingBox3D& other) const {
    return min.z <= other.min.z && min.y <= other.min.y && min.x <= other.min.x &&
           max.z >= other.max.z && max.y >= other.max.y && max.x >= other.max.x;
  }
};

inline void check_box(const BoundingBox3D& box, const Index3& dims) {
  if (box.min.z < 0 || box.min.y < 0 || box.min.x < 0 ||
      box.min.z > box.max.z || box.min.y > box.max.y || box.min.x > box.max.x ||
      box.max.z >= dims.z || box.max.y >= dims.y || box.max.x >= dims.x) {
    throw bounds_error("bounding box out of volume bounds");
  }
}

// Dense float32 scalar grid.
struct Volume3D {
  Index3 dims;
  std::vector<float> data;
  std::optional<std::array<float, 3>> spacing;  // mm per voxel, (z, y, x)

  Volume3D() = default;
  Volume3D(Index3 d, float fill = 0.0f)
      : dims(d), data(static_cast<std::size_t>(voxel_count(d)), fill) {}

  float& at(int z, int y, int x) {
    return data[(static_cast<std::size_t>(z) * dims.y + y) * dims.x + x];
  }
  float at(int z, int y, int x) const {
    return data[(static_cast<std::size_t>(z) * dims.y + y) * dims.x + x];
  }
};

// The four BraTS modalities, ordered [T1, T1ce, T2, FLAIR].
struct MultiModalVolume {
  std::array<Volume3D, 4> modalities;

  Index3 dims() const { return modalities[0].dims; }

  void check_consistent() const {
    for (const auto& m : modalities) {
      if (!(m.dims == modalities[0].dims)) {
        throw shape_error("modalities have inconsistent dims");
      }
    }
  }
};

inline constexpr int kModalityT1 = 0;
inline constexpr int kModalityT1ce = 1;
inline constexpr int kModalityT2 = 2;
inline constexpr int kModalityFlair = 3;

// Per-voxel class ids in {0,1,2,3}. Raw BraTS label 4 is remapped to 3 on load.
struct LabelVolume {
  Index3 dims;
  std::vector<std::uint8_t> labels;

  LabelVolume() = default;
  LabelVolume(Index3 d, std::uint8_t fill = 0)
      : dims(d), labels(static_cast<std::size_t>(voxel_count(d)), fill) {}

  std::uint8_t& at(int z, int y, int x) {
    return labels[(static_cast<std::size_t>(z) * dims.y + y) * dims.x + x];
  }
  std::uint8_t at(int z, int y, int x) const {
    return labels[(static_cast<std::size_t>(z) * dims.y + y) * dims.x + x];
  }
};

// Channel-major float stack (channels, depth, height, width); the in-memory
// twin of the VOL1 file payload and the per-case training tensor.
struct ChannelStack {
  int channels = 0;
  Index3 dims;
  std::vector<float> data;

  ChannelStack() = default;
  ChannelStack(int c, Index3 d)
      : channels(c), dims(d),
        data(static_cast<std::size_t>(c) * voxel_count(d), 0.0f) {}

  float& at(int c, int z, int y, int x) {
    return data[((static_cast<std::size_t>(c) * dims.z + z) * dims.y + y) * dims.x + x];
  }
  float at(int c, int z, int y, int x) const {
    return data[((static_cast<std::size_t>(c) * dims.z + z) * dims.y + y) * dims.x + x];
  }
};

inline Volume3D crop(const Volume3D& v, const BoundingBox3D& box) {
  check_box(box, v.dims);
  const Index3 out_dims = box.extents();
  Volume3D out(out_dims);
  out.spacing = v.spacing;
  for (int z = 0; z < out_dims.z; ++z) {
    for (int y = 0; y < out_dims.y; ++y) {
      const float* src = &v.data[(static_cast<std::size_t>(z + box.min.z) * v.dims.y +
                                  (y + box.min.y)) * v.dims.x + box.min.x];
      float* dst = &out.data[(static_cast<std::size_t>(z) * out_dims.y + y) * out_dims.x];
      std::copy(src, src + out_dims.x, dst);
    }
  }
  return out;
}

inline LabelVolume crop(const LabelVolume& v, const BoundingBox3D& box) {
  check_box(box, v.dims);
  const Index3 out_dims = box.extents();
  LabelVolume out(out_dims);
  for (int z = 0; z < out_dims.z; ++z) {
    for (int y = 0; y < out_dims.y; ++y) {
      for (int x = 0; x < out_dims.x; ++x) {
        out.at(z, y, x) = v.at(z + box.min.z, y + box.min.y, x + box.min.x);
      }
    }
  }
  return out;
}

// Tight box around voxels nonzero in any modality.
inline BoundingBox3D nonzero_bbox(const MultiModalVolume& m) {
  m.check_consistent();
  const Index3 d = m.dims();
  BoundingBox3D box{{d.z, d.y, d.x}, {-1, -1, -1}};
  for (int z = 0; z < d.z; ++z) {
    for (int y = 0; y < d.y; ++y) {
      for (int x = 0; x < d.x; ++x) {
        bool nonzero = false;
        for (const auto& vol : m.modalities) {
          if (vol.at(z, y, x) != 0.0f) {
            nonzero = true;
            break;
          }
        }
        if (!nonzero) continue;
        box.min.z = std::min(box.min.z, z);
        box.min.y = std::min(box.min.y, y);
        box.min.x = std::min(box.min.x, x);
        box.max.z = std::max(box.max.z, z);
        box.max.y = std::max(box.max.y, y);
        box.max.x = std::max(box.max.x, x);
      }
    }
  }
  if (box.max.z < 0) throw empty_content_error("all modalities are zero everywhere");
  return box;
}

// (v - min) / (max - min). A constant volume maps to all zeros.
inline Volume3D minmax_normalize(const Volume3D& v) {
  Volume3D out = v;
  if (v.data.empty()) return out;
  const auto [lo_it, hi_it] = std::minmax_element(v.data.begin(), v.data.end());
  const float lo = *lo_it, hi = *hi_it;
  if (hi <= lo) {
    std::fill(out.data.begin(), out.data.end(), 0.0f);
    return out;
  }
  const float scale = 1.0f / (hi - lo);
  for (auto& x : out.data) x = (x - lo) * scale;
  return out;
}

// (v - mean) / (std + 1e-8). Moments over nonzero voxels when nonzero_only.
inline Volume3D zscore_normalize(const Volume3D& v, bool nonzero_only = false) {
  Volume3D out = v;
  double sum = 0.0, sq = 0.0;
  std::int64_t n = 0;
  for (float x : v.data) {
    if (nonzero_only && x == 0.0f) continue;
    sum += x;
    sq += static_cast<double>(x) * x;
    ++n;
  }
  if (n == 0) return out;
  const double mean = sum / n;
  const double var = std::max(0.0, sq / n - mean * mean);
  const double inv = 1.0 / (std::sqrt(var) + 1e-8);
  for (auto& x : out.data) x = static_cast<float>((x - mean) * inv);
  return out;
}

// Align-corners trilinear resampling: source coord = i * (src-1) / (dst-1);
// an axis of extent 1 samples index 0.
inline Volume3D resize_trilinear(const Volume3D& v, const Index3& target) {
  if (target.z < 1 || target.y < 1 || target.x < 1) {
    throw shape_error("resize target dims must be >= 1");
  }
  Volume3D out(target);
  out.spacing = v.spacing;
  auto scale = [](int src, int dst) {
    return dst > 1 ? static_cast<double>(src - 1) / (dst - 1) : 0.0;
  };
  const double sz = scale(v.dims.z, target.z);
  const double sy = scale(v.dims.y, target.y);
  const double sx = scale(v.dims.x, target.x);
  for (int z = 0; z < target.z; ++z) {
    const double fz = z * sz;
    const int z0 = std::min(static_cast<int>(fz), v.dims.z - 1);
    const int z1 = std::min(z0 + 1, v.dims.z - 1);
    const double wz = fz - z0;
    for (int y = 0; y < target.y; ++y) {
      const double fy = y * sy;
      const int y0 = std::min(static_cast<int>(fy), v.dims.y - 1);
      const int y1 = std::min(y0 + 1, v.dims.y - 1);
      const double wy = fy - y0;
      for (int x = 0; x < target.x; ++x) {
        const double fx = x * sx;
        const int x0 = std::min(static_cast<int>(fx), v.dims.x - 1);
        const int x1 = std::min(x0 + 1, v.dims.x - 1);
        const double wx = fx - x0;
        const double c00 = v.at(z0, y0, x0) * (1 - wx) + v.at(z0, y0, x1) * wx;
        const double c01 = v.at(z0, y1, x0) * (1 - wx) + v.at(z0, y1, x1) * wx;
        const double c10 = v.at(z1, y0, x0) * (1 - wx) + v.at(z1, y0, x1) * wx;
        const double c11 = v.at(z1, y1, x0) * (1 - wx) + v.at(z1, y1, x1) * wx;
        const double c0 = c00 * (1 - wy) + c01 * wy;
        const double c1 = c10 * (1 - wy) + c11 * wy;
        out.at(z, y, x) = static_cast<float>(c0 * (1 - wz) + c1 * wz);
      }
    }
  }
  return out;
}

// Nearest-neighbour resize for label masks, same align-corners convention.
inline LabelVolume resize_nearest(const LabelVolume& v, const Index3& target) {
  if (target.z < 1 || target.y < 1 || target.x < 1) {
    throw shape_error("resize target dims must be >= 1");
  }
  LabelVolume out(target);
  auto scale = [](int src, int dst) {
    return dst > 1 ? static_cast<double>(src - 1) / (dst - 1) : 0.0;
  };
  const double sz = scale(v.dims.z, target.z);
  const double sy = scale(v.dims.y, target.y);
  const double sx = scale(v.dims.x, target.x);
  for (int z = 0; z < target.z; ++z) {
    const int zi = std::min(static_cast<int>(std::lround(z * sz)), v.dims.z - 1);
    for (int y = 0; y < target.y; ++y) {
      const int yi = std::min(static_cast<int>(std::lround(y * sy)), v.dims.y - 1);
      for (int x = 0; x < target.x; ++x) {
        const int xi = std::min(static_cast<int>(std::lround(x * sx)), v.dims.x - 1);
        out.at(z, y, x) = v.at(zi, yi, xi);
      }
    }
  }
  return out;
}

// Indicator channels (num_classes, d, h, w); exactly one 1 per voxel.
inline ChannelStack one_hot(const LabelVolume& l, int num_classes) {
  ChannelStack out(num_classes, l.dims);
  const std::int64_t n = voxel_count(l.dims);
  for (std::int64_t i = 0; i < n; ++i) {
    const int c = l.labels[static_cast<std::size_t>(i)];
    if (c >= num_classes) throw error("label >= num_classes in one_hot");
    out.data[static_cast<std::size_t>(c) * n + i] = 1.0f;
  }
  return out;
}

inline LabelVolume argmax_channels(const ChannelStack& s) {
  LabelVolume out(s.dims);
  const std::int64_t n = voxel_count(s.dims);
  for (std::int64_t i = 0; i < n; ++i) {
    int best = 0;
    float best_val = s.data[static_cast<std::size_t>(i)];
    for (int c = 1; c < s.channels; ++c) {
      const float v = s.data[static_cast<std::size_t>(c) * n + i];
      if (v > best_val) {  // ties keep the lowest class id
        best_val = v;
        best = c;
      }
    }
    out.labels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(best);
  }
  return out;
}

}  // namespace segkit
