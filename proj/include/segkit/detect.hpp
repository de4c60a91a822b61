#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <vector>

#include "segkit/errors.hpp"
#include "segkit/volume.hpp"

namespace segkit {

struct Slice2D {
  int height = 0;
  int width = 0;
  std::vector<float> data;

  Slice2D() = default;
  Slice2D(int h, int w, float fill = 0.0f)
      : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

  float& at(int r, int c) { return data[static_cast<std::size_t>(r) * width + c]; }
  float at(int r, int c) const { return data[static_cast<std::size_t>(r) * width + c]; }
};

struct BinaryMask2D {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bits;

  BinaryMask2D() = default;
  BinaryMask2D(int h, int w)
      : height(h), width(w), bits(static_cast<std::size_t>(h) * w, 0) {}

  std::uint8_t& at(int r, int c) { return bits[static_cast<std::size_t>(r) * width + c]; }
  std::uint8_t at(int r, int c) const { return bits[static_cast<std::size_t>(r) * width + c]; }

  std::int64_t population() const {
    std::int64_t n = 0;
    for (auto b : bits) n += b;
    return n;
  }

  friend bool operator==(const BinaryMask2D&, const BinaryMask2D&) = default;
};

// Inclusive (row, col) extents.
struct BoundingBox2D {
  int min_row = 0, min_col = 0;
  int max_row = 0, max_col = 0;

  friend bool operator==(const BoundingBox2D&, const BoundingBox2D&) = default;

  std::int64_t area() const {
    return static_cast<std::int64_t>(max_row - min_row + 1) * (max_col - min_col + 1);
  }
  bool contains(const BoundingBox2D& other) const {
    return min_row <= other.min_row && min_col <= other.min_col &&
           max_row >= other.max_row && max_col >= other.max_col;
  }
  bool intersects(const BoundingBox2D& other) const {
    return min_row <= other.max_row && other.min_row <= max_row &&
           min_col <= other.max_col && other.min_col <= max_col;
  }
};

struct DetectedObject {
  int label = 0;        // 1-based, scanline first-pixel order
  std::int64_t area = 0;  // pixel count
  BoundingBox2D bbox;
};

enum class ThresholdMode { kFixed, kOtsu };

struct DetectParams {
  ThresholdMode mode = ThresholdMode::kFixed;
  float thresh = 0.65f;          // fixed mode: fraction of the equalized range
  std::int64_t area_thresh = 64; // objects with area < this are eliminated
  int dilation_radius = 1;
  int equalize_bins = 256;
  bool equalize = true;
};

// Contrast stretch by the histogram CDF, computed over `bins` uniform-width
// bins on the slice's own range. Constant slices pass through unchanged.
inline Slice2D equalize_histogram(const Slice2D& s, int bins = 256) {
  if (bins < 2) throw config_error("equalize_histogram needs bins >= 2");
  Slice2D out = s;
  if (s.data.empty()) return out;
  const auto [lo_it, hi_it] = std::minmax_element(s.data.begin(), s.data.end());
  const float lo = *lo_it, hi = *hi_it;
  if (hi <= lo) return out;
  std::vector<std::int64_t> hist(static_cast<std::size_t>(bins), 0);
  const double scale = bins / (static_cast<double>(hi) - lo);
  auto bin_of = [&](float v) {
    int b = static_cast<int>((v - lo) * scale);
    return std::min(b, bins - 1);
  };
  for (float v : s.data) ++hist[static_cast<std::size_t>(bin_of(v))];
  std::vector<double> cdf(static_cast<std::size_t>(bins));
  const double total = static_cast<double>(s.data.size());
  std::int64_t run = 0;
  for (int b = 0; b < bins; ++b) {
    run += hist[static_cast<std::size_t>(b)];
    cdf[static_cast<std::size_t>(b)] = run / total;
  }
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    out.data[i] = static_cast<float>(cdf[static_cast<std::size_t>(bin_of(s.data[i]))]);
  }
  return out;
}

// Bin boundary maximizing between-class variance.
inline float otsu_threshold(const Slice2D& s, int bins = 256) {
  if (bins < 2) throw config_error("otsu_threshold needs bins >= 2");
  if (s.data.empty()) throw empty_content_error("otsu on empty slice");
  const auto [lo_it, hi_it] = std::minmax_element(s.data.begin(), s.data.end());
  const float lo = *lo_it, hi = *hi_it;
  if (hi <= lo) throw error("otsu_threshold: degenerate histogram (constant slice)");
  std::vector<std::int64_t> hist(static_cast<std::size_t>(bins), 0);
  const double scale = bins / (static_cast<double>(hi) - lo);
  for (float v : s.data) {
    int b = std::min(static_cast<int>((v - lo) * scale), bins - 1);
    ++hist[static_cast<std::size_t>(b)];
  }
  const double total = static_cast<double>(s.data.size());
  double sum_all = 0.0;
  for (int b = 0; b < bins; ++b) sum_all += b * static_cast<double>(hist[static_cast<std::size_t>(b)]);
  double w0 = 0.0, sum0 = 0.0, best_var = -1.0;
  int best_bin = 0;
  for (int b = 0; b < bins - 1; ++b) {
    w0 += static_cast<double>(hist[static_cast<std::size_t>(b)]);
    if (w0 == 0.0) continue;
    const double w1 = total - w0;
    if (w1 == 0.0) break;
    sum0 += b * static_cast<double>(hist[static_cast<std::size_t>(b)]);
    const double m0 = sum0 / w0;
    const double m1 = (sum_all - sum0) / w1;
    const double var = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (var > best_var) {
      best_var = var;
      best_bin = b;
    }
  }
  // threshold at the upper boundary of the winning bin
  return lo + static_cast<float>((best_bin + 1) / scale);
}

inline BinaryMask2D threshold_slice(const Slice2D& s, float t) {
  BinaryMask2D out(s.height, s.width);
  for (std::size_t i = 0; i < s.data.size(); ++i) out.bits[i] = s.data[i] > t ? 1 : 0;
  return out;
}

// Square structuring element of side 2*radius+1 (Chebyshev ball).
inline BinaryMask2D dilate(const BinaryMask2D& m, int radius) {
  if (radius < 0) throw config_error("dilation radius must be >= 0");
  if (radius == 0) return m;
  // separable: horizontal run-max then vertical run-max
  BinaryMask2D tmp(m.height, m.width);
  for (int r = 0; r < m.height; ++r) {
    for (int c = 0; c < m.width; ++c) {
      std::uint8_t v = 0;
      const int c0 = std::max(0, c - radius), c1 = std::min(m.width - 1, c + radius);
      for (int cc = c0; cc <= c1 && !v; ++cc) v = m.at(r, cc);
      tmp.at(r, c) = v;
    }
  }
  BinaryMask2D out(m.height, m.width);
  for (int r = 0; r < m.height; ++r) {
    for (int c = 0; c < m.width; ++c) {
      std::uint8_t v = 0;
      const int r0 = std::max(0, r - radius), r1 = std::min(m.height - 1, r + radius);
      for (int rr = r0; rr <= r1 && !v; ++rr) v = tmp.at(rr, c);
      out.at(r, c) = v;
    }
  }
  return out;
}

struct ComponentMap {
  std::vector<DetectedObject> objects;
  std::vector<int> labels;  // 0 = background, otherwise object label
};

// 8-connectivity labeling, BFS seeded in scanline order.
inline ComponentMap label_components(const BinaryMask2D& m) {
  ComponentMap out;
  out.labels.assign(m.bits.size(), 0);
  int next_label = 0;
  std::deque<std::pair<int, int>> queue;
  for (int r = 0; r < m.height; ++r) {
    for (int c = 0; c < m.width; ++c) {
      const std::size_t idx = static_cast<std::size_t>(r) * m.width + c;
      if (!m.bits[idx] || out.labels[idx]) continue;
      ++next_label;
      DetectedObject obj{next_label, 0, {r, c, r, c}};
      out.labels[idx] = next_label;
      queue.emplace_back(r, c);
      while (!queue.empty()) {
        auto [cr, cc] = queue.front();
        queue.pop_front();
        ++obj.area;
        obj.bbox.min_row = std::min(obj.bbox.min_row, cr);
        obj.bbox.min_col = std::min(obj.bbox.min_col, cc);
        obj.bbox.max_row = std::max(obj.bbox.max_row, cr);
        obj.bbox.max_col = std::max(obj.bbox.max_col, cc);
        for (int dr = -1; dr <= 1; ++dr) {
          for (int dc = -1; dc <= 1; ++dc) {
            const int nr = cr + dr, nc = cc + dc;
            if (nr < 0 || nr >= m.height || nc < 0 || nc >= m.width) continue;
            const std::size_t nidx = static_cast<std::size_t>(nr) * m.width + nc;
            if (m.bits[nidx] && !out.labels[nidx]) {
              out.labels[nidx] = next_label;
              queue.emplace_back(nr, nc);
            }
          }
        }
      }
      out.objects.push_back(obj);
    }
  }
  return out;
}

inline std::vector<DetectedObject> connected_components(const BinaryMask2D& m) {
  return label_components(m).objects;
}

// Clears pixels of every object with area < area_thresh (strict).
inline BinaryMask2D remove_small_objects(const std::vector<DetectedObject>& objs,
                                         const BinaryMask2D& mask,
                                         std::int64_t area_thresh) {
  const ComponentMap cm = label_components(mask);
  if (cm.objects.size() != objs.size()) {
    throw error("remove_small_objects: objects do not match mask");
  }
  std::vector<bool> keep(objs.size() + 1, false);
  for (const auto& o : objs) {
    if (o.label < 1 || static_cast<std::size_t>(o.label) > objs.size()) {
      throw error("remove_small_objects: bad object label");
    }
    keep[static_cast<std::size_t>(o.label)] = o.area >= area_thresh;
  }
  BinaryMask2D out(mask.height, mask.width);
  for (std::size_t i = 0; i < mask.bits.size(); ++i) {
    out.bits[i] = mask.bits[i] && keep[static_cast<std::size_t>(cm.labels[i])] ? 1 : 0;
  }
  return out;
}

// One slice of the detection pipeline: equalize (optional) -> threshold
// (fixed or Otsu) -> dilate -> components -> small-object removal. Returns
// the bounding boxes of surviving objects in scanline order.
inline std::vector<BoundingBox2D> detect_slice(const Slice2D& s, const DetectParams& p) {
  Slice2D work = p.equalize ? equalize_histogram(s, p.equalize_bins) : s;
  float t = p.thresh;
  if (p.mode == ThresholdMode::kOtsu) {
    const auto [lo, hi] = std::minmax_element(work.data.begin(), work.data.end());
    if (work.data.empty() || *hi <= *lo) return {};  // constant slice: no candidates
    t = otsu_threshold(work, p.equalize_bins);
  }
  BinaryMask2D mask = dilate(threshold_slice(work, t), p.dilation_radius);
  const auto objs = connected_components(mask);
  std::vector<BoundingBox2D> boxes;
  for (const auto& o : objs) {
    if (o.area >= p.area_thresh) boxes.push_back(o.bbox);
  }
  return boxes;
}

struct SliceCandidate {
  int slice = 0;
  BoundingBox2D bbox;
};

struct DetectionResult {
  BoundingBox3D bbox;
  std::int64_t candidate_count = 0;
};

// Volume-level aggregation over axial slices. Candidates are considered in
// slice order; a candidate replaces the incumbent only when its (bbox) area
// is strictly larger AND its region contains the incumbent's region. The
// z-range spans the slices whose candidate intersects the final incumbent.
inline DetectionResult detect_tumor_volume(const Volume3D& v, const DetectParams& p) {
  std::vector<SliceCandidate> candidates;
  for (int z = 0; z < v.dims.z; ++z) {
    Slice2D s(v.dims.y, v.dims.x);
    std::copy_n(&v.data[static_cast<std::size_t>(z) * v.dims.y * v.dims.x],
                s.data.size(), s.data.begin());
    for (const auto& b : detect_slice(s, p)) candidates.push_back({z, b});
  }
  if (candidates.empty()) throw no_tumor_error("no candidate region in any slice");

  BoundingBox2D incumbent = candidates[0].bbox;
  std::int64_t incumbent_area = incumbent.area();
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    const auto& cand = candidates[i].bbox;
    if (cand.area() > incumbent_area && cand.contains(incumbent)) {
      incumbent = cand;
      incumbent_area = cand.area();
    }
  }
  int z_first = -1, z_last = -1;
  for (const auto& c : candidates) {
    if (c.bbox.intersects(incumbent)) {
      if (z_first < 0) z_first = c.slice;
      z_last = c.slice;
    }
  }
  DetectionResult res;
  res.candidate_count = static_cast<std::int64_t>(candidates.size());
  res.bbox = {{z_first, incumbent.min_row, incumbent.min_col},
              {z_last, incumbent.max_row, incumbent.max_col}};
  return res;
}

inline BoundingBox3D expand_clamped(const BoundingBox3D& box, int margin, const Index3& dims) {
  BoundingBox3D out;
  out.min = {std::max(0, box.min.z - margin), std::max(0, box.min.y - margin),
             std::max(0, box.min.x - margin)};
  out.max = {std::min(dims.z - 1, box.max.z + margin), std::min(dims.y - 1, box.max.y + margin),
             std::min(dims.x - 1, box.max.x + margin)};
  return out;
}

inline std::pair<MultiModalVolume, LabelVolume> crop_to_tumor(const MultiModalVolume& m,
                                                              const LabelVolume& l,
                                                              const BoundingBox3D& box,
                                                              int margin) {
  check_box(box, m.dims());
  if (!(l.dims == m.dims())) throw shape_error("mask dims differ from modalities");
  const BoundingBox3D grown = expand_clamped(box, margin, m.dims());
  MultiModalVolume out;
  for (int i = 0; i < 4; ++i) out.modalities[static_cast<std::size_t>(i)] = crop(m.modalities[static_cast<std::size_t>(i)], grown);
  return {out, crop(l, grown)};
}

}  // namespace segkit
