#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "segkit/autodiff.hpp"
#include "segkit/errors.hpp"
#include "segkit/volume.hpp"

namespace segkit {

struct ConfusionCounts {
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::int64_t total() const { return tp + fp + fn + tn; }
};

enum class Region { kWT, kTC, kET };

inline const char* region_name(Region r) {
  switch (r) {
    case Region::kWT: return "WT";
    case Region::kTC: return "TC";
    default: return "ET";
  }
}

// Member labels per region (internal ids; 3 is raw BraTS 4): WT {1,2,3},
// TC {1,3}, ET {3}. ET ⊆ TC ⊆ WT.
inline bool in_region(std::uint8_t label, Region r) {
  switch (r) {
    case Region::kWT: return label == 1 || label == 2 || label == 3;
    case Region::kTC: return label == 1 || label == 3;
    default: return label == 3;
  }
}

inline ConfusionCounts confusion(const LabelVolume& pred, const LabelVolume& truth, Region r) {
  if (!(pred.dims == truth.dims)) throw shape_error("confusion: dims mismatch");
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.labels.size(); ++i) {
    const bool p = in_region(pred.labels[i], r);
    const bool t = in_region(truth.labels[i], r);
    if (p && t) ++c.tp;
    else if (p) ++c.fp;
    else if (t) ++c.fn;
    else ++c.tn;
  }
  return c;
}

// A ratio metric whose denominator may be empty. Undefined values are
// surfaced explicitly (value is NaN), never silently mapped to 0 or 1.
struct MetricValue {
  double value = 0.0;
  bool defined = true;

  static MetricValue undefined() {
    return {std::numeric_limits<double>::quiet_NaN(), false};
  }
};

inline MetricValue iou(const ConfusionCounts& c) {
  const std::int64_t den = c.tp + c.fp + c.fn;
  if (den == 0) return MetricValue::undefined();
  return {static_cast<double>(c.tp) / static_cast<double>(den), true};
}

inline MetricValue sensitivity(const ConfusionCounts& c) {
  const std::int64_t den = c.tp + c.fn;
  if (den == 0) return MetricValue::undefined();
  return {static_cast<double>(c.tp) / static_cast<double>(den), true};
}

inline MetricValue specificity(const ConfusionCounts& c) {
  const std::int64_t den = c.tn + c.fp;
  if (den == 0) return MetricValue::undefined();
  return {static_cast<double>(c.tn) / static_cast<double>(den), true};
}

inline MetricValue accuracy(const ConfusionCounts& c) {
  const std::int64_t den = c.total();
  if (den == 0) return MetricValue::undefined();
  return {static_cast<double>(c.tp + c.tn) / static_cast<double>(den), true};
}

inline MetricValue dice_coefficient(const ConfusionCounts& c) {
  const std::int64_t den = 2 * c.tp + c.fp + c.fn;
  if (den == 0) return MetricValue::undefined();
  return {2.0 * static_cast<double>(c.tp) / static_cast<double>(den), true};
}

// Continuous dice on probabilities, the complement of the training loss.
template <typename T>
double soft_dice(const ad::Tensor<T>& p, const ad::Tensor<T>& t, bool foreground_only = true) {
  ad::Graph<T> g;
  const ad::NodeId loss = ad::dice_loss(g, g.input(p), g.input(t), foreground_only);
  return 1.0 - static_cast<double>(g.value(loss).data[0]);
}

struct RegionMetrics {
  Region region = Region::kWT;
  ConfusionCounts counts;
  MetricValue accuracy, dice, iou, sensitivity, specificity;
};

struct CaseReport {
  std::array<RegionMetrics, 3> regions;  // WT, TC, ET
  RegionMetrics mean;                    // equal-weight mean over defined values
};

inline RegionMetrics region_metrics(const ConfusionCounts& c, Region r) {
  RegionMetrics m;
  m.region = r;
  m.counts = c;
  m.accuracy = accuracy(c);
  m.dice = dice_coefficient(c);
  m.iou = iou(c);
  m.sensitivity = sensitivity(c);
  m.specificity = specificity(c);
  return m;
}

inline MetricValue mean_of(std::initializer_list<MetricValue> vals) {
  double sum = 0.0;
  int n = 0;
  for (const auto& v : vals) {
    if (v.defined) {
      sum += v.value;
      ++n;
    }
  }
  if (n == 0) return MetricValue::undefined();
  return {sum / n, true};
}

// Argmax over channels (ties -> lowest class id), then WT/TC/ET confusion
// plus the full metric set per region and an all-region mean.
inline CaseReport evaluate_case(const ChannelStack& pred_probs, const LabelVolume& truth) {
  if (!(pred_probs.dims == truth.dims)) throw shape_error("evaluate_case: dims mismatch");
  const LabelVolume pred = argmax_channels(pred_probs);
  CaseReport report;
  const Region regions[3] = {Region::kWT, Region::kTC, Region::kET};
  for (int i = 0; i < 3; ++i) {
    report.regions[static_cast<std::size_t>(i)] =
        region_metrics(confusion(pred, truth, regions[i]), regions[i]);
  }
  const auto& r = report.regions;
  report.mean.accuracy = mean_of({r[0].accuracy, r[1].accuracy, r[2].accuracy});
  report.mean.dice = mean_of({r[0].dice, r[1].dice, r[2].dice});
  report.mean.iou = mean_of({r[0].iou, r[1].iou, r[2].iou});
  report.mean.sensitivity = mean_of({r[0].sensitivity, r[1].sensitivity, r[2].sensitivity});
  report.mean.specificity = mean_of({r[0].specificity, r[1].specificity, r[2].specificity});
  return report;
}

}  // namespace segkit
