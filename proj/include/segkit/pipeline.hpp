#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "segkit/dataset.hpp"
#include "segkit/detect.hpp"
#include "segkit/errors.hpp"
#include "segkit/nifti.hpp"
#include "segkit/raw_io.hpp"
#include "segkit/volume.hpp"

namespace segkit {

struct PreprocessConfig {
  Index3 target_size{128, 128, 128};
  DetectParams detect;
  int detect_modality = kModalityFlair;
  int crop_margin = 2;
};

struct CasePreprocessResult {
  std::string id;
  BoundingBox3D brain_box;
  BoundingBox3D tumor_box;  // in brain-cropped coordinates
  std::int64_t per_slice_candidates = 0;
  ChannelStack image;  // (4, target) min-max normalized
  ChannelStack mask;   // (1, target) class ids stored as floats
};

// Per-case preprocessing of the pipeline: brain-region crop -> tumor
// detection on the configured modality -> tumor crop with margin ->
// resize to target -> per-modality min-max normalization.
inline CasePreprocessResult preprocess_case(const std::string& id, const MultiModalVolume& mm,
                                            const LabelVolume& mask,
                                            const PreprocessConfig& cfg) {
  mm.check_consistent();
  if (!(mask.dims == mm.dims())) throw shape_error(id + ": mask dims differ from modalities");

  CasePreprocessResult res;
  res.id = id;
  res.brain_box = nonzero_bbox(mm);
  MultiModalVolume brain;
  for (int i = 0; i < 4; ++i) {
    brain.modalities[static_cast<std::size_t>(i)] = crop(mm.modalities[static_cast<std::size_t>(i)], res.brain_box);
  }
  LabelVolume brain_mask = crop(mask, res.brain_box);

  const auto detection =
      detect_tumor_volume(brain.modalities[static_cast<std::size_t>(cfg.detect_modality)], cfg.detect);
  res.tumor_box = detection.bbox;
  res.per_slice_candidates = detection.candidate_count;

  auto [tumor_mm, tumor_mask] = crop_to_tumor(brain, brain_mask, detection.bbox, cfg.crop_margin);

  res.image = ChannelStack(4, cfg.target_size);
  for (int c = 0; c < 4; ++c) {
    const Volume3D v =
        minmax_normalize(resize_trilinear(tumor_mm.modalities[static_cast<std::size_t>(c)], cfg.target_size));
    std::copy(v.data.begin(), v.data.end(),
              res.image.data.begin() +
                  static_cast<std::ptrdiff_t>(static_cast<std::size_t>(c) * v.data.size()));
  }
  const LabelVolume resized_mask = resize_nearest(tumor_mask, cfg.target_size);
  res.mask = ChannelStack(1, cfg.target_size);
  for (std::size_t i = 0; i < resized_mask.labels.size(); ++i) {
    res.mask.data[i] = static_cast<float>(resized_mask.labels[i]);
  }
  return res;
}

inline LabelVolume mask_from_stack(const ChannelStack& s) {
  if (s.channels != 1) throw shape_error("mask stack must have one channel");
  LabelVolume out(s.dims);
  for (std::size_t i = 0; i < s.data.size(); ++i) {
    out.labels[i] = static_cast<std::uint8_t>(s.data[i]);
  }
  return out;
}

inline MultiModalVolume read_case_modalities(const DatasetCase& c) {
  MultiModalVolume mm;
  mm.modalities[kModalityT1] = read_nifti(c.t1).first;
  mm.modalities[kModalityT1ce] = read_nifti(c.t1ce).first;
  mm.modalities[kModalityT2] = read_nifti(c.t2).first;
  mm.modalities[kModalityFlair] = read_nifti(c.flair).first;
  mm.check_consistent();
  return mm;
}

inline nlohmann::json detection_report(const CasePreprocessResult& r, const DetectParams& p) {
  return {{"case", r.id},
          {"bbox",
           {{"min", {r.tumor_box.min.z, r.tumor_box.min.y, r.tumor_box.min.x}},
            {"max", {r.tumor_box.max.z, r.tumor_box.max.y, r.tumor_box.max.x}}}},
          {"per_slice_candidates", r.per_slice_candidates},
          {"params",
           {{"mode", p.mode == ThresholdMode::kOtsu ? "otsu" : "fixed"},
            {"thresh", p.thresh},
            {"area_thresh", p.area_thresh},
            {"dilation_radius", p.dilation_radius},
            {"equalize_bins", p.equalize_bins},
            {"equalize", p.equalize}}}};
}

// 8-bit binary PGM, min-max scaled; constant slices map to 0.
inline void write_pgm(const Slice2D& s, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot write " + path);
  f << "P5\n" << s.width << " " << s.height << "\n255\n";
  const auto [lo_it, hi_it] = std::minmax_element(s.data.begin(), s.data.end());
  const float lo = *lo_it, hi = *hi_it;
  const float scale = hi > lo ? 255.0f / (hi - lo) : 0.0f;
  for (float v : s.data) {
    const auto byte = static_cast<unsigned char>(std::min(255.0f, std::max(0.0f, (v - lo) * scale)));
    f.write(reinterpret_cast<const char*>(&byte), 1);
  }
  if (!f) throw io_error("short write to " + path);
}

inline Slice2D extract_slice(const Volume3D& v, int axis, int index) {
  if (axis < 0 || axis > 2) throw config_error("axis must be 0 (z), 1 (y) or 2 (x)");
  Slice2D s;
  if (axis == 0) {
    s = Slice2D(v.dims.y, v.dims.x);
    for (int y = 0; y < v.dims.y; ++y)
      for (int x = 0; x < v.dims.x; ++x) s.at(y, x) = v.at(index, y, x);
  } else if (axis == 1) {
    s = Slice2D(v.dims.z, v.dims.x);
    for (int z = 0; z < v.dims.z; ++z)
      for (int x = 0; x < v.dims.x; ++x) s.at(z, x) = v.at(z, index, x);
  } else {
    s = Slice2D(v.dims.z, v.dims.y);
    for (int z = 0; z < v.dims.z; ++z)
      for (int y = 0; y < v.dims.y; ++y) s.at(z, y) = v.at(z, y, index);
  }
  return s;
}

}  // namespace segkit
