#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "segkit/errors.hpp"
#include "segkit/volume.hpp"

namespace segkit {

// Synthetic desk-scale test case: an elliptical "brain" of noisy tissue, one
// bright spherical tumor with nested shell labels (3 core / 1 mid / 2 rim)
// and a handful of bright single-voxel distractors labeled background.
// Deterministic per seed.
inline std::pair<MultiModalVolume, LabelVolume> generate_phantom(std::uint64_t seed,
                                                                 Index3 dims,
                                                                 int blob_radius,
                                                                 int num_specks) {
  const int min_dim = std::min({dims.z, dims.y, dims.x});
  if (blob_radius < 2 || 2 * blob_radius + 6 > min_dim) {
    throw config_error("blob_radius does not fit inside dims");
  }
  std::mt19937_64 rng(seed);
  auto uniform = [&](double lo, double hi) {
    return lo + (hi - lo) * (static_cast<double>(rng() >> 11) * 0x1.0p-53);
  };

  MultiModalVolume mm;
  for (auto& v : mm.modalities) v = Volume3D(dims);
  LabelVolume labels(dims);

  // brain ellipsoid just inside the volume
  const double bcz = (dims.z - 1) / 2.0, bcy = (dims.y - 1) / 2.0, bcx = (dims.x - 1) / 2.0;
  const double baz = dims.z / 2.0 - 1.0, bay = dims.y / 2.0 - 1.0, bax = dims.x / 2.0 - 1.0;
  auto in_brain = [&](int z, int y, int x) {
    const double dz = (z - bcz) / baz, dy = (y - bcy) / bay, dx = (x - bcx) / bax;
    return dz * dz + dy * dy + dx * dx <= 1.0;
  };

  // tumor center jittered around the middle, kept inside the brain
  const int jitter = std::max(0, (min_dim / 2 - blob_radius - 3) / 2);
  const int tcz = dims.z / 2 + (jitter ? static_cast<int>(rng() % (2 * jitter + 1)) - jitter : 0);
  const int tcy = dims.y / 2 + (jitter ? static_cast<int>(rng() % (2 * jitter + 1)) - jitter : 0);
  const int tcx = dims.x / 2 + (jitter ? static_cast<int>(rng() % (2 * jitter + 1)) - jitter : 0);

  const double r2 = static_cast<double>(blob_radius) * blob_radius;
  for (int z = 0; z < dims.z; ++z) {
    for (int y = 0; y < dims.y; ++y) {
      for (int x = 0; x < dims.x; ++x) {
        if (!in_brain(z, y, x)) continue;
        const double dz = z - tcz, dy = y - tcy, dx = x - tcx;
        const double d2 = dz * dz + dy * dy + dx * dx;
        float t1, t1ce, t2, flair;
        if (d2 <= r2) {
          const double rho = std::sqrt(d2 / r2);  // 0 center .. 1 rim
          std::uint8_t lab = rho <= 0.5 ? 3 : rho <= 0.8 ? 1 : 2;
          labels.at(z, y, x) = lab;
          const double n = uniform(-0.02, 0.02);
          flair = static_cast<float>(0.90 + n);
          t1 = static_cast<float>(0.15 + n);
          t1ce = static_cast<float>((lab == 3 ? 0.95 : 0.50) + n);
          t2 = static_cast<float>((lab == 1 ? 0.90 : lab == 3 ? 0.70 : 0.45) + n);
        } else {
          t1 = static_cast<float>(uniform(0.10, 0.35));
          t1ce = static_cast<float>(uniform(0.10, 0.35));
          t2 = static_cast<float>(uniform(0.10, 0.35));
          flair = static_cast<float>(uniform(0.10, 0.35));
        }
        mm.modalities[kModalityT1].at(z, y, x) = t1;
        mm.modalities[kModalityT1ce].at(z, y, x) = t1ce;
        mm.modalities[kModalityT2].at(z, y, x) = t2;
        mm.modalities[kModalityFlair].at(z, y, x) = flair;
      }
    }
  }

  // bright single-voxel distractors, kept clear of the tumor and each other
  std::vector<Index3> specks;
  int attempts = 0;
  while (static_cast<int>(specks.size()) < num_specks && attempts < 10000) {
    ++attempts;
    const int z = static_cast<int>(rng() % static_cast<std::uint64_t>(dims.z));
    const int y = static_cast<int>(rng() % static_cast<std::uint64_t>(dims.y));
    const int x = static_cast<int>(rng() % static_cast<std::uint64_t>(dims.x));
    if (!in_brain(z, y, x)) continue;
    const double dz = z - tcz, dy = y - tcy, dx = x - tcx;
    if (dz * dz + dy * dy + dx * dx <= (blob_radius + 4.0) * (blob_radius + 4.0)) continue;
    bool clear = true;
    for (const auto& s : specks) {
      if (std::abs(s.z - z) <= 4 && std::abs(s.y - y) <= 4 && std::abs(s.x - x) <= 4) {
        clear = false;
        break;
      }
    }
    if (!clear) continue;
    specks.push_back({z, y, x});
    for (auto& v : mm.modalities) v.at(z, y, x) = 0.95f;
  }
  return {std::move(mm), std::move(labels)};
}

}  // namespace segkit
