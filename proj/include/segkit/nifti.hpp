#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "segkit/errors.hpp"
#include "segkit/volume.hpp"

namespace segkit {

// Supported subset of the NIfTI-1 header. Uncompressed single-file .nii only.
struct NiftiMeta {
  int ndim = 0;
  std::array<int, 4> dims{1, 1, 1, 1};  // (x, y, z, t) as stored in the file
  int datatype = 0;                     // {2, 4, 16, 512}
  float slope = 0.0f;
  float intercept = 0.0f;
  std::array<float, 3> spacing{1.0f, 1.0f, 1.0f};  // (x, y, z)
  bool byte_swapped = false;
};

namespace detail {

template <typename T>
T byteswap_value(T v) {
  auto bytes = std::bit_cast<std::array<std::uint8_t, sizeof(T)>>(v);
  std::reverse(bytes.begin(), bytes.end());
  return std::bit_cast<T>(bytes);
}

template <typename T>
T read_le(const std::uint8_t* p, bool swap) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  if (swap) v = byteswap_value(v);
  return v;
}

}  // namespace detail

inline constexpr int kNiftiHeaderSize = 348;

inline std::pair<Volume3D, NiftiMeta> read_nifti(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open " + path);
  std::vector<std::uint8_t> header(kNiftiHeaderSize);
  f.read(reinterpret_cast<char*>(header.data()), kNiftiHeaderSize);
  if (f.gcount() != kNiftiHeaderSize) throw parse_error(path + ": truncated header");

  std::int32_t sizeof_hdr = detail::read_le<std::int32_t>(&header[0], false);
  bool swap = false;
  if (sizeof_hdr != kNiftiHeaderSize) {
    swap = true;
    sizeof_hdr = detail::byteswap_value(sizeof_hdr);
    if (sizeof_hdr != kNiftiHeaderSize) throw parse_error(path + ": bad header size field");
  }
  if (std::memcmp(&header[344], "n+1\0", 4) != 0) {
    throw parse_error(path + ": bad magic (expected n+1)");
  }

  NiftiMeta meta;
  meta.byte_swapped = swap;
  const int dim0 = detail::read_le<std::int16_t>(&header[40], swap);
  if (dim0 != 3 && dim0 != 4) {
    throw parse_error(path + ": dim[0] must be 3 or 4, got " + std::to_string(dim0));
  }
  meta.ndim = dim0;
  for (int i = 0; i < 4; ++i) {
    const int d = detail::read_le<std::int16_t>(&header[static_cast<std::size_t>(40 + 2 * (i + 1))], swap);
    meta.dims[static_cast<std::size_t>(i)] = i < dim0 ? d : 1;
  }
  if (meta.dims[3] != 1) throw parse_error(path + ": 4D volumes with nt > 1 unsupported");
  meta.datatype = detail::read_le<std::int16_t>(&header[70], swap);
  if (meta.datatype != 2 && meta.datatype != 4 && meta.datatype != 16 && meta.datatype != 512) {
    throw parse_error(path + ": unsupported datatype " + std::to_string(meta.datatype));
  }
  for (int i = 0; i < 3; ++i) {
    meta.spacing[static_cast<std::size_t>(i)] =
        detail::read_le<float>(&header[static_cast<std::size_t>(76 + 4 * (i + 1))], swap);
  }
  const float vox_offset = detail::read_le<float>(&header[108], swap);
  meta.slope = detail::read_le<float>(&header[112], swap);
  meta.intercept = detail::read_le<float>(&header[116], swap);

  const std::int64_t nvox = static_cast<std::int64_t>(meta.dims[0]) * meta.dims[1] * meta.dims[2];
  if (nvox <= 0) throw parse_error(path + ": nonpositive dims");
  const int elem_size = meta.datatype == 2 ? 1 : meta.datatype == 16 ? 4 : 2;

  f.seekg(static_cast<std::streamoff>(vox_offset), std::ios::beg);
  std::vector<std::uint8_t> payload(static_cast<std::size_t>(nvox) * elem_size);
  f.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (f.gcount() != static_cast<std::streamsize>(payload.size())) {
    throw parse_error(path + ": truncated payload");
  }

  // file order is x fastest, y, then z; our flat order matches
  Volume3D v({meta.dims[2], meta.dims[1], meta.dims[0]});
  v.spacing = {{meta.spacing[2], meta.spacing[1], meta.spacing[0]}};
  const bool apply_scale = meta.slope != 0.0f && !(meta.slope == 1.0f && meta.intercept == 0.0f);
  for (std::int64_t i = 0; i < nvox; ++i) {
    const std::uint8_t* p = &payload[static_cast<std::size_t>(i) * elem_size];
    float x;
    switch (meta.datatype) {
      case 2: x = static_cast<float>(*p); break;
      case 4: x = static_cast<float>(detail::read_le<std::int16_t>(p, swap)); break;
      case 512: x = static_cast<float>(detail::read_le<std::uint16_t>(p, swap)); break;
      default: x = detail::read_le<float>(p, swap); break;
    }
    if (apply_scale) x = x * meta.slope + meta.intercept;
    v.data[static_cast<std::size_t>(i)] = x;
  }
  return {std::move(v), meta};
}

inline void write_nifti(const Volume3D& v, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot write " + path);
  std::vector<std::uint8_t> header(352, 0);  // 348-byte header + 4-byte extension flag
  auto put = [&](std::size_t off, const auto& value) {
    std::memcpy(&header[off], &value, sizeof(value));
  };
  put(0, std::int32_t{kNiftiHeaderSize});
  put(40, std::int16_t{3});                                    // dim[0]
  put(42, static_cast<std::int16_t>(v.dims.x));                // dim[1]
  put(44, static_cast<std::int16_t>(v.dims.y));                // dim[2]
  put(46, static_cast<std::int16_t>(v.dims.z));                // dim[3]
  for (std::size_t i = 4; i <= 7; ++i) put(40 + 2 * i, std::int16_t{1});
  put(70, std::int16_t{16});  // float32
  put(72, std::int16_t{32});  // bitpix
  const auto sp = v.spacing.value_or(std::array<float, 3>{1.0f, 1.0f, 1.0f});
  put(76, 1.0f);       // pixdim[0]
  put(80, sp[2]);      // pixdim[1] = x
  put(84, sp[1]);      // pixdim[2] = y
  put(88, sp[0]);      // pixdim[3] = z
  put(108, 352.0f);    // vox_offset
  put(112, 1.0f);      // scl_slope
  put(116, 0.0f);      // scl_inter
  std::memcpy(&header[344], "n+1\0", 4);
  f.write(reinterpret_cast<const char*>(header.data()), static_cast<std::streamsize>(header.size()));
  f.write(reinterpret_cast<const char*>(v.data.data()),
          static_cast<std::streamsize>(v.data.size() * sizeof(float)));
  if (!f) throw io_error("short write to " + path);
}

// Rounds a scalar volume to class ids, remapping raw BraTS label 4 -> 3.
inline LabelVolume to_label_volume(const Volume3D& v) {
  LabelVolume out(v.dims);
  for (std::size_t i = 0; i < v.data.size(); ++i) {
    int lab = static_cast<int>(std::lround(v.data[i]));
    if (lab == 4) lab = 3;
    if (lab < 0 || lab > 3) throw parse_error("mask label out of range: " + std::to_string(lab));
    out.labels[i] = static_cast<std::uint8_t>(lab);
  }
  return out;
}

}  // namespace segkit
