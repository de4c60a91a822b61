#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "segkit/errors.hpp"
#include "segkit/volume.hpp"

namespace segkit {

// VOL1 cache format: magic "VOL1", then four little-endian uint32
// (channels, depth, height, width), then float32 payload channel-major
// with x fastest. 20-byte header, bit-exact round trip.

inline void write_raw(const ChannelStack& s, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot write " + path);
  f.write("VOL1", 4);
  const std::uint32_t header[4] = {
      static_cast<std::uint32_t>(s.channels), static_cast<std::uint32_t>(s.dims.z),
      static_cast<std::uint32_t>(s.dims.y), static_cast<std::uint32_t>(s.dims.x)};
  f.write(reinterpret_cast<const char*>(header), sizeof(header));
  f.write(reinterpret_cast<const char*>(s.data.data()),
          static_cast<std::streamsize>(s.data.size() * sizeof(float)));
  if (!f) throw io_error("short write to " + path);
}

inline ChannelStack read_raw(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (f.gcount() != 4 || std::memcmp(magic, "VOL1", 4) != 0) {
    throw parse_error(path + ": bad VOL1 magic");
  }
  std::uint32_t header[4];
  f.read(reinterpret_cast<char*>(header), sizeof(header));
  if (f.gcount() != sizeof(header)) throw parse_error(path + ": truncated VOL1 header");
  ChannelStack s(static_cast<int>(header[0]),
                 {static_cast<int>(header[1]), static_cast<int>(header[2]),
                  static_cast<int>(header[3])});
  f.read(reinterpret_cast<char*>(s.data.data()),
         static_cast<std::streamsize>(s.data.size() * sizeof(float)));
  if (f.gcount() != static_cast<std::streamsize>(s.data.size() * sizeof(float))) {
    throw parse_error(path + ": payload size mismatch");
  }
  char extra;
  if (f.read(&extra, 1)) throw parse_error(path + ": payload size mismatch (trailing bytes)");
  return s;
}

}  // namespace segkit
