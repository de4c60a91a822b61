#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "segkit/errors.hpp"
#include "segkit/model.hpp"

namespace segkit {

// Checkpoint file: magic "AUNC", u32 version, config block, epoch counter,
// optimizer step counter, metric history, then a named tensor table
// (name, shape, float32 payload) covering parameters and Adam moments.
// Little-endian throughout.

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <typename T>
T get(std::istream& is) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!is) throw checkpoint_error("truncated checkpoint");
  return v;
}

inline void put_string(std::ostream& os, const std::string& s) {
  put(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is) {
  const auto n = get<std::uint32_t>(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw checkpoint_error("truncated checkpoint");
  return s;
}

inline void put_floats(std::ostream& os, const std::vector<float>& v) {
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(float)));
}

inline void get_floats(std::istream& is, std::vector<float>& v) {
  is.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(v.size() * sizeof(float)));
  if (!is) throw checkpoint_error("truncated checkpoint");
}

inline void put_tensor(std::ostream& os, const std::string& name, const std::vector<int>& shape,
                       const std::vector<float>& data) {
  put_string(os, name);
  put(os, static_cast<std::uint32_t>(shape.size()));
  for (int d : shape) put(os, static_cast<std::int32_t>(d));
  put_floats(os, data);
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot write " + path);
  f.write("AUNC", 4);
  detail::put(f, kCheckpointVersion);
  detail::put(f, static_cast<std::int32_t>(ckpt.config.depth));
  detail::put(f, static_cast<std::int32_t>(ckpt.config.base_channels));
  detail::put(f, static_cast<std::int32_t>(ckpt.config.in_channels));
  detail::put(f, static_cast<std::int32_t>(ckpt.config.num_classes));
  detail::put(f, static_cast<std::uint8_t>(ckpt.config.gate_enabled ? 1 : 0));
  detail::put(f, static_cast<std::uint64_t>(ckpt.config.seed));
  detail::put(f, static_cast<std::int32_t>(ckpt.epoch));
  detail::put(f, static_cast<std::int64_t>(ckpt.opt.t));
  detail::put(f, static_cast<std::uint32_t>(ckpt.history.size()));
  for (const auto& h : ckpt.history) {
    detail::put(f, static_cast<std::int32_t>(h.epoch));
    detail::put(f, h.loss);
    detail::put(f, h.dice);
    detail::put(f, h.iou);
    detail::put(f, h.accuracy);
    detail::put(f, h.sensitivity);
    detail::put(f, h.specificity);
  }
  detail::put(f, static_cast<std::uint32_t>(ckpt.params.size()));
  for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
    const auto& p = ckpt.params[i];
    detail::put_tensor(f, p.name, p.shape, p.data);
    detail::put_tensor(f, "opt.m." + p.name, p.shape, ckpt.opt.m[i]);
    detail::put_tensor(f, "opt.v." + p.name, p.shape, ckpt.opt.v[i]);
  }
  if (!f) throw io_error("short write to " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (f.gcount() != 4 || std::memcmp(magic, "AUNC", 4) != 0) {
    throw checkpoint_error(path + ": bad checkpoint magic");
  }
  const auto version = detail::get<std::uint32_t>(f);
  if (version != kCheckpointVersion) {
    throw checkpoint_error(path + ": unsupported checkpoint version");
  }
  ModelConfig cfg;
  cfg.depth = detail::get<std::int32_t>(f);
  cfg.base_channels = detail::get<std::int32_t>(f);
  cfg.in_channels = detail::get<std::int32_t>(f);
  cfg.num_classes = detail::get<std::int32_t>(f);
  cfg.gate_enabled = detail::get<std::uint8_t>(f) != 0;
  cfg.seed = detail::get<std::uint64_t>(f);

  Checkpoint ckpt = build_model(cfg);  // establishes expected names and shapes
  ckpt.epoch = detail::get<std::int32_t>(f);
  ckpt.opt.t = detail::get<std::int64_t>(f);
  const auto nhist = detail::get<std::uint32_t>(f);
  ckpt.history.resize(nhist);
  for (auto& h : ckpt.history) {
    h.epoch = detail::get<std::int32_t>(f);
    h.loss = detail::get<double>(f);
    h.dice = detail::get<double>(f);
    h.iou = detail::get<double>(f);
    h.accuracy = detail::get<double>(f);
    h.sensitivity = detail::get<double>(f);
    h.specificity = detail::get<double>(f);
  }
  const auto ntensors = detail::get<std::uint32_t>(f);
  if (ntensors != ckpt.params.size()) {
    throw checkpoint_error(path + ": parameter table does not match config");
  }
  auto read_into = [&](const std::string& expect_name, const std::vector<int>& expect_shape,
                       std::vector<float>& dst) {
    const std::string name = detail::get_string(f);
    if (name != expect_name) throw checkpoint_error(path + ": unexpected tensor " + name);
    const auto ndims = detail::get<std::uint32_t>(f);
    std::vector<int> shape(ndims);
    for (auto& d : shape) d = detail::get<std::int32_t>(f);
    if (shape != expect_shape) throw checkpoint_error(path + ": shape mismatch for " + name);
    detail::get_floats(f, dst);
  };
  for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
    auto& p = ckpt.params[i];
    read_into(p.name, p.shape, p.data);
    read_into("opt.m." + p.name, p.shape, ckpt.opt.m[i]);
    read_into("opt.v." + p.name, p.shape, ckpt.opt.v[i]);
  }
  return ckpt;
}

}  // namespace segkit
