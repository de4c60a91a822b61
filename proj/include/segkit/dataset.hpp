#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "segkit/errors.hpp"

namespace segkit {

enum class Split { kTrain, kValidation };

struct DatasetCase {
  std::string id;
  std::string t1, t1ce, t2, flair, seg;
  Split split = Split::kTrain;
};

struct DatasetManifest {
  std::vector<DatasetCase> cases;
  std::vector<std::string> incomplete;  // case ids missing one or more files
  std::uint64_t seed = 0;
  double fraction = 250.0 / 350.0;
};

struct SuffixTable {
  std::string t1 = "_t1.nii";
  std::string t1ce = "_t1ce.nii";
  std::string t2 = "_t2.nii";
  std::string flair = "_flair.nii";
  std::string seg = "_seg.nii";
};

// One case per subdirectory; files matched by suffix. Incomplete cases are
// reported in `incomplete`, never silently dropped.
inline DatasetManifest scan_dataset(const std::string& root_dir,
                                    const SuffixTable& suffixes = {}) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root_dir)) throw io_error("dataset root is not a directory: " + root_dir);
  std::vector<fs::path> case_dirs;
  for (const auto& e : fs::directory_iterator(root_dir)) {
    if (e.is_directory()) case_dirs.push_back(e.path());
  }
  std::sort(case_dirs.begin(), case_dirs.end());
  if (case_dirs.empty()) throw empty_content_error("empty dataset root: " + root_dir);

  DatasetManifest manifest;
  std::map<std::string, bool> seen;
  for (const auto& dir : case_dirs) {
    const std::string id = dir.filename().string();
    if (seen.count(id)) throw error("duplicate case id: " + id);
    seen[id] = true;
    auto find_suffix = [&](const std::string& suffix) -> std::string {
      std::vector<std::string> hits;
      for (const auto& f : fs::directory_iterator(dir)) {
        const std::string name = f.path().filename().string();
        if (name.size() >= suffix.size() &&
            name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
          hits.push_back(f.path().string());
        }
      }
      std::sort(hits.begin(), hits.end());
      return hits.empty() ? std::string() : hits.front();
    };
    DatasetCase c;
    c.id = id;
    c.t1 = find_suffix(suffixes.t1);
    c.t1ce = find_suffix(suffixes.t1ce);
    c.t2 = find_suffix(suffixes.t2);
    c.flair = find_suffix(suffixes.flair);
    c.seg = find_suffix(suffixes.seg);
    if (c.t1.empty() || c.t1ce.empty() || c.t2.empty() || c.flair.empty() || c.seg.empty()) {
      manifest.incomplete.push_back(id);
    } else {
      manifest.cases.push_back(std::move(c));
    }
  }
  return manifest;
}

// Deterministic seeded split. Depends only on the case-id set, fraction and
// seed, not on enumeration order.
inline DatasetManifest split_train_val(DatasetManifest manifest, double train_fraction,
                                       std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw config_error("train_fraction must be in (0, 1)");
  }
  std::sort(manifest.cases.begin(), manifest.cases.end(),
            [](const auto& a, const auto& b) { return a.id < b.id; });
  std::vector<std::size_t> order(manifest.cases.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  // hand-rolled Fisher-Yates: std::shuffle is implementation-defined
  std::mt19937_64 rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) {
    const std::size_t j = rng() % i;
    std::swap(order[i - 1], order[j]);
  }
  const std::size_t n_train = static_cast<std::size_t>(
      std::llround(train_fraction * static_cast<double>(manifest.cases.size())));
  std::vector<bool> is_train(manifest.cases.size(), false);
  for (std::size_t i = 0; i < n_train && i < order.size(); ++i) is_train[order[i]] = true;
  for (std::size_t i = 0; i < manifest.cases.size(); ++i) {
    manifest.cases[i].split = is_train[i] ? Split::kTrain : Split::kValidation;
  }
  manifest.seed = seed;
  manifest.fraction = train_fraction;
  return manifest;
}

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
  nlohmann::json cases = nlohmann::json::array();
  for (const auto& c : m.cases) {
    cases.push_back({{"id", c.id},
                     {"t1", c.t1},
                     {"t1ce", c.t1ce},
                     {"t2", c.t2},
                     {"flair", c.flair},
                     {"seg", c.seg},
                     {"split", c.split == Split::kTrain ? "train" : "validation"}});
  }
  return {{"cases", cases}, {"seed", m.seed}, {"fraction", m.fraction},
          {"incomplete", m.incomplete}};
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  m.seed = j.value("seed", std::uint64_t{0});
  m.fraction = j.value("fraction", 250.0 / 350.0);
  if (j.contains("incomplete")) m.incomplete = j["incomplete"].get<std::vector<std::string>>();
  for (const auto& c : j.at("cases")) {
    DatasetCase dc;
    dc.id = c.at("id").get<std::string>();
    dc.t1 = c.at("t1").get<std::string>();
    dc.t1ce = c.at("t1ce").get<std::string>();
    dc.t2 = c.at("t2").get<std::string>();
    dc.flair = c.at("flair").get<std::string>();
    dc.seg = c.at("seg").get<std::string>();
    dc.split = c.at("split").get<std::string>() == "train" ? Split::kTrain : Split::kValidation;
    m.cases.push_back(std::move(dc));
  }
  return m;
}

inline void save_manifest(const DatasetManifest& m, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw io_error("cannot write " + path);
  f << manifest_to_json(m).dump(2) << "\n";
}

inline DatasetManifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw io_error("cannot open " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw parse_error(path + ": " + e.what());
  }
  return manifest_from_json(j);
}

}  // namespace segkit
