// segkit: brain-tumor segmentation toolkit CLI.
// Subcommands: config, phantom, preprocess, detect, train, evaluate,
// report, export-slices. Exit codes: 0 success, 1 usage/config error,
// 2 data error, 3 internal invariant violation.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "segkit/checkpoint.hpp"
#include "segkit/dataset.hpp"
#include "segkit/detect.hpp"
#include "segkit/errors.hpp"
#include "segkit/metrics.hpp"
#include "segkit/model.hpp"
#include "segkit/nifti.hpp"
#include "segkit/phantom.hpp"
#include "segkit/pipeline.hpp"
#include "segkit/raw_io.hpp"
#include "segkit/report.hpp"
#include "segkit/train.hpp"
#include "segkit/volume.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunConfig {
  std::string dataset_root;
  std::string output_dir = "out";
  std::uint64_t seed = 0;
  int threads = 1;
  double train_fraction = 250.0 / 350.0;
  segkit::PreprocessConfig preprocess;
  segkit::ModelConfig model;
  segkit::TrainPlan plan;
};

json default_config_json() {
  RunConfig c;
  return json{
      {"dataset_root", c.dataset_root},
      {"output_dir", c.output_dir},
      {"seed", c.seed},
      {"threads", c.threads},
      {"train_fraction", c.train_fraction},
      {"detect",
       {{"mode", "fixed"},
        {"thresh", c.preprocess.detect.thresh},
        {"area_thresh", c.preprocess.detect.area_thresh},
        {"dilation_radius", c.preprocess.detect.dilation_radius},
        {"equalize_bins", c.preprocess.detect.equalize_bins},
        {"equalize", c.preprocess.detect.equalize},
        {"modality", "flair"}}},
      {"preprocess",
       {{"target_size",
         {c.preprocess.target_size.z, c.preprocess.target_size.y, c.preprocess.target_size.x}},
        {"crop_margin", c.preprocess.crop_margin}}},
      {"model",
       {{"depth", c.model.depth},
        {"base_channels", c.model.base_channels},
        {"in_channels", c.model.in_channels},
        {"num_classes", c.model.num_classes},
        {"gate_enabled", c.model.gate_enabled}}},
      {"train",
       {{"rounds", json::array({{{"epochs", 50}, {"batch_size", 2}},
                                {{"epochs", 50}, {"batch_size", 1}}})},
        {"lr", c.plan.lr}}}};
}

RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw segkit::config_error("cannot open config " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw segkit::config_error(path + ": " + e.what());
  }
  RunConfig c;
  c.dataset_root = j.value("dataset_root", c.dataset_root);
  c.output_dir = j.value("output_dir", c.output_dir);
  c.seed = j.value("seed", c.seed);
  c.threads = j.value("threads", c.threads);
  c.train_fraction = j.value("train_fraction", c.train_fraction);
  if (j.contains("detect")) {
    const auto& d = j["detect"];
    auto& p = c.preprocess.detect;
    const std::string mode = d.value("mode", "fixed");
    if (mode == "otsu") p.mode = segkit::ThresholdMode::kOtsu;
    else if (mode == "fixed") p.mode = segkit::ThresholdMode::kFixed;
    else throw segkit::config_error("detect.mode must be fixed or otsu");
    p.thresh = d.value("thresh", p.thresh);
    p.area_thresh = d.value("area_thresh", p.area_thresh);
    p.dilation_radius = d.value("dilation_radius", p.dilation_radius);
    p.equalize_bins = d.value("equalize_bins", p.equalize_bins);
    p.equalize = d.value("equalize", p.equalize);
    const std::string m = d.value("modality", "flair");
    if (m == "t1") c.preprocess.detect_modality = segkit::kModalityT1;
    else if (m == "t1ce") c.preprocess.detect_modality = segkit::kModalityT1ce;
    else if (m == "t2") c.preprocess.detect_modality = segkit::kModalityT2;
    else if (m == "flair") c.preprocess.detect_modality = segkit::kModalityFlair;
    else throw segkit::config_error("detect.modality must be one of t1|t1ce|t2|flair");
  }
  if (j.contains("preprocess")) {
    const auto& p = j["preprocess"];
    if (p.contains("target_size")) {
      const auto t = p["target_size"].get<std::vector<int>>();
      if (t.size() != 3) throw segkit::config_error("preprocess.target_size must have 3 entries");
      c.preprocess.target_size = {t[0], t[1], t[2]};
    }
    c.preprocess.crop_margin = p.value("crop_margin", c.preprocess.crop_margin);
  }
  if (j.contains("model")) {
    const auto& m = j["model"];
    c.model.depth = m.value("depth", c.model.depth);
    c.model.base_channels = m.value("base_channels", c.model.base_channels);
    c.model.in_channels = m.value("in_channels", c.model.in_channels);
    c.model.num_classes = m.value("num_classes", c.model.num_classes);
    c.model.gate_enabled = m.value("gate_enabled", c.model.gate_enabled);
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    if (t.contains("rounds")) {
      c.plan.rounds.clear();
      for (const auto& r : t["rounds"]) {
        c.plan.rounds.push_back({r.value("epochs", 50), r.value("batch_size", 2)});
      }
    }
    c.plan.lr = t.value("lr", c.plan.lr);
  }
  c.model.seed = c.seed;
  c.plan.seed = c.seed;
  return c;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw segkit::io_error("cannot write " + path);
  f << text;
}

struct CaseOutcome {
  std::string id;
  bool ok = false;
  std::string error;
  json detection;
};

CaseOutcome run_preprocess_case(const segkit::DatasetCase& dc, const RunConfig& cfg,
                                const fs::path& pre_dir, bool write_outputs) {
  CaseOutcome outcome;
  outcome.id = dc.id;
  try {
    const segkit::MultiModalVolume mm = segkit::read_case_modalities(dc);
    const segkit::LabelVolume mask = segkit::to_label_volume(segkit::read_nifti(dc.seg).first);
    const auto res = segkit::preprocess_case(dc.id, mm, mask, cfg.preprocess);
    outcome.detection = segkit::detection_report(res, cfg.preprocess.detect);
    if (write_outputs) {
      segkit::write_raw(res.image, (pre_dir / (dc.id + "_img.vol1")).string());
      segkit::write_raw(res.mask, (pre_dir / (dc.id + "_mask.vol1")).string());
    }
    outcome.ok = true;
  } catch (const std::exception& e) {
    outcome.error = e.what();
  }
  return outcome;
}

int run_cases(const RunConfig& cfg, bool write_outputs, const char* report_name) {
  auto manifest = segkit::scan_dataset(cfg.dataset_root);
  manifest = segkit::split_train_val(std::move(manifest), cfg.train_fraction, cfg.seed);
  const fs::path out_dir(cfg.output_dir);
  const fs::path pre_dir = out_dir / "pre";
  fs::create_directories(pre_dir);
  segkit::save_manifest(manifest, (out_dir / "manifest.json").string());

  std::vector<CaseOutcome> outcomes(manifest.cases.size());
  const int threads = std::max(1, cfg.threads);
  std::size_t next = 0;
  while (next < manifest.cases.size()) {
    const std::size_t stop = std::min(manifest.cases.size(), next + static_cast<std::size_t>(threads));
    std::vector<std::future<CaseOutcome>> futs;
    for (std::size_t i = next; i < stop; ++i) {
      futs.push_back(std::async(std::launch::async, run_preprocess_case, manifest.cases[i],
                                cfg, pre_dir, write_outputs));
    }
    for (std::size_t i = next; i < stop; ++i) outcomes[i] = futs[i - next].get();
    next = stop;
  }

  json detections = json::array();
  json failures = json::array();
  int ok_count = 0;
  for (const auto& o : outcomes) {
    if (o.ok) {
      ++ok_count;
      detections.push_back(o.detection);
    } else {
      failures.push_back({{"case", o.id}, {"error", o.error}});
      std::cerr << "case " << o.id << " failed: " << o.error << "\n";
    }
  }
  write_text((out_dir / report_name).string(), detections.dump(2) + "\n");
  write_text((out_dir / "failures.json").string(), failures.dump(2) + "\n");
  std::cout << ok_count << "/" << manifest.cases.size() << " cases processed\n";
  if (ok_count == 0) throw segkit::error("all cases failed");
  return 0;
}

std::vector<segkit::TrainSample> load_preprocessed(const RunConfig& cfg, segkit::Split split) {
  const fs::path out_dir(cfg.output_dir);
  const auto manifest = segkit::load_manifest((out_dir / "manifest.json").string());
  std::vector<segkit::TrainSample> samples;
  for (const auto& c : manifest.cases) {
    if (c.split != split) continue;
    const fs::path img = out_dir / "pre" / (c.id + "_img.vol1");
    const fs::path mask = out_dir / "pre" / (c.id + "_mask.vol1");
    if (!fs::exists(img) || !fs::exists(mask)) continue;
    segkit::TrainSample s;
    s.input = segkit::read_raw(img.string());
    s.target = segkit::mask_from_stack(segkit::read_raw(mask.string()));
    samples.push_back(std::move(s));
  }
  return samples;
}

int cmd_train(const RunConfig& cfg, const std::string& resume_from) {
  auto samples = load_preprocessed(cfg, segkit::Split::kTrain);
  if (samples.empty()) {
    throw segkit::config_error("no preprocessed training data under " + cfg.output_dir +
                               "; run `segkit preprocess` first");
  }
  segkit::Checkpoint ckpt =
      resume_from.empty() ? segkit::build_model(cfg.model) : segkit::load_checkpoint(resume_from);
  const fs::path out_dir(cfg.output_dir);
  segkit::train(ckpt, samples, cfg.plan, [&](const segkit::Checkpoint& c, std::size_t round) {
    segkit::save_checkpoint(c, (out_dir / ("checkpoint_round" + std::to_string(round) + ".aunc")).string());
  });
  segkit::save_checkpoint(ckpt, (out_dir / "checkpoint.aunc").string());
  write_text((out_dir / "history.csv").string(), segkit::history_csv(ckpt.history));
  std::cout << "trained " << ckpt.epoch << " epochs; final loss "
            << (ckpt.history.empty() ? 0.0 : ckpt.history.back().loss) << "\n";
  return 0;
}

int cmd_evaluate(const RunConfig& cfg, const std::string& checkpoint_path, bool use_train_split) {
  const auto ckpt = segkit::load_checkpoint(checkpoint_path);
  const fs::path out_dir(cfg.output_dir);
  const auto manifest = segkit::load_manifest((out_dir / "manifest.json").string());
  std::string csv = std::string(segkit::kMetricsCsvHeader) + "\n";
  json summary = json::array();
  int evaluated = 0;
  std::array<double, 5> mean_acc{};  // accuracy, dice, iou, sensitivity, specificity
  std::array<int, 5> mean_n{};
  for (const auto& c : manifest.cases) {
    const auto split = use_train_split ? segkit::Split::kTrain : segkit::Split::kValidation;
    if (c.split != split) continue;
    const fs::path img = out_dir / "pre" / (c.id + "_img.vol1");
    const fs::path mask = out_dir / "pre" / (c.id + "_mask.vol1");
    if (!fs::exists(img) || !fs::exists(mask)) continue;
    const segkit::ChannelStack input = segkit::read_raw(img.string());
    const segkit::LabelVolume truth = segkit::mask_from_stack(segkit::read_raw(mask.string()));
    segkit::ad::Tensor<float> batch({1, input.channels, input.dims.z, input.dims.y, input.dims.x},
                                    input.data);
    const auto probs = segkit::forward(ckpt, batch);
    segkit::ChannelStack pred(ckpt.config.num_classes, input.dims);
    pred.data = probs.data;
    const auto report = segkit::evaluate_case(pred, truth);
    csv += segkit::case_report_csv(c.id, report);
    summary.push_back(segkit::case_report_json(c.id, report));
    const segkit::MetricValue vals[5] = {report.mean.accuracy, report.mean.dice, report.mean.iou,
                                         report.mean.sensitivity, report.mean.specificity};
    for (int k = 0; k < 5; ++k) {
      if (vals[k].defined) {
        mean_acc[static_cast<std::size_t>(k)] += vals[k].value;
        ++mean_n[static_cast<std::size_t>(k)];
      }
    }
    ++evaluated;
  }
  if (evaluated == 0) throw segkit::config_error("no cases to evaluate in the requested split");
  json aggregate;
  const char* names[5] = {"accuracy", "dice", "iou", "sensitivity", "specificity"};
  for (int k = 0; k < 5; ++k) {
    aggregate[names[k]] = mean_n[static_cast<std::size_t>(k)]
                              ? json(mean_acc[static_cast<std::size_t>(k)] / mean_n[static_cast<std::size_t>(k)])
                              : json(nullptr);
  }
  write_text((out_dir / "metrics.csv").string(), csv);
  write_text((out_dir / "metrics.json").string(),
             json{{"cases", summary}, {"aggregate", aggregate}}.dump(2) + "\n");
  std::cout << "evaluated " << evaluated << " cases; mean dice "
            << aggregate["dice"].dump() << "\n";
  return 0;
}

// Table-style summary (accuracy, sensitivity, specificity, dice) from a
// metrics.json produced by `evaluate`.
int cmd_report(const std::string& metrics_path, const std::string& out_path) {
  std::ifstream f(metrics_path);
  if (!f) throw segkit::io_error("cannot open " + metrics_path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw segkit::parse_error(metrics_path + ": " + e.what());
  }
  const auto& agg = j.at("aggregate");
  std::string csv = "metric,value\n";
  for (const char* name : {"accuracy", "sensitivity", "specificity", "dice", "iou"}) {
    csv += std::string(name) + "," + (agg.at(name).is_null() ? "undefined" : agg.at(name).dump()) + "\n";
  }
  if (out_path.empty()) {
    std::cout << csv;
  } else {
    write_text(out_path, csv);
  }
  return 0;
}

int cmd_export_slices(const std::string& volume_path, int axis, const std::string& out_dir) {
  const auto [vol, meta] = segkit::read_nifti(volume_path);
  fs::create_directories(out_dir);
  const int count = axis == 0 ? vol.dims.z : axis == 1 ? vol.dims.y : vol.dims.x;
  for (int i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "slice_%04d.pgm", i);
    segkit::write_pgm(segkit::extract_slice(vol, axis, i), (fs::path(out_dir) / name).string());
  }
  std::cout << count << " slices written to " << out_dir << "\n";
  return 0;
}

int cmd_phantom(const std::string& out_dir, int count, std::uint64_t seed, int dim, int radius,
                int specks) {
  for (int i = 0; i < count; ++i) {
    const std::string id = "phantom_" + std::to_string(i);
    const fs::path dir = fs::path(out_dir) / id;
    fs::create_directories(dir);
    auto [mm, labels] = segkit::generate_phantom(seed + static_cast<std::uint64_t>(i),
                                                 {dim, dim, dim}, radius, specks);
    const char* suffix[4] = {"_t1.nii", "_t1ce.nii", "_t2.nii", "_flair.nii"};
    for (int m = 0; m < 4; ++m) {
      segkit::write_nifti(mm.modalities[static_cast<std::size_t>(m)], (dir / (id + suffix[m])).string());
    }
    segkit::Volume3D seg(labels.dims);
    for (std::size_t k = 0; k < labels.labels.size(); ++k) seg.data[k] = labels.labels[k];
    segkit::write_nifti(seg, (dir / (id + "_seg.nii")).string());
  }
  std::cout << count << " phantom cases written to " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"segkit: attention U-Net brain tumor segmentation toolkit"};
  app.require_subcommand(1);

  std::string config_path, output_override, resume_from, checkpoint_path;
  std::string metrics_path, report_out, volume_path, slice_out, phantom_out = "phantoms";
  std::uint64_t seed_override = 0;
  bool has_seed = false;
  int threads_override = 0;
  int axis = 0;
  bool eval_train_split = false;
  int phantom_count = 2, phantom_dim = 48, phantom_radius = 10, phantom_specks = 5;
  std::uint64_t phantom_seed = 0;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "run configuration JSON")->required();
    cmd->add_option("--seed", seed_override, "override config seed")
        ->each([&](const std::string&) { has_seed = true; });
    cmd->add_option("--threads", threads_override, "override config thread count");
    cmd->add_option("--output", output_override, "override config output dir");
  };

  auto* config_cmd = app.add_subcommand("config", "configuration utilities");
  auto* config_init = config_cmd->add_subcommand("init", "emit a config with full defaults");
  std::string config_init_out;
  config_init->add_option("--output", config_init_out, "write to file instead of stdout");

  auto* pre_cmd = app.add_subcommand("preprocess", "crop, detect, resize, normalize to VOL1");
  add_common(pre_cmd);
  auto* detect_cmd = app.add_subcommand("detect", "tumor detection report only");
  add_common(detect_cmd);
  auto* train_cmd = app.add_subcommand("train", "train the attention U-Net");
  add_common(train_cmd);
  train_cmd->add_option("--resume-from", resume_from, "resume from a round checkpoint");
  auto* eval_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint on the validation split");
  add_common(eval_cmd);
  eval_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  eval_cmd->add_flag("--train-split", eval_train_split, "evaluate the training split instead");
  auto* report_cmd = app.add_subcommand("report", "summary table from metrics.json");
  report_cmd->add_option("--metrics", metrics_path, "metrics.json from evaluate")->required();
  report_cmd->add_option("--output", report_out, "write CSV to file instead of stdout");
  auto* export_cmd = app.add_subcommand("export-slices", "dump volume slices as PGM images");
  export_cmd->add_option("--volume", volume_path, "NIfTI volume")->required();
  export_cmd->add_option("--axis", axis, "0=z (axial), 1=y, 2=x")->check(CLI::Range(0, 2));
  export_cmd->add_option("--output", slice_out, "output directory")->required();
  auto* phantom_cmd = app.add_subcommand("phantom", "write synthetic NIfTI fixture cases");
  phantom_cmd->add_option("--output", phantom_out, "output dataset root");
  phantom_cmd->add_option("--count", phantom_count, "number of cases");
  phantom_cmd->add_option("--seed", phantom_seed, "base phantom seed");
  phantom_cmd->add_option("--dim", phantom_dim, "cubic volume side");
  phantom_cmd->add_option("--radius", phantom_radius, "tumor radius in voxels");
  phantom_cmd->add_option("--specks", phantom_specks, "distractor count");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (config_init->parsed()) {
      const std::string text = default_config_json().dump(2) + "\n";
      if (config_init_out.empty()) std::cout << text;
      else write_text(config_init_out, text);
      return 0;
    }
    if (config_cmd->parsed()) {
      std::cerr << "config requires a subcommand (init)\n";
      return 1;
    }
    auto load = [&]() {
      RunConfig cfg = load_config(config_path);
      if (has_seed) {
        cfg.seed = seed_override;
        cfg.model.seed = seed_override;
        cfg.plan.seed = seed_override;
      }
      if (threads_override > 0) cfg.threads = threads_override;
      if (!output_override.empty()) cfg.output_dir = output_override;
      return cfg;
    };
    if (pre_cmd->parsed()) return run_cases(load(), true, "detect_report.json");
    if (detect_cmd->parsed()) return run_cases(load(), false, "detect_report.json");
    if (train_cmd->parsed()) return cmd_train(load(), resume_from);
    if (eval_cmd->parsed()) return cmd_evaluate(load(), checkpoint_path, eval_train_split);
    if (report_cmd->parsed()) return cmd_report(metrics_path, report_out);
    if (export_cmd->parsed()) return cmd_export_slices(volume_path, axis, slice_out);
    if (phantom_cmd->parsed()) {
      return cmd_phantom(phantom_out, phantom_count, phantom_seed, phantom_dim, phantom_radius,
                         phantom_specks);
    }
  } catch (const segkit::config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const segkit::invariant_error& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  } catch (const segkit::error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  }
  return 1;
}
