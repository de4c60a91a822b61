#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include <json.hpp>

#include "segkit/metrics.hpp"

namespace segkit {

inline std::string metric_csv_field(const MetricValue& m) {
  if (!m.defined) return "undefined";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", m.value);
  return buf;
}

inline constexpr const char* kMetricsCsvHeader =
    "case,region,tp,fp,fn,tn,accuracy,dice,iou,sensitivity,specificity";

inline std::string metrics_csv_row(const std::string& case_id, const std::string& region,
                                   const RegionMetrics& m) {
  std::string row = case_id + "," + region;
  row += "," + std::to_string(m.counts.tp) + "," + std::to_string(m.counts.fp);
  row += "," + std::to_string(m.counts.fn) + "," + std::to_string(m.counts.tn);
  row += "," + metric_csv_field(m.accuracy) + "," + metric_csv_field(m.dice);
  row += "," + metric_csv_field(m.iou) + "," + metric_csv_field(m.sensitivity);
  row += "," + metric_csv_field(m.specificity);
  return row;
}

inline std::string case_report_csv(const std::string& case_id, const CaseReport& r) {
  std::string out;
  for (const auto& reg : r.regions) {
    out += metrics_csv_row(case_id, region_name(reg.region), reg) + "\n";
  }
  out += metrics_csv_row(case_id, "mean", r.mean) + "\n";
  return out;
}

inline nlohmann::json metric_json(const MetricValue& m) {
  if (!m.defined) return {{"defined", false}};
  return {{"defined", true}, {"value", m.value}};
}

inline nlohmann::json region_metrics_json(const RegionMetrics& m) {
  return {{"tp", m.counts.tp},
          {"fp", m.counts.fp},
          {"fn", m.counts.fn},
          {"tn", m.counts.tn},
          {"accuracy", metric_json(m.accuracy)},
          {"dice", metric_json(m.dice)},
          {"iou", metric_json(m.iou)},
          {"sensitivity", metric_json(m.sensitivity)},
          {"specificity", metric_json(m.specificity)}};
}

inline nlohmann::json case_report_json(const std::string& case_id, const CaseReport& r) {
  nlohmann::json j{{"case", case_id}};
  for (const auto& reg : r.regions) {
    j[region_name(reg.region)] = region_metrics_json(reg);
  }
  j["mean"] = region_metrics_json(r.mean);
  return j;
}

}  // namespace segkit
