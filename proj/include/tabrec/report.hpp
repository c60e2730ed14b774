#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tabrec/metrics.hpp"
#include "tabrec/table.hpp"

namespace tabrec {

struct SampleMetrics {
  std::string id;
  std::optional<double> teds;
  std::optional<AdjacencyResult> adj;
  std::optional<double> grits_top;
  std::optional<double> grits_loc;
  bool grits_heuristic = false;
};

struct EvalReport {
  std::vector<SampleMetrics> samples;
  double mean_teds = 0;
  double mean_adj_p = 0, mean_adj_r = 0, mean_adj_f1 = 0;
  double mean_grits_top = 0, mean_grits_loc = 0;
  int count = 0;
};

struct EvalInput {
  std::string id;
  TableGrid gt;
  TableGrid pred;
  int image_w = 1000;
  int image_h = 1000;
};

struct MetricSelection {
  bool teds = true;
  bool adjf1 = true;
  bool grits = true;
  double iou_threshold = 0.6;
};

EvalReport evaluate_corpus(const std::vector<EvalInput>& inputs,
                           const MetricSelection& sel);

std::string report_to_json(const EvalReport& report);
std::string report_to_csv(const EvalReport& report);

}  // namespace tabrec
