#include "tabrec/report.hpp"

#include <sstream>

#include <json.hpp>

using nlohmann::json;

namespace tabrec {

EvalReport evaluate_corpus(const std::vector<EvalInput>& inputs,
                           const MetricSelection& sel) {
  EvalReport rep;
  double teds_sum = 0, p_sum = 0, r_sum = 0, f_sum = 0, gt_sum = 0,
         gl_sum = 0;
  for (const EvalInput& in : inputs) {
    SampleMetrics m;
    m.id = in.id;
    if (sel.teds) {
      m.teds = teds_struct(in.gt, in.pred);
      teds_sum += *m.teds;
    }
    if (sel.adjf1) {
      m.adj = adjacency_f1(in.gt, in.pred, sel.iou_threshold, in.image_w,
                           in.image_h);
      p_sum += m.adj->precision;
      r_sum += m.adj->recall;
      f_sum += m.adj->f1;
    }
    if (sel.grits) {
      GritsResult top = grits(in.gt, in.pred, GritsFlavor::Top);
      GritsResult loc = grits(in.gt, in.pred, GritsFlavor::Loc);
      m.grits_top = top.score;
      m.grits_loc = loc.score;
      m.grits_heuristic = top.heuristic || loc.heuristic;
      gt_sum += top.score;
      gl_sum += loc.score;
    }
    rep.samples.push_back(std::move(m));
  }
  rep.count = static_cast<int>(inputs.size());
  if (rep.count > 0) {
    rep.mean_teds = teds_sum / rep.count;
    rep.mean_adj_p = p_sum / rep.count;
    rep.mean_adj_r = r_sum / rep.count;
    rep.mean_adj_f1 = f_sum / rep.count;
    rep.mean_grits_top = gt_sum / rep.count;
    rep.mean_grits_loc = gl_sum / rep.count;
  }
  return rep;
}

std::string report_to_json(const EvalReport& rep) {
  json samples = json::array();
  for (const SampleMetrics& m : rep.samples) {
    json j = {{"id", m.id}};
    if (m.teds) j["teds_struct"] = *m.teds;
    if (m.adj) {
      j["adj_precision"] = m.adj->precision;
      j["adj_recall"] = m.adj->recall;
      j["adj_f1"] = m.adj->f1;
    }
    if (m.grits_top) {
      j["grits_top"] = *m.grits_top;
      j["grits_loc"] = *m.grits_loc;
      j["grits_heuristic"] = m.grits_heuristic;
    }
    samples.push_back(std::move(j));
  }
  json root = {{"count", rep.count},
               {"mean", {{"teds_struct", rep.mean_teds},
                         {"adj_precision", rep.mean_adj_p},
                         {"adj_recall", rep.mean_adj_r},
                         {"adj_f1", rep.mean_adj_f1},
                         {"grits_top", rep.mean_grits_top},
                         {"grits_loc", rep.mean_grits_loc}}},
               {"samples", samples}};
  return root.dump(2);
}

std::string report_to_csv(const EvalReport& rep) {
  std::ostringstream os;
  os << "id,teds_struct,adj_precision,adj_recall,adj_f1,grits_top,grits_loc\n";
  auto cell = [&os](const std::optional<double>& v) {
    if (v) os << *v;
    os << ",";
  };
  for (const SampleMetrics& m : rep.samples) {
    os << m.id << ",";
    cell(m.teds);
    if (m.adj) {
      os << m.adj->precision << "," << m.adj->recall << "," << m.adj->f1
         << ",";
    } else {
      os << ",,,";
    }
    if (m.grits_top) os << *m.grits_top;
    os << ",";
    if (m.grits_loc) os << *m.grits_loc;
    os << "\n";
  }
  return os.str();
}

}  // namespace tabrec
