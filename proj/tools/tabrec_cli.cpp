#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "tabrec/config.hpp"
#include "tabrec/gradcheck.hpp"
#include "tabrec/infer.hpp"
#include "tabrec/model.hpp"
#include "tabrec/pgm.hpp"
#include "tabrec/report.hpp"
#include "tabrec/synth.hpp"
#include "tabrec/train.hpp"

namespace fs = std::filesystem;
using namespace tabrec;
using nlohmann::json;

namespace {

int cmd_synth(const std::string& config_path, const std::string& out_dir,
              int count, int64_t seed_override) {
  SynthConfig cfg;
  if (!config_path.empty()) ConfigFile::parse_file(config_path).apply(cfg);
  if (seed_override >= 0) cfg.seed = static_cast<uint64_t>(seed_override);
  cfg.validate();
  Rng rng(cfg.seed);
  std::vector<SynthSample> samples;
  samples.reserve(count);
  for (int i = 0; i < count; ++i) samples.push_back(make_sample(rng, cfg));
  DatasetManifest manifest = write_dataset(samples, out_dir, cfg);
  std::cout << "wrote " << manifest.count << " samples to " << out_dir
            << "\n";
  return 0;
}

int cmd_train(const TrainConfig& cfg) {
  TrainResult res = train_loop(cfg);
  std::cout << "trained " << res.steps_run << " steps; final losses: lm="
            << res.final_losses.lm << " poly=" << res.final_losses.poly
            << " span=" << res.final_losses.span;
  if (res.final_losses.has_vis) std::cout << " vis=" << res.final_losses.vis;
  if (res.final_losses.has_lang)
    std::cout << " lang=" << res.final_losses.lang;
  std::cout << " total=" << res.final_losses.total << "\n";
  std::cout << "checkpoint: " << cfg.out_path << "\n";
  return 0;
}

int cmd_infer(const std::string& ckpt_path, const std::string& image_path,
              const std::string& out_path, int max_len) {
  Checkpoint ck = load_checkpoint(ckpt_path);
  PgmImage img = read_pgm(image_path);
  PredictResult pred = predict_table(ck.params, ck.config, to_float(img),
                                     img.height, img.width, max_len);
  std::ofstream out(out_path);
  if (!out) throw IoError("cannot write " + out_path);
  out << prediction_to_json(pred, img.width, img.height,
                            fs::path(image_path).filename().string())
      << "\n";
  std::cout << "cells=" << pred.grid.cells.size()
            << " truncated=" << (pred.truncated ? "true" : "false");
  if (!pred.layout_errors.empty()) {
    std::cout << " layout_errors=";
    for (size_t i = 0; i < pred.layout_errors.size(); ++i)
      std::cout << (i ? "," : "") << pred.layout_errors[i];
  }
  std::cout << "\n";
  return 0;
}

TableGrid grid_from_annotation(const json& rec) {
  TableGrid g;
  int max_r = 0, max_c = 0;
  for (const json& jc : rec["cells"]) {
    Cell c;
    c.row = jc["row"].get<int>();
    c.col = jc["col"].get<int>();
    c.span.rows = jc["row_span"].get<int>();
    c.span.cols = jc["col_span"].get<int>();
    if (jc.contains("text")) c.text = jc["text"].get<std::string>();
    CellPolygon p;
    for (int j = 0; j < 8; ++j) p.pts[j] = jc["polygon"][j].get<int>();
    c.polygon = p;
    max_r = std::max(max_r, c.row + c.span.rows);
    max_c = std::max(max_c, c.col + c.span.cols);
    g.cells.push_back(std::move(c));
  }
  g.n_rows = max_r;
  g.n_cols = max_c;
  std::sort(g.cells.begin(), g.cells.end(), [](const Cell& a, const Cell& b) {
    return a.row != b.row ? a.row < b.row : a.col < b.col;
  });
  return g;
}

int cmd_eval(const std::string& gt_dir, const std::string& pred_dir,
             const std::string& metrics_csv, const std::string& out_path,
             const std::string& csv_path, double iou) {
  MetricSelection sel;
  sel.teds = metrics_csv.find("teds") != std::string::npos;
  sel.adjf1 = metrics_csv.find("adjf1") != std::string::npos;
  sel.grits = metrics_csv.find("grits") != std::string::npos;
  sel.iou_threshold = iou;
  if (!sel.teds && !sel.adjf1 && !sel.grits)
    throw IoError("no known metric in --metrics (teds, adjf1, grits)");

  std::ifstream gt_file(fs::path(gt_dir) / "samples.jsonl");
  if (!gt_file) throw IoError("missing samples.jsonl in " + gt_dir);

  // Predictions: either a samples.jsonl mirror or per-image <stem>.json.
  std::map<std::string, TableGrid> pred_by_image;
  const fs::path pred_jsonl = fs::path(pred_dir) / "samples.jsonl";
  if (fs::exists(pred_jsonl)) {
    std::ifstream pf(pred_jsonl);
    std::string line;
    while (std::getline(pf, line)) {
      if (line.empty()) continue;
      json rec = json::parse(line);
      pred_by_image[rec["image"].get<std::string>()] =
          grid_from_annotation(rec);
    }
  }

  std::vector<EvalInput> inputs;
  std::string line;
  while (std::getline(gt_file, line)) {
    if (line.empty()) continue;
    json rec = json::parse(line);
    EvalInput in;
    in.id = rec["image"].get<std::string>();
    in.gt = grid_from_annotation(rec);
    in.image_w = rec["width"].get<int>();
    in.image_h = rec["height"].get<int>();
    auto it = pred_by_image.find(in.id);
    if (it != pred_by_image.end()) {
      in.pred = it->second;
    } else {
      const fs::path pj =
          fs::path(pred_dir) / (fs::path(in.id).stem().string() + ".json");
      if (!fs::exists(pj))
        throw IoError("no prediction for " + in.id + " in " + pred_dir);
      std::ifstream pf(pj);
      std::stringstream ss;
      ss << pf.rdbuf();
      in.pred = prediction_from_json(ss.str());
    }
    inputs.push_back(std::move(in));
  }

  EvalReport rep = evaluate_corpus(inputs, sel);
  if (!out_path.empty()) {
    std::ofstream out(out_path);
    out << report_to_json(rep) << "\n";
  }
  if (!csv_path.empty()) {
    std::ofstream out(csv_path);
    out << report_to_csv(rep);
  }
  std::cout << "samples: " << rep.count << "\n";
  if (sel.teds) std::cout << "mean TEDS-Struct: " << rep.mean_teds << "\n";
  if (sel.adjf1)
    std::cout << "mean adjacency P/R/F1: " << rep.mean_adj_p << " / "
              << rep.mean_adj_r << " / " << rep.mean_adj_f1 << "\n";
  if (sel.grits)
    std::cout << "mean GriTS-Top/Loc: " << rep.mean_grits_top << " / "
              << rep.mean_grits_loc << "\n";
  return 0;
}

int cmd_gradcheck(bool full, uint64_t seed) {
  bool ok = true;
  const int shapes = full ? 20 : 10;
  for (const std::string& name : gradcheck_op_names()) {
    GradCheckResult r = gradcheck_op(name, seed, shapes);
    const bool pass = r.passed(1e-5);
    ok = ok && pass;
    std::cout << (pass ? "ok   " : "FAIL ") << name << "  max_rel_err="
              << r.max_rel_err << " (" << r.checked << " coords)\n";
    if (!pass) std::cout << "     worst: " << r.worst << "\n";
  }
  GradCheckResult comp = model_gradcheck(seed, full ? 500 : 250);
  const bool cpass = comp.passed(1e-3);
  ok = ok && cpass;
  std::cout << (cpass ? "ok   " : "FAIL ") << "composite_total_loss"
            << "  max_rel_err=" << comp.max_rel_err << " (" << comp.checked
            << " coords)\n";
  if (!cpass) std::cout << "     worst: " << comp.worst << "\n";
  return ok ? 0 : 1;
}

void write_heatmap(const std::string& path, const std::vector<float>& values,
                   int grid_h, int grid_w, int upscale) {
  float vmax = 1e-12f;
  for (float v : values) vmax = std::max(vmax, v);
  PgmImage img;
  img.width = grid_w * upscale;
  img.height = grid_h * upscale;
  img.pixels.resize(static_cast<size_t>(img.width) * img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const float v = values[static_cast<size_t>(y / upscale) * grid_w +
                             x / upscale] /
                      vmax;
      img.pixels[static_cast<size_t>(y) * img.width + x] =
          static_cast<uint8_t>(std::lround(255.0f * v));
    }
  write_pgm(path, img);
}

int cmd_inspect(const std::string& ckpt_path, const std::string& image_path,
                const std::string& dump_dir, int max_len) {
  Checkpoint ck = load_checkpoint(ckpt_path);
  PgmImage img = read_pgm(image_path);
  EncodedImage enc = encode_image_values(ck.params, ck.config, to_float(img),
                                         img.height, img.width);
  DecodeTrace trace;
  DecodeOutcome dec =
      greedy_decode(ck.params, ck.config, enc, max_len, &trace);
  GuiderMaps maps = guider_maps(ck.params, ck.config, enc, dec.cell_states);
  fs::create_directories(dump_dir);

  const int upscale = 8;
  const int n_cells =
      std::min<int>(64, static_cast<int>(dec.cell_positions.size()));
  char name[64];
  for (int c = 0; c < n_cells; ++c) {
    const int pos = dec.cell_positions[c];
    std::vector<float> attn(enc.grid_h * enc.grid_w);
    for (int i = 0; i < static_cast<int>(attn.size()); ++i)
      attn[i] = trace.cross_attn(pos, i);
    std::snprintf(name, sizeof(name), "cross_attn_cell%03d.pgm", c);
    write_heatmap((fs::path(dump_dir) / name).string(), attn, enc.grid_h,
                  enc.grid_w, upscale);
    std::snprintf(name, sizeof(name), "guider_row_cell%03d.pgm", c);
    write_heatmap((fs::path(dump_dir) / name).string(), maps.row[c],
                  enc.grid_h, enc.grid_w, upscale);
    std::snprintf(name, sizeof(name), "guider_col_cell%03d.pgm", c);
    write_heatmap((fs::path(dump_dir) / name).string(), maps.col[c],
                  enc.grid_h, enc.grid_w, upscale);
  }
  std::cout << "decoded " << dec.tokens.size() << " tokens, dumped maps for "
            << n_cells << " cells to " << dump_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tabrec: table structure recognition on synthetic documents"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  std::string sy_config, sy_out;
  int sy_count = 100;
  int64_t sy_seed = -1;
  synth->add_option("--config", sy_config, "config file (key = value)");
  synth->add_option("--out", sy_out, "output directory")->required();
  synth->add_option("--count", sy_count, "number of samples");
  synth->add_option("--seed", sy_seed, "seed override");

  // train
  auto* train = app.add_subcommand("train", "train a model");
  std::string tr_config, tr_data, tr_out, tr_init, tr_log;
  int64_t tr_steps = -1;
  int tr_batch = -1, tr_threads = -1;
  double tr_lr = -1;
  int64_t tr_seed = -1;
  bool no_ul = false, no_vg = false, no_lg = false;
  train->add_option("--config", tr_config, "config file");
  train->add_option("--data", tr_data, "dataset directory")->required();
  train->add_option("--out", tr_out, "checkpoint path")->required();
  train->add_option("--init-from", tr_init, "warm-start checkpoint");
  train->add_option("--steps", tr_steps, "total steps");
  train->add_option("--batch", tr_batch, "batch size");
  train->add_option("--lr", tr_lr, "peak learning rate");
  train->add_option("--seed", tr_seed, "seed");
  train->add_option("--threads", tr_threads, "kernel threads");
  train->add_option("--log", tr_log, "CSV log path");
  train->add_flag("--no-ul", no_ul, "disable uncertainty weighting");
  train->add_flag("--no-vg", no_vg, "disable the vision guider");
  train->add_flag("--no-lg", no_lg, "disable the language guider");

  // infer
  auto* infer = app.add_subcommand("infer", "predict a table from an image");
  std::string in_ckpt, in_image, in_out;
  int in_maxlen = 0;
  infer->add_option("--ckpt", in_ckpt, "checkpoint")->required();
  infer->add_option("--image", in_image, "input PGM image")->required();
  infer->add_option("--out", in_out, "output JSON path")->required();
  infer->add_option("--max-len", in_maxlen, "decode length cap");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate predictions");
  std::string ev_gt, ev_pred, ev_metrics = "teds,adjf1,grits", ev_out,
              ev_csv;
  double ev_iou = 0.6;
  eval->add_option("--gt", ev_gt, "ground-truth dataset dir")->required();
  eval->add_option("--pred", ev_pred, "predictions dir")->required();
  eval->add_option("--metrics", ev_metrics, "comma list: teds,adjf1,grits");
  eval->add_option("--out", ev_out, "report JSON path");
  eval->add_option("--csv", ev_csv, "report CSV path");
  eval->add_option("--iou", ev_iou, "adjacency IoU threshold");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference suite");
  bool gc_full = false;
  int64_t gc_seed = 42;
  gc->add_flag("--full", gc_full, "more shapes and coordinates");
  gc->add_option("--seed", gc_seed, "seed");

  // inspect
  auto* insp = app.add_subcommand("inspect", "dump attention/guider maps");
  std::string is_ckpt, is_image, is_dump;
  int is_maxlen = 0;
  insp->add_option("--ckpt", is_ckpt, "checkpoint")->required();
  insp->add_option("--image", is_image, "input PGM image")->required();
  insp->add_option("--dump-attention", is_dump, "output directory")
      ->required();
  insp->add_option("--max-len", is_maxlen, "decode length cap");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << "\n";
    return 2;
  }

  try {
    if (synth->parsed()) return cmd_synth(sy_config, sy_out, sy_count, sy_seed);
    if (train->parsed()) {
      TrainConfig cfg;
      if (!tr_config.empty()) ConfigFile::parse_file(tr_config).apply(cfg);
      cfg.data_dir = tr_data;
      cfg.out_path = tr_out;
      cfg.init_from = tr_init;
      if (tr_steps > 0) cfg.total_steps = tr_steps;
      if (tr_batch > 0) cfg.batch_size = tr_batch;
      if (tr_lr > 0) cfg.peak_lr = tr_lr;
      if (tr_seed >= 0) cfg.seed = static_cast<uint64_t>(tr_seed);
      if (tr_threads >= 0) cfg.threads = tr_threads;
      if (!tr_log.empty()) cfg.log_path = tr_log;
      if (no_ul) cfg.model.use_ul = false;
      if (no_vg) cfg.model.use_vg = false;
      if (no_lg) cfg.model.use_lg = false;
      return cmd_train(cfg);
    }
    if (infer->parsed()) return cmd_infer(in_ckpt, in_image, in_out, in_maxlen);
    if (eval->parsed())
      return cmd_eval(ev_gt, ev_pred, ev_metrics, ev_out, ev_csv, ev_iou);
    if (gc->parsed())
      return cmd_gradcheck(gc_full, static_cast<uint64_t>(gc_seed));
    if (insp->parsed())
      return cmd_inspect(is_ckpt, is_image, is_dump, is_maxlen);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
