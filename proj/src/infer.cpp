#include "tabrec/infer.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

using nlohmann::json;

namespace tabrec {

EncodedImage encode_image_values(const ParamMap<float>& params,
                                 const ModelConfig& cfg,
                                 const std::vector<float>& image, int height,
                                 int width) {
  Graph<float> g;
  g.recording = false;
  GraphParams<float> p(g, params, /*trainable=*/false);
  VisionEmbedding<float> emb = encode_image(g, p, image, height, width, cfg);
  return {emb.z.val(), emb.grid_h, emb.grid_w};
}

DecodeOutcome greedy_decode(const ParamMap<float>& params,
                            const ModelConfig& cfg, const EncodedImage& enc,
                            int max_len, DecodeTrace* trace) {
  if (max_len <= 0 || max_len > cfg.max_decode_len)
    max_len = cfg.max_decode_len;
  DecodeOutcome out;
  out.tokens = {S_START, TSR_PROMPT};

  while (static_cast<int>(out.tokens.size()) < max_len) {
    Graph<float> g;
    g.recording = false;
    GraphParams<float> p(g, params, false);
    Tensor<float> z = constant(g, enc.z);
    DecoderOutput<float> dec = decode_sequence(g, p, z, out.tokens, cfg);
    const Array<float>& logits = dec.logits.val();
    const int vocab = logits.cols();
    const int last = logits.rows() - 1;
    int best = 0;
    for (int v = 1; v < vocab; ++v)
      if (logits(last, v) > logits(last, best)) best = v;
    out.tokens.push_back(best);
    if (best == S_END) break;
  }
  if (out.tokens.back() != S_END) out.truncated = true;

  // Final pass over the whole emitted sequence for per-position states.
  Graph<float> g;
  g.recording = false;
  GraphParams<float> p(g, params, false);
  Tensor<float> z = constant(g, enc.z);
  DecoderOutput<float> dec = decode_sequence(g, p, z, out.tokens, cfg, trace);
  out.hidden = dec.hidden.val();
  for (int i = 0; i < static_cast<int>(out.tokens.size()); ++i)
    if (out.tokens[i] == CELL) out.cell_positions.push_back(i);
  const int d = cfg.d_model;
  out.cell_states =
      Array<float>({static_cast<int>(out.cell_positions.size()), d});
  for (size_t c = 0; c < out.cell_positions.size(); ++c)
    for (int j = 0; j < d; ++j)
      out.cell_states(static_cast<int>(c), j) =
          out.hidden(out.cell_positions[c], j);
  return out;
}

namespace {

struct HeadOutputs {
  std::vector<CellSpan> spans;
  std::vector<CellPolygon> polys;
};

HeadOutputs run_heads(const ParamMap<float>& params, const ModelConfig& cfg,
                      const Array<float>& cell_states) {
  HeadOutputs out;
  const int nc = cell_states.rows();
  if (nc == 0) return out;
  Graph<float> g;
  g.recording = false;
  GraphParams<float> p(g, params, false);
  Tensor<float> cells = constant(g, cell_states);
  Tensor<float> expected = expected_location(g, p, cells);
  SpanScores<float> scores = span_scores(g, p, cells);
  for (int c = 0; c < nc; ++c) {
    std::vector<float> row(kLocCount), col(kLocCount);
    for (int i = 0; i < kLocCount; ++i) {
      row[i] = scores.row.val()(c, i);
      col[i] = scores.col.val()(c, i);
    }
    out.spans.push_back(span_from_scores(row, col));
    CellPolygon poly;
    for (int j = 0; j < 8; ++j) {
      const long q = std::lround(expected.val()(c, j));
      poly.pts[j] = static_cast<int>(std::clamp(q, 0L, 999L));
    }
    out.polys.push_back(poly);
  }
  return out;
}

}  // namespace

PredictResult predict_table(const ParamMap<float>& params,
                            const ModelConfig& cfg,
                            const std::vector<float>& image, int height,
                            int width, int max_len) {
  EncodedImage enc = encode_image_values(params, cfg, image, height, width);
  DecodeOutcome dec = greedy_decode(params, cfg, enc, max_len);
  HeadOutputs heads = run_heads(params, cfg, dec.cell_states);

  PredictResult res;
  res.truncated = dec.truncated;
  res.tokens = dec.tokens;
  res.cell_tokens = static_cast<int>(dec.cell_positions.size());

  ReconstructOptions opts;
  opts.recover_overlaps = true;
  ReconstructResult rec =
      reconstruct_grid(dec.tokens, heads.spans, opts, &heads.polys);
  res.grid = std::move(rec.grid);
  for (LayoutError e : rec.errors)
    res.layout_errors.push_back(layout_error_name(e));
  if (dec.truncated &&
      std::find(res.layout_errors.begin(), res.layout_errors.end(),
                "truncation") == res.layout_errors.end())
    res.layout_errors.push_back("truncation");
  return res;
}

std::string prediction_to_json(const PredictResult& res, int image_w,
                               int image_h, const std::string& image_name) {
  json cells = json::array();
  for (const Cell& c : res.grid.cells) {
    json jc = {{"row", c.row},
               {"col", c.col},
               {"row_span", c.span.rows},
               {"col_span", c.span.cols},
               {"text", c.text}};
    json poly = json::array();
    for (int v : c.polygon.value_or(CellPolygon{}).pts) poly.push_back(v);
    jc["polygon"] = poly;
    cells.push_back(jc);
  }
  json rec = {{"image", image_name},
              {"width", image_w},
              {"height", image_h},
              {"cells", cells},
              {"truncated", res.truncated},
              {"layout_errors", res.layout_errors}};
  return rec.dump();
}

TableGrid prediction_from_json(const std::string& json_text) {
  json rec = json::parse(json_text);
  TableGrid g;
  int max_r = 0, max_c = 0;
  for (const json& jc : rec["cells"]) {
    Cell c;
    c.row = jc["row"].get<int>();
    c.col = jc["col"].get<int>();
    c.span.rows = jc["row_span"].get<int>();
    c.span.cols = jc["col_span"].get<int>();
    if (jc.contains("text")) c.text = jc["text"].get<std::string>();
    if (jc.contains("polygon")) {
      CellPolygon p;
      for (int j = 0; j < 8; ++j) p.pts[j] = jc["polygon"][j].get<int>();
      c.polygon = p;
    }
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

GuiderMaps guider_maps(const ParamMap<float>& params, const ModelConfig& cfg,
                       const EncodedImage& enc,
                       const Array<float>& cell_states) {
  GuiderMaps maps;
  const int nc = cell_states.rows();
  if (nc == 0) return maps;
  Graph<float> g;
  g.recording = false;
  GraphParams<float> p(g, params, false);
  Tensor<float> cells = constant(g, cell_states);
  Tensor<float> z = constant(g, enc.z);
  GuiderScores<float> scores = vision_guider(g, p, cells, z);
  Tensor<float> row_sig = sigmoid(scores.row);
  Tensor<float> col_sig = sigmoid(scores.col);
  const int n = enc.z.rows();
  for (int c = 0; c < nc; ++c) {
    std::vector<float> r(n), k(n);
    for (int i = 0; i < n; ++i) {
      r[i] = row_sig.val()(c, i);
      k[i] = col_sig.val()(c, i);
    }
    maps.row.push_back(std::move(r));
    maps.col.push_back(std::move(k));
  }
  return maps;
}

}  // namespace tabrec
