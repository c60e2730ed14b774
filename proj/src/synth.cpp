#include "tabrec/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include <json.hpp>

#include "tabrec/array.hpp"
#include "tabrec/pgm.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace tabrec {

void SynthConfig::validate() const {
  if (rows_min < 1 || rows_max < rows_min || cols_min < 1 ||
      cols_max < cols_min)
    throw IoError("synth config: empty rows/cols range");
  for (double p : {merge_probability, wireless_probability,
                   descriptive_probability, empty_probability})
    if (p < 0.0 || p > 1.0)
      throw IoError("synth config: probability outside [0,1]");
  if (image_size < 32 || feature_stride < 1 ||
      image_size % feature_stride != 0)
    throw IoError("synth config: image_size must be a multiple of the stride");
}

// ---------------------------------------------------------------------------
// 5x7 bitmap font (low 5 bits of each of 7 rows)

namespace {

struct Glyph {
  char c;
  uint8_t rows[7];
};

constexpr Glyph kFont[] = {
    {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}},
    {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
    {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}},
    {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
    {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}},
    {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
    {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}},
    {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
    {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}},
    {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
    {'A', {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
    {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
    {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}},
    {'D', {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C}},
    {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}},
    {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
    {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}},
    {'H', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
    {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}},
    {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},
    {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}},
    {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
    {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}},
    {'N', {0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11}},
    {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
    {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
    {'Q', {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}},
    {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
    {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}},
    {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
    {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
    {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},
    {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A}},
    {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
    {'Y', {0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04}},
    {'Z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
    {' ', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}},
    {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}},
    {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
    {'%', {0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03}},
};

constexpr int kGlyphW = 5;
constexpr int kGlyphH = 7;
constexpr int kAdvance = 6;      // glyph + 1px spacing
constexpr int kLineHeight = 9;   // glyph + 2px leading
constexpr int kCellPad = 2;

const char* const kWords[] = {
    "TOTAL",  "NET",    "GROSS", "RATE",   "MEAN",  "VALUE",
    "INDEX",  "SCORE",  "LEVEL", "GROUP",  "PHASE", "YIELD",
    "SPREAD", "MARGIN", "RANGE", "UNITS",  "COST",  "BASE",
    "SHARE",  "COUNT",  "DELTA", "FACTOR", "LIMIT", "RATIO",
};

std::string random_numeric(Rng& rng) {
  switch (rng.uniform_int(0, 4)) {
    case 0:
      return std::to_string(rng.uniform_int(0, 99));
    case 1:
      return std::to_string(rng.uniform_int(0, 9)) + "." +
             std::to_string(rng.uniform_int(0, 9));
    case 2:
      return "-" + std::to_string(rng.uniform_int(0, 9)) + "." +
             std::to_string(rng.uniform_int(0, 9));
    case 3:
      return std::to_string(rng.uniform_int(0, 99)) + "%";
    default:
      return std::to_string(rng.uniform_int(100, 999));
  }
}

std::string random_phrase(Rng& rng) {
  const int n_words = rng.uniform_int(2, 3);
  std::string out;
  for (int i = 0; i < n_words; ++i) {
    if (i) out += " ";
    out += kWords[rng.uniform_int(0, static_cast<int>(std::size(kWords)) - 1)];
  }
  return out;
}

}  // namespace

const uint8_t* glyph5x7(char c) {
  for (const Glyph& g : kFont)
    if (g.c == c) return g.rows;
  return nullptr;
}

// ---------------------------------------------------------------------------
// layout

TableGrid generate_layout(Rng& rng, const SynthConfig& cfg) {
  cfg.validate();
  TableGrid g;
  g.n_rows = rng.uniform_int(cfg.rows_min, cfg.rows_max);
  g.n_cols = rng.uniform_int(cfg.cols_min, cfg.cols_max);

  // Start from unit cells, then carve rectangular merges out of regions
  // that are still unit-tiled.
  std::vector<int> owner(static_cast<size_t>(g.n_rows) * g.n_cols);
  for (size_t i = 0; i < owner.size(); ++i) owner[i] = static_cast<int>(i);
  std::vector<CellSpan> spans(owner.size(), CellSpan{1, 1});
  std::vector<bool> merged_away(owner.size(), false);
  std::vector<bool> is_anchor_merged(owner.size(), false);

  const int attempts = g.n_rows * g.n_cols;
  for (int a = 0; a < attempts; ++a) {
    if (!rng.bernoulli(cfg.merge_probability)) continue;
    const int r = rng.uniform_int(0, g.n_rows - 1);
    const int c = rng.uniform_int(0, g.n_cols - 1);
    const int max_lr = std::min(3, g.n_rows - r);
    const int max_lc = std::min(3, g.n_cols - c);
    int lr = rng.uniform_int(1, max_lr);
    int lc = rng.uniform_int(1, max_lc);
    if (lr == 1 && lc == 1) continue;
    bool free_region = true;
    for (int rr = r; rr < r + lr && free_region; ++rr)
      for (int cc = c; cc < c + lc && free_region; ++cc) {
        const size_t idx = static_cast<size_t>(rr) * g.n_cols + cc;
        if (merged_away[idx] || is_anchor_merged[idx]) free_region = false;
      }
    if (!free_region) continue;
    const size_t anchor = static_cast<size_t>(r) * g.n_cols + c;
    spans[anchor] = CellSpan{lr, lc};
    is_anchor_merged[anchor] = true;
    for (int rr = r; rr < r + lr; ++rr)
      for (int cc = c; cc < c + lc; ++cc) {
        const size_t idx = static_cast<size_t>(rr) * g.n_cols + cc;
        if (idx != anchor) merged_away[idx] = true;
      }
  }

  for (int r = 0; r < g.n_rows; ++r)
    for (int c = 0; c < g.n_cols; ++c) {
      const size_t idx = static_cast<size_t>(r) * g.n_cols + c;
      if (merged_away[idx]) continue;
      Cell cell;
      cell.row = r;
      cell.col = c;
      cell.span = spans[idx];
      if (rng.bernoulli(cfg.empty_probability)) {
        cell.text.clear();
      } else if (rng.bernoulli(cfg.descriptive_probability)) {
        cell.text = random_phrase(rng);
      } else {
        cell.text = random_numeric(rng);
      }
      g.cells.push_back(std::move(cell));
    }
  return g;
}

// ---------------------------------------------------------------------------
// raster

namespace {

struct Raster {
  std::vector<float> px;
  int size = 0;
  void hline(int y, int x0, int x1) {
    if (y < 0 || y >= size) return;
    for (int x = std::max(0, x0); x <= std::min(size - 1, x1); ++x)
      px[static_cast<size_t>(y) * size + x] = 0.0f;
  }
  void vline(int x, int y0, int y1) {
    if (x < 0 || x >= size) return;
    for (int y = std::max(0, y0); y <= std::min(size - 1, y1); ++y)
      px[static_cast<size_t>(y) * size + x] = 0.0f;
  }
  void glyph(char ch, int x, int y) {
    const uint8_t* rows = glyph5x7(ch);
    if (!rows) return;
    for (int gy = 0; gy < kGlyphH; ++gy)
      for (int gx = 0; gx < kGlyphW; ++gx)
        if (rows[gy] & (1 << (kGlyphW - 1 - gx))) {
          const int yy = y + gy, xx = x + gx;
          if (yy >= 0 && yy < size && xx >= 0 && xx < size)
            px[static_cast<size_t>(yy) * size + xx] = 0.0f;
        }
  }
};

// Greedy word-wrap into a box; returns the text that was actually drawn.
std::string draw_text(Raster& img, const std::string& text, int x0, int y0,
                      int x1, int y1) {
  const int box_w = x1 - x0 + 1, box_h = y1 - y0 + 1;
  const int max_cols = box_w / kAdvance;
  const int max_lines = box_h / kLineHeight;
  if (text.empty()) return "";
  if (max_cols < 1 || max_lines < 1)
    throw CellTooSmall("cell box " + std::to_string(box_w) + "x" +
                       std::to_string(box_h) + " cannot fit a glyph");

  std::vector<std::string> words;
  std::string cur;
  for (char c : text) {
    if (c == ' ') {
      if (!cur.empty()) words.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) words.push_back(cur);

  std::vector<std::string> lines(1);
  for (const std::string& w : words) {
    std::string word = w.substr(0, static_cast<size_t>(max_cols));
    std::string& line = lines.back();
    const size_t need = line.empty() ? word.size() : line.size() + 1 + word.size();
    if (need <= static_cast<size_t>(max_cols)) {
      if (!line.empty()) line += " ";
      line += word;
    } else if (static_cast<int>(lines.size()) < max_lines) {
      lines.push_back(word);
    } else {
      break;  // out of room; remaining words are dropped
    }
  }

  std::string drawn;
  for (size_t li = 0; li < lines.size(); ++li) {
    if (lines[li].empty()) continue;
    const int y = y0 + static_cast<int>(li) * kLineHeight;
    int x = x0;
    for (char c : lines[li]) {
      img.glyph(c, x, y + 1);
      x += kAdvance;
    }
    if (!drawn.empty()) drawn += " ";
    drawn += lines[li];
  }
  return drawn;
}

}  // namespace

SynthSample rasterize_sample(const TableGrid& grid, const SynthConfig& cfg,
                             Rng& rng) {
  cfg.validate();
  const int S = cfg.image_size;
  SynthSample out;
  out.width = S;
  out.height = S;

  Raster img;
  img.size = S;
  img.px.assign(static_cast<size_t>(S) * S, 1.0f);

  // Table bounding box with jittered margins.
  const int margin = std::max(4, S / 24);
  const int tx0 = margin + rng.uniform_int(0, margin / 2);
  const int ty0 = margin + rng.uniform_int(0, margin / 2);
  const int tx1 = S - 1 - margin - rng.uniform_int(0, margin / 2);
  const int ty1 = S - 1 - margin - rng.uniform_int(0, margin / 2);

  // Jittered but monotone row/column edges.
  auto edges = [&rng](int lo, int hi, int n) {
    std::vector<int> e(static_cast<size_t>(n) + 1);
    const double step = static_cast<double>(hi - lo) / n;
    e[0] = lo;
    e[n] = hi;
    for (int i = 1; i < n; ++i) {
      const double base = lo + step * i;
      const int jitter = static_cast<int>(step / 5.0);
      e[i] = static_cast<int>(base) +
             (jitter > 0 ? rng.uniform_int(-jitter, jitter) : 0);
    }
    return e;
  };
  const std::vector<int> xe = edges(tx0, tx1, grid.n_cols);
  const std::vector<int> ye = edges(ty0, ty1, grid.n_rows);

  const bool wireless = rng.bernoulli(cfg.wireless_probability);

  TableGrid annotated = grid;
  for (Cell& cell : annotated.cells) {
    const int cx0 = xe[cell.col];
    const int cx1 = xe[cell.col + cell.span.cols];
    const int cy0 = ye[cell.row];
    const int cy1 = ye[cell.row + cell.span.rows];
    if (!wireless) {
      img.hline(cy0, cx0, cx1);
      img.hline(cy1, cx0, cx1);
      img.vline(cx0, cy0, cy1);
      img.vline(cx1, cy0, cy1);
    }
    cell.text = draw_text(img, cell.text, cx0 + kCellPad + 1,
                          cy0 + kCellPad, cx1 - kCellPad - 1, cy1 - kCellPad);
    const std::array<double, 8> pts = {
        static_cast<double>(cx0), static_cast<double>(cy0),
        static_cast<double>(cx1), static_cast<double>(cy0),
        static_cast<double>(cx1), static_cast<double>(cy1),
        static_cast<double>(cx0), static_cast<double>(cy1)};
    cell.polygon = quantize_polygon(pts, S, S);
  }

  out.image = std::move(img.px);
  out.grid = std::move(annotated);
  out.tsr = serialize_grid(out.grid);
  Vocab vocab;
  vocab.charset = cfg.charset;
  out.tr = build_tr_sequence(out.grid, vocab);

  // Guider masks: a feature position is positive when its patch center lies
  // in the horizontal band of the cell's rows (row mask) or the vertical
  // band of its columns (col mask), clipped to the table box.
  const int ds = cfg.feature_stride;
  out.grid_h = S / ds;
  out.grid_w = S / ds;
  for (const Cell& cell : out.grid.cells) {
    const double cx0 = xe[cell.col], cx1 = xe[cell.col + cell.span.cols];
    const double cy0 = ye[cell.row], cy1 = ye[cell.row + cell.span.rows];
    std::vector<uint8_t> rowm(static_cast<size_t>(out.grid_h) * out.grid_w, 0);
    std::vector<uint8_t> colm(rowm.size(), 0);
    for (int gy = 0; gy < out.grid_h; ++gy)
      for (int gx = 0; gx < out.grid_w; ++gx) {
        const double px = (gx + 0.5) * ds;
        const double py = (gy + 0.5) * ds;
        const size_t idx = static_cast<size_t>(gy) * out.grid_w + gx;
        if (py >= cy0 && py <= cy1 && px >= tx0 && px <= tx1) rowm[idx] = 1;
        if (px >= cx0 && px <= cx1 && py >= ty0 && py <= ty1) colm[idx] = 1;
      }
    out.row_masks.push_back(std::move(rowm));
    out.col_masks.push_back(std::move(colm));
  }
  return out;
}

SynthSample make_sample(Rng& rng, const SynthConfig& cfg) {
  for (int attempt = 0; attempt < 32; ++attempt) {
    TableGrid grid = generate_layout(rng, cfg);
    try {
      return rasterize_sample(grid, cfg, rng);
    } catch (const CellTooSmall&) {
      continue;  // resample the layout
    }
  }
  throw CellTooSmall("could not fit any layout at image_size " +
                     std::to_string(cfg.image_size));
}

// ---------------------------------------------------------------------------
// dataset io

namespace {

std::string mask_to_hex(const std::vector<uint8_t>& mask) {
  static const char* hexd = "0123456789abcdef";
  std::string out;
  int nibble = 0, bits = 0;
  for (uint8_t b : mask) {
    nibble = (nibble << 1) | (b ? 1 : 0);
    if (++bits == 4) {
      out += hexd[nibble];
      nibble = 0;
      bits = 0;
    }
  }
  if (bits > 0) out += hexd[nibble << (4 - bits)];
  return out;
}

std::vector<uint8_t> hex_to_mask(const std::string& hex, size_t n) {
  std::vector<uint8_t> out(n, 0);
  for (size_t i = 0; i < n; ++i) {
    const char c = hex[i / 4];
    const int v = c <= '9' ? c - '0' : c - 'a' + 10;
    out[i] = (v >> (3 - static_cast<int>(i % 4))) & 1;
  }
  return out;
}

std::string image_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "img_%06d.pgm", index);
  return buf;
}

json config_to_json(const SynthConfig& c) {
  return json{{"seed", c.seed},
              {"rows_range", {c.rows_min, c.rows_max}},
              {"cols_range", {c.cols_min, c.cols_max}},
              {"merge_probability", c.merge_probability},
              {"wireless_probability", c.wireless_probability},
              {"descriptive_probability", c.descriptive_probability},
              {"empty_probability", c.empty_probability},
              {"image_size", c.image_size},
              {"feature_stride", c.feature_stride},
              {"charset", c.charset}};
}

}  // namespace

DatasetManifest write_dataset(const std::vector<SynthSample>& samples,
                              const std::string& directory,
                              const SynthConfig& cfg) {
  fs::create_directories(directory);
  std::ofstream ann(fs::path(directory) / "samples.jsonl");
  std::ofstream aux(fs::path(directory) / "aux.jsonl");
  if (!ann || !aux) throw IoError("cannot create dataset files in " + directory);

  for (size_t i = 0; i < samples.size(); ++i) {
    const SynthSample& s = samples[i];
    const std::string name = image_name(static_cast<int>(i));
    write_pgm((fs::path(directory) / name).string(),
              to_pgm(s.image, s.width, s.height));

    json cells = json::array();
    for (const Cell& c : s.grid.cells) {
      json jc = {{"row", c.row},
                 {"col", c.col},
                 {"row_span", c.span.rows},
                 {"col_span", c.span.cols},
                 {"text", c.text}};
      json poly = json::array();
      const CellPolygon p = c.polygon.value_or(CellPolygon{});
      for (int v : p.pts) poly.push_back(v);
      jc["polygon"] = poly;
      cells.push_back(jc);
    }
    json rec = {{"image", name},
                {"width", s.width},
                {"height", s.height},
                {"cells", cells}};
    ann << rec.dump() << "\n";

    json rowm = json::array(), colm = json::array();
    for (const auto& m : s.row_masks) rowm.push_back(mask_to_hex(m));
    for (const auto& m : s.col_masks) colm.push_back(mask_to_hex(m));
    json align = json::array();
    for (const auto& [n, m] : s.tr.ranges) align.push_back(json::array({n, m}));
    json arec = {{"grid_h", s.grid_h},
                 {"grid_w", s.grid_w},
                 {"row_masks", rowm},
                 {"col_masks", colm},
                 {"tr", s.tr.tokens},
                 {"align", align}};
    aux << arec.dump() << "\n";
  }

  DatasetManifest manifest;
  manifest.count = static_cast<int>(samples.size());
  manifest.config = cfg;
  std::ofstream mf(fs::path(directory) / "manifest.json");
  mf << json{{"count", manifest.count}, {"config", config_to_json(cfg)}}.dump(2)
     << "\n";
  return manifest;
}

std::vector<SynthSample> load_dataset(const std::string& directory) {
  std::ifstream ann(fs::path(directory) / "samples.jsonl");
  std::ifstream aux(fs::path(directory) / "aux.jsonl");
  if (!ann) throw IoError("missing samples.jsonl in " + directory);

  std::vector<SynthSample> out;
  std::string line, aline;
  while (std::getline(ann, line)) {
    if (line.empty()) continue;
    json rec = json::parse(line);
    SynthSample s;
    s.width = rec["width"].get<int>();
    s.height = rec["height"].get<int>();
    TableGrid g;
    int max_r = 0, max_c = 0;
    for (const json& jc : rec["cells"]) {
      Cell c;
      c.row = jc["row"].get<int>();
      c.col = jc["col"].get<int>();
      c.span.rows = jc["row_span"].get<int>();
      c.span.cols = jc["col_span"].get<int>();
      c.text = jc["text"].get<std::string>();
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
    s.grid = std::move(g);
    s.tsr = serialize_grid(s.grid);

    PgmImage img =
        read_pgm((fs::path(directory) / rec["image"].get<std::string>())
                     .string());
    s.image = to_float(img);

    if (aux && std::getline(aux, aline) && !aline.empty()) {
      json arec = json::parse(aline);
      s.grid_h = arec["grid_h"].get<int>();
      s.grid_w = arec["grid_w"].get<int>();
      const size_t n = static_cast<size_t>(s.grid_h) * s.grid_w;
      for (const json& h : arec["row_masks"])
        s.row_masks.push_back(hex_to_mask(h.get<std::string>(), n));
      for (const json& h : arec["col_masks"])
        s.col_masks.push_back(hex_to_mask(h.get<std::string>(), n));
      s.tr.tokens = arec["tr"].get<std::vector<int>>();
      for (const json& a : arec["align"])
        s.tr.ranges.emplace_back(a[0].get<int>(), a[1].get<int>());
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace tabrec
