#include "tabrec/table.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "tabrec/array.hpp"

namespace tabrec {

std::string Vocab::token_name(int tok) const {
  switch (tok) {
    case PAD: return "<pad>";
    case S_START: return "<s>";
    case TSR_PROMPT: return "<tsr>";
    case TR_PROMPT: return "<tr>";
    case CELL: return "<C>";
    case NL: return "<NL>";
    case TEXT_SEP: return "<sep>";
    case S_END: return "</s>";
    default: break;
  }
  if (tok >= kLocBase && tok < kTextBase)
    return "<" + std::to_string(tok - kLocBase) + ">";
  if (is_text(tok)) return std::string(1, token_char(tok));
  return "<unk:" + std::to_string(tok) + ">";
}

std::vector<int> occupancy(const TableGrid& grid) {
  std::vector<int> occ(static_cast<size_t>(grid.n_rows) * grid.n_cols, -1);
  for (size_t ci = 0; ci < grid.cells.size(); ++ci) {
    const Cell& c = grid.cells[ci];
    for (int r = c.row; r < c.row + c.span.rows && r < grid.n_rows; ++r)
      for (int k = c.col; k < c.col + c.span.cols && k < grid.n_cols; ++k) {
        int& slot = occ[static_cast<size_t>(r) * grid.n_cols + k];
        if (slot == -1) slot = static_cast<int>(ci);
      }
  }
  return occ;
}

std::vector<std::string> validate_grid(const TableGrid& grid) {
  std::vector<std::string> out;
  if (grid.empty()) return out;  // the empty grid is the valid null table
  if (grid.n_rows <= 0 || grid.n_cols <= 0) {
    out.push_back("non-positive grid dims");
    return out;
  }
  std::vector<int> cover(static_cast<size_t>(grid.n_rows) * grid.n_cols, 0);
  for (size_t ci = 0; ci < grid.cells.size(); ++ci) {
    const Cell& c = grid.cells[ci];
    if (c.span.rows < 1 || c.span.cols < 1 || c.span.rows > 999 ||
        c.span.cols > 999)
      out.push_back("bad span cell " + std::to_string(ci));
    if (c.row < 0 || c.col < 0 || c.row + c.span.rows > grid.n_rows ||
        c.col + c.span.cols > grid.n_cols) {
      out.push_back("out-of-bounds cell " + std::to_string(ci));
      continue;
    }
    for (int r = c.row; r < c.row + c.span.rows; ++r)
      for (int k = c.col; k < c.col + c.span.cols; ++k)
        cover[static_cast<size_t>(r) * grid.n_cols + k] += 1;
    if (c.polygon) {
      for (int p : c.polygon->pts)
        if (p < 0 || p > 999) {
          out.push_back("bad polygon cell " + std::to_string(ci));
          break;
        }
    }
  }
  for (size_t ci = 1; ci < grid.cells.size(); ++ci) {
    const Cell& a = grid.cells[ci - 1];
    const Cell& b = grid.cells[ci];
    if (a.row > b.row || (a.row == b.row && a.col >= b.col))
      out.push_back("cells not sorted at index " + std::to_string(ci));
  }
  for (int r = 0; r < grid.n_rows; ++r)
    for (int k = 0; k < grid.n_cols; ++k) {
      int n = cover[static_cast<size_t>(r) * grid.n_cols + k];
      if (n > 1)
        out.push_back("overlap at (" + std::to_string(r) + "," +
                      std::to_string(k) + ")");
      else if (n == 0)
        out.push_back("uncovered slot (" + std::to_string(r) + "," +
                      std::to_string(k) + ")");
    }
  return out;
}

SerializedTable serialize_grid(const TableGrid& grid) {
  SerializedTable out;
  out.tokens.push_back(S_START);
  out.tokens.push_back(TSR_PROMPT);
  size_t ci = 0;
  for (int r = 0; r < grid.n_rows; ++r) {
    while (ci < grid.cells.size() && grid.cells[ci].row == r) {
      const Cell& c = grid.cells[ci];
      out.tokens.push_back(CELL);
      out.logical.push_back(c.span);
      out.polygons.push_back(c.polygon.value_or(CellPolygon{}));
      ++ci;
    }
    out.tokens.push_back(NL);
  }
  out.tokens.push_back(S_END);
  return out;
}

std::string layout_error_name(LayoutError e) {
  switch (e) {
    case LayoutError::Overlap: return "overlap";
    case LayoutError::Ragged: return "ragged";
    case LayoutError::Truncation: return "truncation";
  }
  return "?";
}

namespace {

// Growing occupancy sheet for first-fit placement.
struct Sheet {
  std::map<std::pair<int, int>, int> occ;  // (row,col) -> cell index
  int max_row = -1;
  int max_col = -1;

  bool taken(int r, int c) const { return occ.count({r, c}) > 0; }
  void claim(int r, int c, int cell) {
    occ[{r, c}] = cell;
    max_row = std::max(max_row, r);
    max_col = std::max(max_col, c);
  }
};

}  // namespace

ReconstructResult reconstruct_grid(const std::vector<int>& tokens,
                                   const std::vector<CellSpan>& logical,
                                   const ReconstructOptions& opts,
                                   const std::vector<CellPolygon>* polygons,
                                   const std::vector<std::string>* texts) {
  ReconstructResult res;
  Sheet sheet;
  std::vector<Cell> cells;
  int row = 0;
  size_t cell_idx = 0;
  bool ended = false;
  bool stopped = false;

  for (size_t ti = 0; ti < tokens.size() && !ended && !stopped; ++ti) {
    const int tok = tokens[ti];
    if (tok == S_START || tok == TSR_PROMPT || tok == PAD) continue;
    if (tok == S_END) {
      ended = true;
      continue;
    }
    if (tok == NL) {
      row += 1;
      continue;
    }
    if (tok != CELL) continue;  // foreign tokens are skipped

    CellSpan span =
        cell_idx < logical.size() ? logical[cell_idx] : CellSpan{1, 1};
    span.rows = std::max(1, span.rows);
    span.cols = std::max(1, span.cols);

    int col = 0;
    while (sheet.taken(row, col)) ++col;

    bool collision = false;
    for (int r = row; r < row + span.rows && !collision; ++r)
      for (int k = col; k < col + span.cols && !collision; ++k)
        if (sheet.taken(r, k)) collision = true;
    if (collision) {
      res.errors.push_back(LayoutError::Overlap);
      if (opts.recover_overlaps) {
        span = {1, 1};  // the anchor slot itself is free by construction
      } else {
        stopped = true;
        break;
      }
    }

    Cell c;
    c.row = row;
    c.col = col;
    c.span = span;
    if (polygons && cell_idx < polygons->size())
      c.polygon = (*polygons)[cell_idx];
    if (texts && cell_idx < texts->size()) c.text = (*texts)[cell_idx];
    const int id = static_cast<int>(cells.size());
    for (int r = row; r < row + span.rows; ++r)
      for (int k = col; k < col + span.cols; ++k) sheet.claim(r, k, id);
    cells.push_back(std::move(c));
    ++cell_idx;
  }

  const int completed_rows = row;  // number of NL tokens consumed
  const int height = sheet.max_row + 1;
  const int width = sheet.max_col + 1;

  if (cells.empty()) {
    // Null table; any stray NL tokens leave it ragged.
    if (!ended || completed_rows > 0) {
      if (!ended) res.errors.push_back(LayoutError::Truncation);
      if (completed_rows > 0) res.errors.push_back(LayoutError::Ragged);
    }
    return res;
  }

  // Per-row coverage extent over the full touched area.
  std::vector<int> filled(static_cast<size_t>(height), 0);
  std::vector<bool> contiguous(static_cast<size_t>(height), true);
  for (int r = 0; r < height; ++r) {
    int count = 0;
    for (int k = 0; k < width; ++k)
      if (sheet.taken(r, k)) ++count;
    filled[r] = count;
    for (int k = 0; k < count; ++k)
      if (!sheet.taken(r, k)) contiguous[r] = false;
  }

  const bool truncated = !stopped && (!ended || height > completed_rows);
  bool complete = true;
  for (int r = 0; r < height; ++r)
    if (filled[r] != width || !contiguous[r]) complete = false;

  if (!truncated && !stopped && complete && completed_rows == height) {
    res.grid.n_rows = height;
    res.grid.n_cols = width;
    res.grid.cells = std::move(cells);
    return res;  // errors already collected (recovered overlaps)
  }

  if (truncated) res.errors.push_back(LayoutError::Truncation);

  // Best-effort partial grid: the longest prefix of rows that tile a
  // rectangle exactly, with spans clipped to the prefix.
  int prefix = 0;
  int prefix_width = filled.empty() ? 0 : filled[0];
  const int usable = std::min(completed_rows, height);
  for (int r = 0; r < usable; ++r) {
    if (filled[r] == prefix_width && contiguous[r] && prefix_width > 0)
      prefix = r + 1;
    else
      break;
  }
  // Partial fill past the prefix is inherent to truncation; it only counts
  // as ragged when the sequence terminated normally.
  if (!truncated && !stopped && (prefix < usable || completed_rows != height))
    res.errors.push_back(LayoutError::Ragged);

  TableGrid g;
  g.n_rows = prefix;
  g.n_cols = prefix > 0 ? prefix_width : 0;
  for (Cell& c : cells) {
    if (c.row >= prefix) continue;
    c.span.rows = std::min(c.span.rows, prefix - c.row);
    g.cells.push_back(std::move(c));
  }
  if (g.cells.empty()) g = TableGrid{};
  res.grid = std::move(g);
  return res;
}

TrSequence build_tr_sequence(const TableGrid& grid, const Vocab& vocab) {
  TrSequence out;
  out.tokens.push_back(S_START);
  out.tokens.push_back(TR_PROMPT);
  for (const Cell& c : grid.cells) {
    const int begin = static_cast<int>(out.tokens.size());
    for (char ch : c.text) {
      const int tok = vocab.text_token(ch);
      if (tok >= 0) out.tokens.push_back(tok);
    }
    out.ranges.emplace_back(begin, static_cast<int>(out.tokens.size()));
    out.tokens.push_back(TEXT_SEP);
  }
  out.tokens.push_back(S_END);
  return out;
}

int tree_size(const TreeNode& t) {
  int n = 1;
  for (const TreeNode& c : t.children) n += tree_size(c);
  return n;
}

TreeNode grid_to_html_tree(const TableGrid& grid, bool with_text) {
  TreeNode root{"table", {}};
  root.children.resize(static_cast<size_t>(std::max(grid.n_rows, 0)),
                       TreeNode{"tr", {}});
  for (const Cell& c : grid.cells) {
    std::string label = "td[" + std::to_string(c.span.rows) + "," +
                        std::to_string(c.span.cols) + "]";
    if (with_text) label += "|" + c.text;
    if (c.row >= 0 && c.row < grid.n_rows)
      root.children[c.row].children.push_back(TreeNode{std::move(label), {}});
  }
  return root;
}

int quantize_coord(double x, int dim) {
  if (dim <= 1) return 0;
  if (x < 0.0 || x > static_cast<double>(dim - 1))
    throw OutOfBounds("coordinate " + std::to_string(x) +
                      " outside image of extent " + std::to_string(dim));
  // round half away from zero
  return static_cast<int>(std::round(x * 999.0 / static_cast<double>(dim - 1)));
}

double dequantize_coord(int q, int dim) {
  if (dim <= 1) return 0.0;
  return static_cast<double>(q) * static_cast<double>(dim - 1) / 999.0;
}

CellPolygon quantize_polygon(const std::array<double, 8>& pixel_pts,
                             int image_w, int image_h) {
  CellPolygon out;
  for (int j = 0; j < 8; ++j)
    out.pts[j] = quantize_coord(pixel_pts[j], (j % 2 == 0) ? image_w : image_h);
  return out;
}

std::array<double, 8> dequantize_polygon(const CellPolygon& poly, int image_w,
                                         int image_h) {
  std::array<double, 8> out{};
  for (int j = 0; j < 8; ++j)
    out[j] = dequantize_coord(poly.pts[j], (j % 2 == 0) ? image_w : image_h);
  return out;
}

}  // namespace tabrec
