#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace tabrec {

// ---------------------------------------------------------------------------
// token vocabulary
//
// The structure sequence uses only <C> and <NL> plus control tokens. The
// 1,000 location tokens <0>..<999> back coordinate quantization and span
// classification; text tokens cover the synthetic charset.

enum Token : int {
  PAD = 0,
  S_START = 1,
  TSR_PROMPT = 2,
  TR_PROMPT = 3,
  CELL = 4,
  NL = 5,
  TEXT_SEP = 6,
  S_END = 7,
};

constexpr int kLocBase = 8;
constexpr int kLocCount = 1000;
constexpr int kTextBase = kLocBase + kLocCount;

inline int loc_token(int k) { return kLocBase + k; }

constexpr const char* kDefaultCharset =
    "0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZ .-%";

struct Vocab {
  std::string charset = kDefaultCharset;

  int size() const { return kTextBase + static_cast<int>(charset.size()); }
  int text_token(char c) const {
    auto pos = charset.find(c);
    return pos == std::string::npos ? -1
                                    : kTextBase + static_cast<int>(pos);
  }
  char token_char(int tok) const { return charset[tok - kTextBase]; }
  bool is_text(int tok) const {
    return tok >= kTextBase && tok < size();
  }
  std::string token_name(int tok) const;
};

// ---------------------------------------------------------------------------
// table representation

struct CellSpan {
  int rows = 1;  // l_row
  int cols = 1;  // l_col
  bool operator==(const CellSpan&) const = default;
};

// 8 quantized coordinates (x1,y1,...,x4,y4), clockwise from the top-left.
struct CellPolygon {
  std::array<int, 8> pts{};
  bool operator==(const CellPolygon&) const = default;

  int min_x() const { return std::min(std::min(pts[0], pts[2]), std::min(pts[4], pts[6])); }
  int max_x() const { return std::max(std::max(pts[0], pts[2]), std::max(pts[4], pts[6])); }
  int min_y() const { return std::min(std::min(pts[1], pts[3]), std::min(pts[5], pts[7])); }
  int max_y() const { return std::max(std::max(pts[1], pts[3]), std::max(pts[5], pts[7])); }

  static CellPolygon from_box(int x0, int y0, int x1, int y1) {
    return CellPolygon{{x0, y0, x1, y0, x1, y1, x0, y1}};
  }
};

struct Cell {
  int row = 0;  // anchor row (top-left grid slot)
  int col = 0;  // anchor column
  CellSpan span;
  std::optional<CellPolygon> polygon;
  std::string text;
  bool operator==(const Cell&) const = default;
};

struct TableGrid {
  int n_rows = 0;
  int n_cols = 0;
  std::vector<Cell> cells;  // sorted by (row, col)
  bool operator==(const TableGrid&) const = default;

  bool empty() const { return cells.empty() && n_rows == 0; }
};

// Grid-slot -> cell-index map; -1 marks an uncovered slot.
std::vector<int> occupancy(const TableGrid& grid);

// Empty iff all TableGrid invariants hold; never throws.
std::vector<std::string> validate_grid(const TableGrid& grid);

// ---------------------------------------------------------------------------
// structure-sequence codec

struct SerializedTable {
  std::vector<int> tokens;            // S_START TSR_PROMPT ... S_END
  std::vector<CellSpan> logical;      // aligned to CELL positions
  std::vector<CellPolygon> polygons;  // aligned to CELL positions
};

SerializedTable serialize_grid(const TableGrid& grid);

enum class LayoutError { Overlap, Ragged, Truncation };

std::string layout_error_name(LayoutError e);

struct ReconstructOptions {
  // Replace a colliding span with (1,1) and continue instead of stopping.
  bool recover_overlaps = false;
};

struct ReconstructResult {
  TableGrid grid;
  std::vector<LayoutError> errors;
  bool ok() const { return errors.empty(); }
};

// First-fit placement: each CELL goes to the leftmost free slot of the
// current row, NL advances to the next row. Column count is inferred from
// row content; inconsistent widths are ragged.
ReconstructResult reconstruct_grid(
    const std::vector<int>& tokens, const std::vector<CellSpan>& logical,
    const ReconstructOptions& opts = {},
    const std::vector<CellPolygon>* polygons = nullptr,
    const std::vector<std::string>* texts = nullptr);

// Table-Read sequence: cell text in row-major order, one TEXT_SEP after each
// cell. ranges[i] = [n,m) indexes the text tokens of cell i (empty for empty
// cells).
struct TrSequence {
  std::vector<int> tokens;
  std::vector<std::pair<int, int>> ranges;
};

TrSequence build_tr_sequence(const TableGrid& grid, const Vocab& vocab);

// ---------------------------------------------------------------------------
// HTML-style tree for the tree-edit-distance metrics

struct TreeNode {
  std::string label;
  std::vector<TreeNode> children;
};

int tree_size(const TreeNode& t);

// table -> tr per grid row -> td per anchored cell; td labels carry
// (rowspan,colspan) and, when with_text, the cell text.
TreeNode grid_to_html_tree(const TableGrid& grid, bool with_text);

// ---------------------------------------------------------------------------
// coordinate quantization against the 1,000-entry location vocabulary

int quantize_coord(double x, int dim);
double dequantize_coord(int q, int dim);

CellPolygon quantize_polygon(const std::array<double, 8>& pixel_pts,
                             int image_w, int image_h);
std::array<double, 8> dequantize_polygon(const CellPolygon& poly, int image_w,
                                         int image_h);

}  // namespace tabrec
