#include "tabrec/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <tuple>

#include "tabrec/array.hpp"

namespace tabrec {

// ---------------------------------------------------------------------------
// tree edit distance

namespace {

struct FlatTree {
  std::vector<std::string> labels;  // postorder
  std::vector<int> lld;             // leftmost leaf descendant
  std::vector<int> keyroots;
};

void flatten(const TreeNode& n, FlatTree& out, int& lld_of_self) {
  int lld = -1;
  for (const TreeNode& c : n.children) {
    int child_lld = -1;
    flatten(c, out, child_lld);
    if (lld == -1) lld = child_lld;
  }
  out.labels.push_back(n.label);
  const int self = static_cast<int>(out.labels.size()) - 1;
  out.lld.push_back(lld == -1 ? self : lld);
  lld_of_self = out.lld.back();
}

FlatTree flatten(const TreeNode& root) {
  FlatTree t;
  int dummy = -1;
  flatten(root, t, dummy);
  const int n = static_cast<int>(t.labels.size());
  std::vector<bool> is_keyroot(n, true);
  for (int i = 0; i < n; ++i) {
    // i is a keyroot unless some later node shares its leftmost leaf.
    for (int j = i + 1; j < n; ++j)
      if (t.lld[j] == t.lld[i]) {
        is_keyroot[i] = false;
        break;
      }
  }
  for (int i = 0; i < n; ++i)
    if (is_keyroot[i]) t.keyroots.push_back(i);
  return t;
}

}  // namespace

int tree_edit_distance(const TreeNode& a, const TreeNode& b) {
  const FlatTree ta = flatten(a), tb = flatten(b);
  const int na = static_cast<int>(ta.labels.size());
  const int nb = static_cast<int>(tb.labels.size());
  std::vector<std::vector<int>> td(na, std::vector<int>(nb, 0));
  std::vector<std::vector<int>> fd(na + 1, std::vector<int>(nb + 1, 0));

  for (int ia : ta.keyroots) {
    for (int jb : tb.keyroots) {
      const int li = ta.lld[ia], lj = tb.lld[jb];
      const int m = ia - li + 2, n = jb - lj + 2;
      fd[0][0] = 0;
      for (int i = 1; i < m; ++i) fd[i][0] = fd[i - 1][0] + 1;
      for (int j = 1; j < n; ++j) fd[0][j] = fd[0][j - 1] + 1;
      for (int i = 1; i < m; ++i) {
        const int di = li + i - 1;
        for (int j = 1; j < n; ++j) {
          const int dj = lj + j - 1;
          if (ta.lld[di] == li && tb.lld[dj] == lj) {
            const int rel = ta.labels[di] == tb.labels[dj] ? 0 : 1;
            fd[i][j] = std::min({fd[i - 1][j] + 1, fd[i][j - 1] + 1,
                                 fd[i - 1][j - 1] + rel});
            td[di][dj] = fd[i][j];
          } else {
            const int pi = ta.lld[di] - li;
            const int pj = tb.lld[dj] - lj;
            fd[i][j] = std::min({fd[i - 1][j] + 1, fd[i][j - 1] + 1,
                                 fd[pi][pj] + td[di][dj]});
          }
        }
      }
    }
  }
  return td[na - 1][nb - 1];
}

double teds_struct(const TableGrid& a, const TableGrid& b) {
  const TreeNode ta = grid_to_html_tree(a, /*with_text=*/false);
  const TreeNode tb = grid_to_html_tree(b, /*with_text=*/false);
  const int dist = tree_edit_distance(ta, tb);
  const int denom = std::max(tree_size(ta), tree_size(tb));
  if (denom == 0) return 1.0;
  return 1.0 - static_cast<double>(dist) / denom;
}

// ---------------------------------------------------------------------------
// adjacency F1

namespace {

struct Box {
  double x0, y0, x1, y1;
};

Box cell_box(const Cell& c, int image_w, int image_h) {
  const CellPolygon& p = *c.polygon;
  return {dequantize_coord(p.min_x(), image_w),
          dequantize_coord(p.min_y(), image_h),
          dequantize_coord(p.max_x(), image_w),
          dequantize_coord(p.max_y(), image_h)};
}

double box_iou(const Box& a, const Box& b) {
  const double ix0 = std::max(a.x0, b.x0), iy0 = std::max(a.y0, b.y0);
  const double ix1 = std::min(a.x1, b.x1), iy1 = std::min(a.y1, b.y1);
  const double iw = std::max(0.0, ix1 - ix0), ih = std::max(0.0, iy1 - iy0);
  const double inter = iw * ih;
  const double area_a = std::max(0.0, a.x1 - a.x0) * std::max(0.0, a.y1 - a.y0);
  const double area_b = std::max(0.0, b.x1 - b.x0) * std::max(0.0, b.y1 - b.y0);
  const double uni = area_a + area_b - inter;
  return uni <= 0.0 ? 0.0 : inter / uni;
}

struct AdjPair {
  int a, b;    // cell indices, a < reading order of b
  bool horiz;  // true for left-right neighbors
  bool operator<(const AdjPair& o) const {
    return std::tie(a, b, horiz) < std::tie(o.a, o.b, o.horiz);
  }
  bool operator==(const AdjPair& o) const {
    return a == o.a && b == o.b && horiz == o.horiz;
  }
};

// Neighboring pairs over the occupancy map. Cells with empty text are not
// pair members when the grid carries any text at all; grids without a text
// channel (model output) keep every cell.
std::vector<AdjPair> adjacency_pairs(const TableGrid& g,
                                     const std::vector<int>& occ) {
  bool any_text = false;
  for (const Cell& c : g.cells) any_text = any_text || !c.text.empty();
  auto included = [&](int idx) {
    return !any_text || !g.cells[idx].text.empty();
  };
  std::vector<AdjPair> pairs;
  for (int ci = 0; ci < static_cast<int>(g.cells.size()); ++ci) {
    const Cell& c = g.cells[ci];
    if (!included(ci)) continue;
    const int r1 = c.row + c.span.rows;  // first row below
    const int c1 = c.col + c.span.cols;  // first column to the right
    if (c1 < g.n_cols)
      for (int r = c.row; r < std::min(r1, g.n_rows); ++r) {
        const int nb = occ[static_cast<size_t>(r) * g.n_cols + c1];
        if (nb >= 0 && nb != ci && included(nb))
          pairs.push_back({ci, nb, true});
      }
    if (r1 < g.n_rows)
      for (int k = c.col; k < std::min(c1, g.n_cols); ++k) {
        const int nb = occ[static_cast<size_t>(r1) * g.n_cols + k];
        if (nb >= 0 && nb != ci && included(nb))
          pairs.push_back({ci, nb, false});
      }
  }
  std::sort(pairs.begin(), pairs.end());
  pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
  return pairs;
}

}  // namespace

AdjacencyResult adjacency_f1(const TableGrid& gt, const TableGrid& pred,
                             double iou_threshold, int image_w, int image_h) {
  for (const Cell& c : gt.cells)
    if (!c.polygon) throw MissingPolygons("ground-truth cell has no polygon");
  for (const Cell& c : pred.cells)
    if (!c.polygon) throw MissingPolygons("predicted cell has no polygon");

  const std::vector<int> gt_occ = occupancy(gt);
  const std::vector<int> pred_occ = occupancy(pred);
  const std::vector<AdjPair> gt_pairs = adjacency_pairs(gt, gt_occ);
  const std::vector<AdjPair> pred_pairs = adjacency_pairs(pred, pred_occ);

  // Greedy matching by descending IoU, ties in reading order.
  struct Cand {
    double iou;
    int g, p;
  };
  std::vector<Cand> cands;
  for (int gi = 0; gi < static_cast<int>(gt.cells.size()); ++gi) {
    const Box gb = cell_box(gt.cells[gi], image_w, image_h);
    for (int pi = 0; pi < static_cast<int>(pred.cells.size()); ++pi) {
      const double iou = box_iou(gb, cell_box(pred.cells[pi], image_w, image_h));
      if (iou >= iou_threshold) cands.push_back({iou, gi, pi});
    }
  }
  std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.iou != b.iou) return a.iou > b.iou;
    return std::tie(a.g, a.p) < std::tie(b.g, b.p);
  });
  std::vector<int> gt_match(gt.cells.size(), -1), pred_used(pred.cells.size(), 0);
  for (const Cand& c : cands) {
    if (gt_match[c.g] != -1 || pred_used[c.p]) continue;
    gt_match[c.g] = c.p;
    pred_used[c.p] = 1;
  }

  std::vector<AdjPair> pred_set = pred_pairs;  // sorted already
  int tp = 0;
  for (const AdjPair& gp : gt_pairs) {
    const int ma = gt_match[gp.a], mb = gt_match[gp.b];
    if (ma < 0 || mb < 0) continue;
    AdjPair want{std::min(ma, mb), std::max(ma, mb), gp.horiz};
    // pairs are stored in discovery order (a anchored earlier); check both
    AdjPair alt{want.b, want.a, gp.horiz};
    if (std::binary_search(pred_set.begin(), pred_set.end(), want) ||
        std::binary_search(pred_set.begin(), pred_set.end(), alt))
      ++tp;
  }

  AdjacencyResult res;
  res.true_positives = tp;
  res.gt_pairs = static_cast<int>(gt_pairs.size());
  res.pred_pairs = static_cast<int>(pred_pairs.size());
  res.precision = res.pred_pairs ? static_cast<double>(tp) / res.pred_pairs : 0;
  res.recall = res.gt_pairs ? static_cast<double>(tp) / res.gt_pairs : 0;
  res.f1 = (res.precision + res.recall) > 0
               ? 2 * res.precision * res.recall / (res.precision + res.recall)
               : 0;
  return res;
}

// ---------------------------------------------------------------------------
// GriTS

namespace {

struct SlotInfo {
  int span_r = 0, span_c = 0;  // covering cell's span
  int off_r = 0, off_c = 0;    // slot offset inside the covering cell
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  bool covered = false, has_box = false;
};

std::vector<SlotInfo> matrixize(const TableGrid& g) {
  std::vector<SlotInfo> m(static_cast<size_t>(g.n_rows) * g.n_cols);
  const std::vector<int> occ = occupancy(g);
  for (int r = 0; r < g.n_rows; ++r)
    for (int c = 0; c < g.n_cols; ++c) {
      const size_t idx = static_cast<size_t>(r) * g.n_cols + c;
      const int ci = occ[idx];
      if (ci < 0) continue;
      const Cell& cell = g.cells[ci];
      SlotInfo& s = m[idx];
      s.covered = true;
      s.span_r = cell.span.rows;
      s.span_c = cell.span.cols;
      s.off_r = r - cell.row;
      s.off_c = c - cell.col;
      if (cell.polygon) {
        s.has_box = true;
        s.x0 = cell.polygon->min_x();
        s.y0 = cell.polygon->min_y();
        s.x1 = cell.polygon->max_x();
        s.y1 = cell.polygon->max_y();
      }
    }
  return m;
}

double slot_sim(const SlotInfo& a, const SlotInfo& b, GritsFlavor flavor) {
  if (!a.covered || !b.covered) return 0.0;
  if (flavor == GritsFlavor::Top) {
    return (a.span_r == b.span_r && a.span_c == b.span_c &&
            a.off_r == b.off_r && a.off_c == b.off_c)
               ? 1.0
               : 0.0;
  }
  if (!a.has_box || !b.has_box) return 0.0;
  return box_iou({a.x0, a.y0, a.x1, a.y1}, {b.x0, b.y0, b.x1, b.y1});
}

// Needleman-Wunsch style best monotone alignment score.
double align_dp(int na, int nb,
                const std::function<double(int, int)>& pair_score,
                std::vector<int>* sel_a = nullptr,
                std::vector<int>* sel_b = nullptr) {
  std::vector<std::vector<double>> dp(na + 1, std::vector<double>(nb + 1, 0));
  for (int i = 1; i <= na; ++i)
    for (int j = 1; j <= nb; ++j)
      dp[i][j] = std::max({dp[i - 1][j], dp[i][j - 1],
                           dp[i - 1][j - 1] + pair_score(i - 1, j - 1)});
  if (sel_a && sel_b) {
    int i = na, j = nb;
    while (i > 0 && j > 0) {
      if (dp[i][j] == dp[i - 1][j - 1] + pair_score(i - 1, j - 1) &&
          pair_score(i - 1, j - 1) > 0) {
        sel_a->push_back(i - 1);
        sel_b->push_back(j - 1);
        --i;
        --j;
      } else if (dp[i][j] == dp[i - 1][j]) {
        --i;
      } else if (dp[i][j] == dp[i][j - 1]) {
        --j;
      } else {
        sel_a->push_back(i - 1);
        sel_b->push_back(j - 1);
        --i;
        --j;
      }
    }
    std::reverse(sel_a->begin(), sel_a->end());
    std::reverse(sel_b->begin(), sel_b->end());
  }
  return dp[na][nb];
}

double column_dp_for_rows(const std::vector<SlotInfo>& ma, int ca,
                          const std::vector<SlotInfo>& mb, int cb,
                          const std::vector<int>& rows_a,
                          const std::vector<int>& rows_b,
                          GritsFlavor flavor) {
  auto col_pair = [&](int i, int j) {
    double s = 0;
    for (size_t r = 0; r < rows_a.size(); ++r)
      s += slot_sim(ma[static_cast<size_t>(rows_a[r]) * ca + i],
                    mb[static_cast<size_t>(rows_b[r]) * cb + j], flavor);
    return s;
  };
  return align_dp(ca, cb, col_pair);
}

}  // namespace

GritsResult grits(const TableGrid& gt, const TableGrid& pred,
                  GritsFlavor flavor, GritsMode mode) {
  const int ra = gt.n_rows, ca = gt.n_cols;
  const int rb = pred.n_rows, cb = pred.n_cols;
  const double denom =
      static_cast<double>(ra) * ca + static_cast<double>(rb) * cb;
  if (denom == 0) return {1.0, false};
  if (ra == 0 || rb == 0) return {0.0, false};

  const bool small = ra <= 6 && ca <= 6 && rb <= 6 && cb <= 6;
  if (mode == GritsMode::Exact && !small)
    throw GridTooLarge("exact mode is limited to 6x6 grids");
  const bool exact = mode == GritsMode::Exact ||
                     (mode == GritsMode::Auto && small);

  const std::vector<SlotInfo> ma = matrixize(gt);
  const std::vector<SlotInfo> mb = matrixize(pred);

  GritsResult res;
  if (exact) {
    // All row-subsequence pairs of equal length; columns aligned optimally
    // per pair, which is exact because column choice is shared across rows.
    double best = 0;
    std::vector<std::vector<std::vector<int>>> by_count_a(ra + 1),
        by_count_b(rb + 1);
    for (int m2 = 1; m2 < (1 << ra); ++m2) {
      std::vector<int> rows;
      for (int r = 0; r < ra; ++r)
        if (m2 & (1 << r)) rows.push_back(r);
      by_count_a[rows.size()].push_back(std::move(rows));
    }
    for (int m2 = 1; m2 < (1 << rb); ++m2) {
      std::vector<int> rows;
      for (int r = 0; r < rb; ++r)
        if (m2 & (1 << r)) rows.push_back(r);
      by_count_b[rows.size()].push_back(std::move(rows));
    }
    for (int k = 1; k <= std::min(ra, rb); ++k)
      for (const auto& rows_a : by_count_a[k])
        for (const auto& rows_b : by_count_b[k])
          best = std::max(best, column_dp_for_rows(ma, ca, mb, cb, rows_a,
                                                   rows_b, flavor));
    res.score = 2.0 * best / denom;
    res.heuristic = false;
  } else {
    // Factored: align rows against the shared column prefix, then align
    // columns for the chosen rows. A feasible (not necessarily optimal)
    // subgrid alignment, so it lower-bounds the exact score.
    const int shared = std::min(ca, cb);
    auto row_pair = [&](int i, int j) {
      double s = 0;
      for (int c = 0; c < shared; ++c)
        s += slot_sim(ma[static_cast<size_t>(i) * ca + c],
                      mb[static_cast<size_t>(j) * cb + c], flavor);
      return s;
    };
    std::vector<int> rows_a, rows_b;
    align_dp(ra, rb, row_pair, &rows_a, &rows_b);
    double best = 0;
    if (!rows_a.empty())
      best = column_dp_for_rows(ma, ca, mb, cb, rows_a, rows_b, flavor);
    res.score = 2.0 * best / denom;
    res.heuristic = true;
  }
  return res;
}

}  // namespace tabrec
