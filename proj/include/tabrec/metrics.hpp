#pragma once

#include <string>
#include <vector>

#include "tabrec/table.hpp"

namespace tabrec {

// Ordered labeled tree edit distance with unit-cost insert/delete/relabel
// (keyroot dynamic program).
int tree_edit_distance(const TreeNode& a, const TreeNode& b);

// 1 - dist/max(|Ta|,|Tb|) over the HTML trees with text ignored.
double teds_struct(const TableGrid& a, const TableGrid& b);

struct AdjacencyResult {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  int true_positives = 0;
  int gt_pairs = 0;
  int pred_pairs = 0;
};

// F-score over pairs of neighboring cells; ground-truth cells are matched to
// predicted cells greedily by IoU of dequantized bounding boxes.
AdjacencyResult adjacency_f1(const TableGrid& gt, const TableGrid& pred,
                             double iou_threshold = 0.6, int image_w = 1000,
                             int image_h = 1000);

enum class GritsFlavor { Top, Loc };
enum class GritsMode { Auto, Exact, Heuristic };

struct GritsResult {
  double score = 0;
  bool heuristic = false;
};

// Grid-similarity F-score over the best equal-shape subgrid alignment.
// Exact search enumerates row subsequence pairs (grids up to 6x6); larger
// grids fall back to a factored row-then-column alignment, which is a
// restriction of the full search and therefore a lower bound.
GritsResult grits(const TableGrid& gt, const TableGrid& pred,
                  GritsFlavor flavor, GritsMode mode = GritsMode::Auto);

}  // namespace tabrec
