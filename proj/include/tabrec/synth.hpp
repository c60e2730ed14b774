#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tabrec/rng.hpp"
#include "tabrec/table.hpp"

namespace tabrec {

struct CellTooSmall : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SynthConfig {
  uint64_t seed = 1;
  int rows_min = 2, rows_max = 5;  // rows_range
  int cols_min = 2, cols_max = 5;  // cols_range
  double merge_probability = 0.15;
  double wireless_probability = 0.2;
  double descriptive_probability = 0.25;
  double empty_probability = 0.08;
  int image_size = 256;     // square raster
  int feature_stride = 8;   // mask grid resolution, matches the encoder
  std::string charset = kDefaultCharset;

  void validate() const;
};

struct SynthSample {
  std::vector<float> image;  // image_size^2, 1.0 = white
  int width = 0, height = 0;
  TableGrid grid;        // final annotation (text as drawn)
  SerializedTable tsr;   // structure tokens + aligned spans/polygons
  TrSequence tr;         // table-read tokens + per-cell ranges
  int grid_h = 0, grid_w = 0;                  // feature grid dims
  std::vector<std::vector<uint8_t>> row_masks; // per cell, grid_h*grid_w
  std::vector<std::vector<uint8_t>> col_masks;
};

// Uniform grid dims, rectangular merges, text assignment. Always passes
// validate_grid.
TableGrid generate_layout(Rng& rng, const SynthConfig& cfg);

// Renders separators and glyphs, records quantized polygons, builds the
// guider masks and the TR sequence. Throws CellTooSmall when a non-empty
// cell cannot fit a single glyph.
SynthSample rasterize_sample(const TableGrid& grid, const SynthConfig& cfg,
                             Rng& rng);

// Layout + raster with bounded retries on CellTooSmall.
SynthSample make_sample(Rng& rng, const SynthConfig& cfg);

struct DatasetManifest {
  int count = 0;
  SynthConfig config;
};

// Writes img_%06d.pgm, samples.jsonl, aux.jsonl and manifest.json.
DatasetManifest write_dataset(const std::vector<SynthSample>& samples,
                              const std::string& directory,
                              const SynthConfig& cfg);

std::vector<SynthSample> load_dataset(const std::string& directory);

// 5x7 glyph for a charset character; 7 bytes, low 5 bits used.
const uint8_t* glyph5x7(char c);

}  // namespace tabrec
