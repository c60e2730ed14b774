#pragma once

#include <string>
#include <vector>

#include "tabrec/model.hpp"
#include "tabrec/table.hpp"

namespace tabrec {

// Encoder forward without gradients; returns the embedding values.
struct EncodedImage {
  Array<float> z;  // [N, D]
  int grid_h = 0, grid_w = 0;
};
EncodedImage encode_image_values(const ParamMap<float>& params,
                                 const ModelConfig& cfg,
                                 const std::vector<float>& image, int height,
                                 int width);

struct DecodeOutcome {
  std::vector<int> tokens;  // starts [S_START, TSR_PROMPT]
  bool truncated = false;
  Array<float> hidden;          // [T, D] final-pass last-layer states
  std::vector<int> cell_positions;
  Array<float> cell_states;     // [n_cells, D]
};

// Greedy argmax decoding from the task prompt; stops at S_END or when the
// sequence reaches max_len tokens (flagged as truncated).
DecodeOutcome greedy_decode(const ParamMap<float>& params,
                            const ModelConfig& cfg, const EncodedImage& enc,
                            int max_len, DecodeTrace* trace = nullptr);

struct PredictResult {
  TableGrid grid;
  bool truncated = false;
  std::vector<std::string> layout_errors;
  int cell_tokens = 0;
  std::vector<int> tokens;
};

// Full pipeline: greedy decode, span/location heads at every <C> position,
// first-fit reconstruction with graceful span degradation on overlaps.
PredictResult predict_table(const ParamMap<float>& params,
                            const ModelConfig& cfg,
                            const std::vector<float>& image, int height,
                            int width, int max_len = 0);

// Prediction record mirroring the annotation schema plus outcome flags.
std::string prediction_to_json(const PredictResult& res, int image_w,
                               int image_h, const std::string& image_name);
TableGrid prediction_from_json(const std::string& json_text);

// Guider score maps for one decoded table (inspection / mask dumps).
struct GuiderMaps {
  std::vector<std::vector<float>> row;  // per cell, sigmoid scores over N
  std::vector<std::vector<float>> col;
};
GuiderMaps guider_maps(const ParamMap<float>& params, const ModelConfig& cfg,
                       const EncodedImage& enc,
                       const Array<float>& cell_states);

}  // namespace tabrec
