#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tabrec/graph.hpp"
#include "tabrec/optim.hpp"
#include "tabrec/synth.hpp"
#include "tabrec/table.hpp"

namespace tabrec {

struct ModelConfig {
  int d_model = 128;
  int n_enc_layers = 2;
  int n_dec_layers = 2;
  int n_heads = 4;
  int patch_size = 8;  // encoder downsampling factor
  int d_ff = 256;
  int max_decode_len = 256;
  bool use_ul = true;
  bool use_vg = true;
  bool use_lg = true;
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
  // Joint training through both branches of the language alignment; set to
  // stop gradients on the table-read side (distillation style).
  bool lang_stop_grad = false;
  std::string charset = kDefaultCharset;

  int head_dim() const { return d_model / n_heads; }
  int vocab_size() const {
    Vocab v;
    v.charset = charset;
    return v.size();
  }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

ParamMap<float> init_params(const ModelConfig& cfg, uint64_t seed);

// Lazily materializes parameters as graph leaves; each parameter becomes a
// single node no matter how many times it is used.
template <typename T>
class GraphParams {
 public:
  GraphParams(Graph<T>& g, const ParamMap<T>& src, bool trainable)
      : g_(&g), src_(&src), trainable_(trainable) {}

  Tensor<T> operator()(const std::string& name) {
    auto it = cache_.find(name);
    if (it != cache_.end()) return it->second;
    auto pit = src_->find(name);
    if (pit == src_->end())
      throw ShapeMismatch("unknown parameter: " + name);
    Array<T> a(pit->second.shape, pit->second.w);
    Tensor<T> t = leaf(*g_, std::move(a), trainable_);
    cache_.emplace(name, t);
    return t;
  }

  std::map<std::string, std::vector<T>> collect_grads() const {
    std::map<std::string, std::vector<T>> out;
    for (const auto& [name, t] : cache_) out[name] = t.grad().v;
    return out;
  }

 private:
  Graph<T>* g_;
  const ParamMap<T>* src_;
  bool trainable_;
  std::map<std::string, Tensor<T>> cache_;
};

// ---------------------------------------------------------------------------
// forward pieces

template <typename T>
struct VisionEmbedding {
  Tensor<T> z;  // [N, D]
  int grid_h = 0;
  int grid_w = 0;
};

struct DecodeTrace {
  // mean-over-heads cross-attention of the last decoder layer, [T, N]
  Array<float> cross_attn;
};

template <typename T>
VisionEmbedding<T> encode_image(Graph<T>& g, GraphParams<T>& p,
                                const std::vector<T>& image, int height,
                                int width, const ModelConfig& cfg,
                                bool add_positional = true);

template <typename T>
struct DecoderOutput {
  Tensor<T> hidden;  // [T, D] last-layer states
  Tensor<T> logits;  // [T, vocab]
};

template <typename T>
DecoderOutput<T> decode_sequence(Graph<T>& g, GraphParams<T>& p, Tensor<T> z,
                                 const std::vector<int>& input_tokens,
                                 const ModelConfig& cfg,
                                 DecodeTrace* trace = nullptr);

// Physical head: expected location per coordinate, each in [0,999].
template <typename T>
Tensor<T> expected_location(Graph<T>& g, GraphParams<T>& p,
                            Tensor<T> cell_states);  // -> [n_cells, 8]

// Logical head scores against the location vocabulary (no softmax).
template <typename T>
struct SpanScores {
  Tensor<T> row;  // [n_cells, 1000]
  Tensor<T> col;
};
template <typename T>
SpanScores<T> span_scores(Graph<T>& g, GraphParams<T>& p,
                          Tensor<T> cell_states);

CellSpan span_from_scores(const std::vector<float>& row_scores,
                          const std::vector<float>& col_scores);

// Vision guider scores against the visual embedding (raw dot products).
template <typename T>
struct GuiderScores {
  Tensor<T> row;  // [n_cells, N]
  Tensor<T> col;
};
template <typename T>
GuiderScores<T> vision_guider(Graph<T>& g, GraphParams<T>& p,
                              Tensor<T> cell_states, Tensor<T> z);

// ---------------------------------------------------------------------------
// training batch and the five losses

struct TrainSample {
  std::vector<float> image;
  int width = 0, height = 0;
  std::vector<int> tsr_tokens;
  std::vector<CellSpan> spans;
  std::vector<CellPolygon> polys;
  std::vector<int> tr_tokens;
  std::vector<std::pair<int, int>> tr_ranges;
  std::vector<std::vector<uint8_t>> row_masks, col_masks;
  int grid_h = 0, grid_w = 0;
};

TrainSample to_train_sample(const SynthSample& s);

struct Batch {
  std::vector<TrainSample> items;  // sequences padded to shared lengths
  int tsr_len = 0;
  int tr_len = 0;
};

struct LossValues {
  double lm = 0, poly = 0, span = 0, vis = 0, lang = 0, total = 0;
  bool has_vis = false, has_lang = false;
  std::array<double, 5> sigma2{1, 1, 1, 1, 1};
  int active_terms() const { return 3 + (has_vis ? 1 : 0) + (has_lang ? 1 : 0); }
};

template <typename T>
struct LossTensors {
  Tensor<T> lm, poly, span, total;
  std::optional<Tensor<T>> vis, lang;
  LossValues values() const;
};

// Uncertainty-weighted combination: sum_k L_k/(2*sigma_k^2)+log(1+sigma_k^2)
// with sigma_k^2 = exp(s_k); plain sum when use_ul is off. Inactive terms
// (vis/lang) contribute nothing, including their sigma regularizer.
template <typename T>
Tensor<T> total_loss(Graph<T>& g, GraphParams<T>& p,
                     const std::vector<Tensor<T>>& active_losses,
                     const std::vector<int>& sigma_indices, bool use_ul);

// Full multi-task objective over one batch (teacher-forced).
template <typename T>
LossTensors<T> model_losses(Graph<T>& g, GraphParams<T>& p, const Batch& batch,
                            const ModelConfig& cfg);

// Finite-difference check of the full multi-task objective on a tiny model
// (64-bit arithmetic, random coordinate subset plus all uncertainty weights).
struct GradCheckResult;
GradCheckResult model_gradcheck(uint64_t seed, int max_coords);

// ---------------------------------------------------------------------------
// checkpoint container ("UTNF")

constexpr uint32_t kCheckpointVersion = 1;

struct TrainerState {
  OptimizerState<float> opt;
  int64_t step = 0;
  std::string data_rng;  // serialized shuffle stream
};

void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     const ParamMap<float>& params,
                     const TrainerState* trainer = nullptr);

struct Checkpoint {
  ModelConfig config;
  ParamMap<float> params;
  std::optional<TrainerState> trainer;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace tabrec
