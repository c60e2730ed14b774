#include "tabrec/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "tabrec/gradcheck.hpp"
#include "tabrec/losses.hpp"

namespace tabrec {

void ModelConfig::validate() const {
  if (d_model <= 0 || n_heads <= 0 || d_model % n_heads != 0)
    throw BadDims("d_model must be a positive multiple of n_heads");
  if (patch_size <= 0 || n_enc_layers <= 0 || n_dec_layers <= 0 || d_ff <= 0)
    throw BadDims("model dimensions must be positive");
  if (max_decode_len < 4) throw BadDims("max_decode_len too small");
}

// ---------------------------------------------------------------------------
// initialization

ParamMap<float> init_params(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ParamMap<float> p;
  auto weight = [&](const std::string& name, std::vector<int> shape,
                    double std_dev) {
    Param<float> par;
    par.shape = std::move(shape);
    par.w.resize(static_cast<size_t>(Array<float>::numel_of(par.shape)));
    for (float& x : par.w) x = static_cast<float>(rng.normal() * std_dev);
    p[name] = std::move(par);
  };
  auto fill = [&](const std::string& name, std::vector<int> shape,
                  float value) {
    Param<float> par;
    par.shape = std::move(shape);
    par.w.assign(static_cast<size_t>(Array<float>::numel_of(par.shape)),
                 value);
    p[name] = std::move(par);
  };
  const int d = cfg.d_model, f = cfg.d_ff, v = cfg.vocab_size();
  const int ps = cfg.patch_size;

  weight("enc.patch.w", {ps * ps, d}, 0.02);
  fill("enc.patch.b", {d}, 0.0f);
  auto block_common = [&](const std::string& pre) {
    weight(pre + ".attn.q.w", {d, d}, 0.02);
    fill(pre + ".attn.q.b", {d}, 0.0f);
    weight(pre + ".attn.k.w", {d, d}, 0.02);
    fill(pre + ".attn.k.b", {d}, 0.0f);
    weight(pre + ".attn.v.w", {d, d}, 0.02);
    fill(pre + ".attn.v.b", {d}, 0.0f);
    weight(pre + ".attn.o.w", {d, d}, 0.02);
    fill(pre + ".attn.o.b", {d}, 0.0f);
    fill(pre + ".ln1.g", {d}, 1.0f);
    fill(pre + ".ln1.b", {d}, 0.0f);
    weight(pre + ".ffn.w1", {d, f}, 0.02);
    fill(pre + ".ffn.b1", {f}, 0.0f);
    weight(pre + ".ffn.w2", {f, d}, 0.02);
    fill(pre + ".ffn.b2", {d}, 0.0f);
  };
  for (int l = 0; l < cfg.n_enc_layers; ++l) {
    const std::string pre = "enc" + std::to_string(l);
    block_common(pre);
    fill(pre + ".ln2.g", {d}, 1.0f);
    fill(pre + ".ln2.b", {d}, 0.0f);
  }
  fill("enc.lnf.g", {d}, 1.0f);
  fill("enc.lnf.b", {d}, 0.0f);

  weight("dec.embed", {v, d}, 0.02);
  for (int l = 0; l < cfg.n_dec_layers; ++l) {
    const std::string pre = "dec" + std::to_string(l);
    block_common(pre);
    weight(pre + ".cross.q.w", {d, d}, 0.02);
    fill(pre + ".cross.q.b", {d}, 0.0f);
    weight(pre + ".cross.k.w", {d, d}, 0.02);
    fill(pre + ".cross.k.b", {d}, 0.0f);
    weight(pre + ".cross.v.w", {d, d}, 0.02);
    fill(pre + ".cross.v.b", {d}, 0.0f);
    weight(pre + ".cross.o.w", {d, d}, 0.02);
    fill(pre + ".cross.o.b", {d}, 0.0f);
    fill(pre + ".ln2.g", {d}, 1.0f);
    fill(pre + ".ln2.b", {d}, 0.0f);
    fill(pre + ".ln3.g", {d}, 1.0f);
    fill(pre + ".ln3.b", {d}, 0.0f);
  }
  fill("dec.lnf.g", {d}, 1.0f);
  fill("dec.lnf.b", {d}, 0.0f);

  weight("out.w", {d, v}, 0.02);
  fill("out.b", {v}, 0.0f);

  for (int j = 0; j < 8; ++j) {
    weight("head.poly" + std::to_string(j) + ".w", {d, d}, 0.02);
    fill("head.poly" + std::to_string(j) + ".b", {d}, 0.0f);
  }
  weight("head.row_span.w", {d, d}, 0.02);
  fill("head.row_span.b", {d}, 0.0f);
  weight("head.col_span.w", {d, d}, 0.02);
  fill("head.col_span.b", {d}, 0.0f);
  weight("head.vg_row.w", {d, d}, 0.02);
  fill("head.vg_row.b", {d}, 0.0f);
  weight("head.vg_col.w", {d, d}, 0.02);
  fill("head.vg_col.b", {d}, 0.0f);
  weight("head.lang.w", {d, d}, 0.02);
  fill("head.lang.b", {d}, 0.0f);

  // s_k with sigma_k^2 = exp(s_k); starts at sigma = 1.
  fill("uncert.s", {5, 1}, 0.0f);
  return p;
}

// ---------------------------------------------------------------------------
// positional encodings

namespace {

template <typename T>
void write_pe1d(T* dst, int pos, int dim) {
  for (int i = 0; i < dim / 2; ++i) {
    const double freq =
        std::pow(10000.0, -2.0 * static_cast<double>(i) / dim);
    dst[2 * i] = static_cast<T>(std::sin(pos * freq));
    dst[2 * i + 1] = static_cast<T>(std::cos(pos * freq));
  }
}

template <typename T>
Array<T> pos_encoding_1d(int length, int dim) {
  Array<T> pe({length, dim});
  for (int t = 0; t < length; ++t)
    write_pe1d(pe.data() + static_cast<size_t>(t) * dim, t, dim);
  return pe;
}

// Row index in the first half of the channels, column index in the second.
template <typename T>
Array<T> pos_encoding_2d(int grid_h, int grid_w, int dim) {
  Array<T> pe({grid_h * grid_w, dim});
  const int half = dim / 2;
  for (int r = 0; r < grid_h; ++r)
    for (int c = 0; c < grid_w; ++c) {
      T* dst = pe.data() + (static_cast<size_t>(r) * grid_w + c) * dim;
      write_pe1d(dst, r, half);
      write_pe1d(dst + half, c, half);
    }
  return pe;
}

template <typename T>
Tensor<T> linear(Graph<T>&, GraphParams<T>& p, Tensor<T> x,
                 const std::string& prefix) {
  return add(matmul(x, p(prefix + ".w")), p(prefix + ".b"));
}

constexpr double kMaskValue = -1e30;

template <typename T>
Array<T> causal_mask(int len) {
  Array<T> m({len, len});
  for (int i = 0; i < len; ++i)
    for (int j = i + 1; j < len; ++j)
      m(i, j) = static_cast<T>(kMaskValue);
  return m;
}

template <typename T>
Tensor<T> multihead_attention(Graph<T>& g, GraphParams<T>& p, Tensor<T> q_in,
                              Tensor<T> kv_in, const std::string& prefix,
                              const ModelConfig& cfg,
                              const Array<T>* add_mask,
                              Array<float>* trace_probs) {
  const int dh = cfg.head_dim();
  Tensor<T> q = linear(g, p, q_in, prefix + ".q");
  Tensor<T> k = linear(g, p, kv_in, prefix + ".k");
  Tensor<T> v = linear(g, p, kv_in, prefix + ".v");
  std::vector<Tensor<T>> heads;
  for (int h = 0; h < cfg.n_heads; ++h) {
    Tensor<T> qh = slice_cols(q, h * dh, (h + 1) * dh);
    Tensor<T> kh = slice_cols(k, h * dh, (h + 1) * dh);
    Tensor<T> vh = slice_cols(v, h * dh, (h + 1) * dh);
    Tensor<T> scores =
        scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(double(dh)));
    if (add_mask) scores = add(scores, constant(g, *add_mask));
    Tensor<T> probs = softmax_rows(scores);
    if (trace_probs) {
      const Array<T>& pv = probs.val();
      if (trace_probs->v.empty()) *trace_probs = Array<float>(pv.shape);
      for (size_t i = 0; i < pv.v.size(); ++i)
        trace_probs->v[i] +=
            static_cast<float>(pv.v[i]) / static_cast<float>(cfg.n_heads);
    }
    heads.push_back(matmul(probs, vh));
  }
  return linear(g, p, concat_cols(heads), prefix + ".o");
}

template <typename T>
Tensor<T> ffn(Graph<T>& g, GraphParams<T>& p, Tensor<T> x,
              const std::string& pre) {
  Tensor<T> h = gelu(add(matmul(x, p(pre + ".ffn.w1")), p(pre + ".ffn.b1")));
  return add(matmul(h, p(pre + ".ffn.w2")), p(pre + ".ffn.b2"));
}

template <typename T>
Tensor<T> ln(Graph<T>& g, GraphParams<T>& p, Tensor<T> x,
             const std::string& name) {
  return layer_norm_rows(x, p(name + ".g"), p(name + ".b"));
}

}  // namespace

// ---------------------------------------------------------------------------
// encoder / decoder

template <typename T>
VisionEmbedding<T> encode_image(Graph<T>& g, GraphParams<T>& p,
                                const std::vector<T>& image, int height,
                                int width, const ModelConfig& cfg,
                                bool add_positional) {
  cfg.validate();
  const int ds = cfg.patch_size;
  if (height % ds != 0 || width % ds != 0)
    throw BadDims("image " + std::to_string(width) + "x" +
                  std::to_string(height) +
                  " not divisible by patch size " + std::to_string(ds));
  if (static_cast<int64_t>(image.size()) !=
      static_cast<int64_t>(height) * width)
    throw BadDims("image buffer does not match dimensions");
  const int gh = height / ds, gw = width / ds;
  const int n = gh * gw;

  Array<T> patches({n, ds * ds});
  for (int gy = 0; gy < gh; ++gy)
    for (int gx = 0; gx < gw; ++gx) {
      T* row = patches.data() + (static_cast<size_t>(gy) * gw + gx) * ds * ds;
      for (int py = 0; py < ds; ++py)
        for (int px = 0; px < ds; ++px)
          row[py * ds + px] =
              image[static_cast<size_t>(gy * ds + py) * width + gx * ds + px];
    }

  Tensor<T> x =
      add(matmul(constant(g, std::move(patches)), p("enc.patch.w")),
          p("enc.patch.b"));
  if (add_positional)
    x = add(x, constant(g, pos_encoding_2d<T>(gh, gw, cfg.d_model)));

  for (int l = 0; l < cfg.n_enc_layers; ++l) {
    const std::string pre = "enc" + std::to_string(l);
    Tensor<T> normed = ln(g, p, x, pre + ".ln1");
    x = add(x, multihead_attention(g, p, normed, normed, pre + ".attn", cfg,
                                   static_cast<const Array<T>*>(nullptr),
                                   nullptr));
    x = add(x, ffn(g, p, ln(g, p, x, pre + ".ln2"), pre));
  }
  x = ln(g, p, x, "enc.lnf");
  return {x, gh, gw};
}

template <typename T>
DecoderOutput<T> decode_sequence(Graph<T>& g, GraphParams<T>& p, Tensor<T> z,
                                 const std::vector<int>& input_tokens,
                                 const ModelConfig& cfg, DecodeTrace* trace) {
  const int len = static_cast<int>(input_tokens.size());
  if (len == 0) throw ShapeMismatch("decode_sequence: empty input");
  if (len > cfg.max_decode_len)
    throw SequenceTooLong("sequence length " + std::to_string(len) +
                          " exceeds max_decode_len " +
                          std::to_string(cfg.max_decode_len));

  Tensor<T> x = add(embed(p("dec.embed"), input_tokens),
                    constant(g, pos_encoding_1d<T>(len, cfg.d_model)));
  const Array<T> mask = causal_mask<T>(len);

  for (int l = 0; l < cfg.n_dec_layers; ++l) {
    const std::string pre = "dec" + std::to_string(l);
    Tensor<T> normed = ln(g, p, x, pre + ".ln1");
    x = add(x, multihead_attention(g, p, normed, normed, pre + ".attn", cfg,
                                   &mask, nullptr));
    Array<float>* tp =
        (trace && l == cfg.n_dec_layers - 1) ? &trace->cross_attn : nullptr;
    x = add(x, multihead_attention(g, p, ln(g, p, x, pre + ".ln2"), z,
                                   pre + ".cross", cfg,
                                   static_cast<const Array<T>*>(nullptr), tp));
    x = add(x, ffn(g, p, ln(g, p, x, pre + ".ln3"), pre));
  }
  x = ln(g, p, x, "dec.lnf");
  Tensor<T> logits = linear(g, p, x, "out");
  return {x, logits};
}

// ---------------------------------------------------------------------------
// heads

namespace {

template <typename T>
Tensor<T> location_table(Graph<T>& g, GraphParams<T>& p) {
  (void)g;
  return slice_rows(p("dec.embed"), kLocBase, kLocBase + kLocCount);
}

template <typename T>
Array<T> index_column() {
  Array<T> idx({kLocCount, 1});
  for (int i = 0; i < kLocCount; ++i) idx(i, 0) = static_cast<T>(i);
  return idx;
}

}  // namespace

template <typename T>
Tensor<T> expected_location(Graph<T>& g, GraphParams<T>& p,
                            Tensor<T> cell_states) {
  Tensor<T> loc_t = transpose(location_table(g, p));
  Tensor<T> idx = constant(g, index_column<T>());
  std::vector<Tensor<T>> coords;
  for (int j = 0; j < 8; ++j) {
    Tensor<T> q =
        linear(g, p, cell_states, "head.poly" + std::to_string(j));
    Tensor<T> probs = softmax_rows(matmul(q, loc_t));
    coords.push_back(matmul(probs, idx));  // [n_cells, 1] expectation
  }
  return concat_cols(coords);
}

template <typename T>
SpanScores<T> span_scores(Graph<T>& g, GraphParams<T>& p,
                          Tensor<T> cell_states) {
  Tensor<T> loc_t = transpose(location_table(g, p));
  return {matmul(linear(g, p, cell_states, "head.row_span"), loc_t),
          matmul(linear(g, p, cell_states, "head.col_span"), loc_t)};
}

CellSpan span_from_scores(const std::vector<float>& row_scores,
                          const std::vector<float>& col_scores) {
  auto argmax = [](const std::vector<float>& v) {
    int best = 0;
    for (size_t i = 1; i < v.size(); ++i)
      if (v[i] > v[best]) best = static_cast<int>(i);  // ties: lowest index
    return best;
  };
  CellSpan s;
  s.rows = std::max(1, argmax(row_scores));  // index 0 clamps to span 1
  s.cols = std::max(1, argmax(col_scores));
  return s;
}

template <typename T>
GuiderScores<T> vision_guider(Graph<T>& g, GraphParams<T>& p,
                              Tensor<T> cell_states, Tensor<T> z) {
  Tensor<T> zt = transpose(z);
  return {matmul(linear(g, p, cell_states, "head.vg_row"), zt),
          matmul(linear(g, p, cell_states, "head.vg_col"), zt)};
}

// ---------------------------------------------------------------------------
// batch losses

TrainSample to_train_sample(const SynthSample& s) {
  TrainSample t;
  t.image = s.image;
  t.width = s.width;
  t.height = s.height;
  t.tsr_tokens = s.tsr.tokens;
  t.spans = s.tsr.logical;
  t.polys = s.tsr.polygons;
  t.tr_tokens = s.tr.tokens;
  t.tr_ranges = s.tr.ranges;
  t.row_masks = s.row_masks;
  t.col_masks = s.col_masks;
  t.grid_h = s.grid_h;
  t.grid_w = s.grid_w;
  return t;
}

template <typename T>
LossValues LossTensors<T>::values() const {
  LossValues v;
  v.lm = static_cast<double>(lm.item());
  v.poly = static_cast<double>(poly.item());
  v.span = static_cast<double>(span.item());
  if (vis) {
    v.vis = static_cast<double>(vis->item());
    v.has_vis = true;
  }
  if (lang) {
    v.lang = static_cast<double>(lang->item());
    v.has_lang = true;
  }
  v.total = static_cast<double>(total.item());
  return v;
}

template <typename T>
Tensor<T> total_loss(Graph<T>& g, GraphParams<T>& p,
                     const std::vector<Tensor<T>>& active_losses,
                     const std::vector<int>& sigma_indices, bool use_ul) {
  if (active_losses.empty())
    throw ShapeMismatch("total_loss: no active terms");
  std::optional<Tensor<T>> total;
  for (size_t k = 0; k < active_losses.size(); ++k) {
    Tensor<T> term = active_losses[k];
    if (use_ul) {
      Tensor<T> sk =
          slice_rows(p("uncert.s"), sigma_indices[k], sigma_indices[k] + 1);
      // L/(2 sigma^2) + log(1 + sigma^2) with sigma^2 = exp(s)
      Tensor<T> weighted = scale(mul(term, exp_op(scale(sk, -1.0))), 0.5);
      term = add(weighted, softplus(sk));
    }
    total = total ? add(*total, term) : term;
  }
  (void)g;
  return *total;
}

namespace {

template <typename T>
Array<T> uniform_weights(const std::vector<int>& shape, double w) {
  Array<T> a(shape);
  for (T& x : a.v) x = static_cast<T>(w);
  return a;
}

struct SampleCounts {
  double lm_count = 0;
  int cells = 0;
  int aligned = 0;
};

}  // namespace

template <typename T>
LossTensors<T> model_losses(Graph<T>& g, GraphParams<T>& p, const Batch& batch,
                            const ModelConfig& cfg) {
  if (batch.items.empty()) throw ShapeMismatch("model_losses: empty batch");
  const int d = cfg.d_model;

  std::optional<Tensor<T>> nll_sum, poly_sum, span_sum, vis_sum, lang_sum;
  double lm_count = 0;
  int64_t cell_count = 0, aligned_count = 0;
  auto acc = [](std::optional<Tensor<T>>& acc_t, Tensor<T> v) {
    acc_t = acc_t ? add(*acc_t, v) : v;
  };

  for (const TrainSample& s : batch.items) {
    VisionEmbedding<T> vis_emb = encode_image<T>(
        g, p, std::vector<T>(s.image.begin(), s.image.end()), s.height,
        s.width, cfg);
    const int n_feat = vis_emb.grid_h * vis_emb.grid_w;

    // ---- TSR branch ----
    const int full = static_cast<int>(s.tsr_tokens.size());
    int real_len = full;
    while (real_len > 0 && s.tsr_tokens[real_len - 1] == PAD) --real_len;
    std::vector<int> input(s.tsr_tokens.begin(), s.tsr_tokens.end() - 1);
    std::vector<int> target(s.tsr_tokens.begin() + 1, s.tsr_tokens.end());
    Array<T> mask({full - 1});
    for (int i = 0; i + 1 < real_len; ++i) mask(i) = T(1);

    DecoderOutput<T> dec = decode_sequence(g, p, vis_emb.z, input, cfg);
    for (const T& x : mask.v) lm_count += static_cast<double>(x);
    acc(nll_sum, scale(dot_const(select_per_row(log_softmax_rows(dec.logits),
                                                target),
                                 std::move(mask)),
                       -1.0));

    std::vector<int> cell_pos;
    for (int i = 0; i < real_len - 1; ++i)
      if (input[i] == CELL) cell_pos.push_back(i);
    const int nc = static_cast<int>(cell_pos.size());
    if (nc > 0) {
      cell_count += nc;
      Tensor<T> cells = embed(dec.hidden, cell_pos);

      // physical: squared error of the expected location, mean over the 8
      // coordinates, summed over cells
      Tensor<T> expected = expected_location(g, p, cells);
      Array<T> poly_target({nc, 8});
      for (int c = 0; c < nc; ++c)
        for (int j = 0; j < 8; ++j)
          poly_target(c, j) = static_cast<T>(s.polys[c].pts[j]);
      Tensor<T> diff = sub(expected, constant(g, std::move(poly_target)));
      acc(poly_sum,
          dot_const(mul(diff, diff), uniform_weights<T>({nc, 8}, 1.0 / 8.0)));

      // logical: focal loss against one-hot spans over the location vocab
      SpanScores<T> spans = span_scores(g, p, cells);
      Array<T> row_target({nc, kLocCount}), col_target({nc, kLocCount});
      for (int c = 0; c < nc; ++c) {
        row_target(c, std::min(s.spans[c].rows, kLocCount - 1)) = T(1);
        col_target(c, std::min(s.spans[c].cols, kLocCount - 1)) = T(1);
      }
      const Array<T> wspan =
          uniform_weights<T>({nc, kLocCount}, 1.0 / kLocCount);
      Tensor<T> row_fl = sigmoid_focal(spans.row, std::move(row_target),
                                       cfg.focal_gamma, cfg.focal_alpha);
      Tensor<T> col_fl = sigmoid_focal(spans.col, std::move(col_target),
                                       cfg.focal_gamma, cfg.focal_alpha);
      acc(span_sum,
          add(dot_const(row_fl, wspan), dot_const(col_fl, wspan)));

      // vision guider
      if (cfg.use_vg) {
        if (s.grid_h != vis_emb.grid_h || s.grid_w != vis_emb.grid_w)
          throw ShapeMismatch(
              "guider masks use stride " +
              std::to_string(s.height / std::max(1, s.grid_h)) +
              " but the encoder stride is " + std::to_string(cfg.patch_size));
        GuiderScores<T> guide = vision_guider(g, p, cells, vis_emb.z);
        Array<T> row_m({nc, n_feat}), col_m({nc, n_feat});
        for (int c = 0; c < nc; ++c)
          for (int i = 0; i < n_feat; ++i) {
            row_m(c, i) = static_cast<T>(s.row_masks[c][i]);
            col_m(c, i) = static_cast<T>(s.col_masks[c][i]);
          }
        const Array<T> wvis = uniform_weights<T>({nc, n_feat}, 1.0 / n_feat);
        Tensor<T> row_fl2 = sigmoid_focal(guide.row, std::move(row_m),
                                          cfg.focal_gamma, cfg.focal_alpha);
        Tensor<T> col_fl2 = sigmoid_focal(guide.col, std::move(col_m),
                                          cfg.focal_gamma, cfg.focal_alpha);
        acc(vis_sum,
            add(dot_const(row_fl2, wvis), dot_const(col_fl2, wvis)));
      }

      // language guider: TR branch shares the visual embedding
      if (cfg.use_lg) {
        const int tr_full = static_cast<int>(s.tr_tokens.size());
        int tr_real = tr_full;
        while (tr_real > 0 && s.tr_tokens[tr_real - 1] == PAD) --tr_real;
        std::vector<int> tr_in(s.tr_tokens.begin(), s.tr_tokens.end() - 1);
        std::vector<int> tr_tgt(s.tr_tokens.begin() + 1, s.tr_tokens.end());
        Array<T> tr_mask({tr_full - 1});
        for (int i = 0; i + 1 < tr_real; ++i) tr_mask(i) = T(1);
        DecoderOutput<T> tr_dec = decode_sequence(g, p, vis_emb.z, tr_in, cfg);
        for (const T& x : tr_mask.v) lm_count += static_cast<double>(x);
        acc(nll_sum,
            scale(dot_const(select_per_row(log_softmax_rows(tr_dec.logits),
                                           tr_tgt),
                            std::move(tr_mask)),
                  -1.0));

        std::vector<int> aligned_cells;
        std::vector<std::pair<int, int>> aligned_ranges;
        for (int c = 0; c < nc; ++c) {
          const auto [a, b] = s.tr_ranges[c];
          if (b > a) {
            aligned_cells.push_back(c);
            aligned_ranges.emplace_back(a, b);
          }
        }
        if (!aligned_cells.empty()) {
          const int na = static_cast<int>(aligned_cells.size());
          aligned_count += na;
          Tensor<T> lang_q = linear(g, p, cells, "head.lang");
          Tensor<T> lang_sel = embed(lang_q, aligned_cells);
          // Mean pooling of the cell's text-token states as one matmul.
          Array<T> pool({na, static_cast<int>(tr_in.size())});
          for (int a2 = 0; a2 < na; ++a2) {
            const auto [lo, hi] = aligned_ranges[a2];
            for (int t = lo; t < hi; ++t)
              pool(a2, t) = static_cast<T>(1.0 / (hi - lo));
          }
          Tensor<T> pooled = matmul(constant(g, std::move(pool)),
                                    tr_dec.hidden);
          if (cfg.lang_stop_grad) pooled = constant(g, pooled.val());
          Tensor<T> ldiff = sub(lang_sel, pooled);
          acc(lang_sum, dot_const(mul(ldiff, ldiff),
                                  uniform_weights<T>({na, d}, 1.0 / d)));
        }
      }
    }
  }

  if (lm_count <= 0 || cell_count == 0)
    throw ShapeMismatch("model_losses: batch carries no supervised positions");

  LossTensors<T> out;
  out.lm = scale(*nll_sum, 1.0 / lm_count);
  out.poly = scale(*poly_sum, 1.0 / static_cast<double>(cell_count));
  out.span = scale(*span_sum, 1.0 / static_cast<double>(cell_count));
  std::vector<Tensor<T>> actives = {out.lm, out.poly, out.span};
  std::vector<int> sigma_idx = {0, 1, 2};
  if (cfg.use_vg) {
    out.vis = scale(*vis_sum, 1.0 / static_cast<double>(cell_count));
    actives.push_back(*out.vis);
    sigma_idx.push_back(3);
  }
  if (cfg.use_lg) {
    if (aligned_count == 0)
      throw EmptyAlignment("no cell in the batch has table-read tokens");
    out.lang = scale(*lang_sum, 1.0 / static_cast<double>(aligned_count));
    actives.push_back(*out.lang);
    sigma_idx.push_back(4);
  }
  out.total = total_loss(g, p, actives, sigma_idx, cfg.use_ul);
  return out;
}

// ---------------------------------------------------------------------------
// composite gradient check

GradCheckResult model_gradcheck(uint64_t seed, int max_coords) {
  ModelConfig mc;
  mc.d_model = 16;
  mc.n_enc_layers = 1;
  mc.n_dec_layers = 1;
  mc.n_heads = 2;
  mc.d_ff = 32;
  mc.patch_size = 8;
  mc.max_decode_len = 64;

  SynthConfig sc;
  sc.image_size = 48;
  sc.feature_stride = mc.patch_size;
  sc.rows_min = sc.rows_max = 2;
  sc.cols_min = sc.cols_max = 2;
  sc.merge_probability = 0.3;
  sc.descriptive_probability = 0.0;
  sc.empty_probability = 0.0;

  Rng data_rng(seed + 17);
  std::vector<TrainSample> samples;
  for (int i = 0; i < 2; ++i)
    samples.push_back(to_train_sample(make_sample(data_rng, sc)));
  Batch batch;
  int tsr_len = 0, tr_len = 0;
  for (const TrainSample& s : samples) {
    tsr_len = std::max(tsr_len, static_cast<int>(s.tsr_tokens.size()));
    tr_len = std::max(tr_len, static_cast<int>(s.tr_tokens.size()));
  }
  for (TrainSample s : samples) {
    s.tsr_tokens.resize(tsr_len, PAD);
    s.tr_tokens.resize(tr_len, PAD);
    batch.items.push_back(std::move(s));
  }
  batch.tsr_len = tsr_len;
  batch.tr_len = tr_len;

  const ParamMap<double> base = cast_params<double>(init_params(mc, seed));
  std::vector<double> theta;
  std::vector<std::pair<std::string, size_t>> layout;  // name, offset
  for (const auto& [name, par] : base) {
    layout.emplace_back(name, theta.size());
    theta.insert(theta.end(), par.w.begin(), par.w.end());
  }

  auto unflatten = [&](const std::vector<double>& th) {
    ParamMap<double> cur = base;
    for (const auto& [name, off] : layout) {
      auto& w = cur[name].w;
      std::copy(th.begin() + off, th.begin() + off + w.size(), w.begin());
    }
    return cur;
  };

  auto eval = [&](const std::vector<double>& th, bool with_grad,
                  std::vector<double>* grad_out) {
    ParamMap<double> cur = unflatten(th);
    Graph<double> g;
    g.recording = with_grad;
    GraphParams<double> gp(g, cur, with_grad);
    LossTensors<double> losses = model_losses(g, gp, batch, mc);
    if (with_grad) {
      backward(losses.total);
      auto grads = gp.collect_grads();
      grad_out->assign(theta.size(), 0.0);
      for (const auto& [name, off] : layout) {
        auto it = grads.find(name);
        if (it == grads.end()) continue;
        std::copy(it->second.begin(), it->second.end(),
                  grad_out->begin() + off);
      }
    }
    return static_cast<double>(losses.total.item());
  };

  std::vector<double> analytic;
  eval(theta, true, &analytic);

  // Random coordinate subset plus every uncertainty weight.
  Rng pick_rng(seed);
  std::vector<int> coords;
  for (const auto& [name, off] : layout)
    if (name == "uncert.s")
      for (size_t j = 0; j < base.at(name).w.size(); ++j)
        coords.push_back(static_cast<int>(off + j));
  {
    std::vector<int> all(theta.size());
    for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
    pick_rng.shuffle(all.begin(), all.end());
    for (int i : all) {
      if (static_cast<int>(coords.size()) >= max_coords) break;
      if (std::find(coords.begin(), coords.end(), i) == coords.end())
        coords.push_back(i);
    }
  }

  GradCheckResult res;
  double gmax = 1.0;
  for (double a : analytic) gmax = std::max(gmax, std::abs(a));
  std::vector<double> work = theta;
  for (int i : coords) {
    const double h = 1e-4 * std::max(1.0, std::abs(theta[i]));
    work[i] = theta[i] + h;
    const double fp = eval(work, false, nullptr);
    work[i] = theta[i] - h;
    const double fm = eval(work, false, nullptr);
    work[i] = theta[i];
    const double num = (fp - fm) / (2.0 * h);
    const double denom =
        std::max({std::abs(num), std::abs(analytic[i]), 1e-4 * gmax});
    const double rel = std::abs(num - analytic[i]) / denom;
    if (rel > res.max_rel_err) {
      res.max_rel_err = rel;
      res.worst = "theta[" + std::to_string(i) +
                  "] analytic=" + std::to_string(analytic[i]) +
                  " numeric=" + std::to_string(num);
    }
    ++res.checked;
  }
  return res;
}

// ---------------------------------------------------------------------------
// checkpoint io

namespace {

void put_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}
void put_u64(std::ostream& os, uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), 8);
}
void put_f64(std::ostream& os, double v) {
  os.write(reinterpret_cast<const char*>(&v), 8);
}
void put_str(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

uint32_t get_u32(std::istream& is) {
  uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4))
    throw CorruptCheckpoint("unexpected end of file");
  return v;
}
uint64_t get_u64(std::istream& is) {
  uint64_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 8))
    throw CorruptCheckpoint("unexpected end of file");
  return v;
}
double get_f64(std::istream& is) {
  double v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 8))
    throw CorruptCheckpoint("unexpected end of file");
  return v;
}
std::string get_str(std::istream& is) {
  const uint32_t len = get_u32(is);
  if (len > (1u << 24)) throw CorruptCheckpoint("implausible string length");
  std::string s(len, '\0');
  if (!is.read(s.data(), len))
    throw CorruptCheckpoint("unexpected end of file");
  return s;
}

void put_f32_record(std::ostream& os, const std::string& name,
                    const std::vector<int>& shape,
                    const std::vector<float>& data) {
  put_str(os, name);
  os.put(0);  // record type: f32 array
  put_u32(os, static_cast<uint32_t>(shape.size()));
  for (int dsz : shape) put_u32(os, static_cast<uint32_t>(dsz));
  put_u64(os, data.size());
  os.write(reinterpret_cast<const char*>(data.data()),
           static_cast<std::streamsize>(data.size() * sizeof(float)));
}

void put_blob_record(std::ostream& os, const std::string& name,
                     const std::string& blob) {
  put_str(os, name);
  os.put(1);  // record type: byte blob
  put_u64(os, blob.size());
  os.write(blob.data(), static_cast<std::streamsize>(blob.size()));
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     const ParamMap<float>& params,
                     const TrainerState* trainer) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os.write("UTNF", 4);
  put_u32(os, kCheckpointVersion);

  put_u32(os, static_cast<uint32_t>(cfg.d_model));
  put_u32(os, static_cast<uint32_t>(cfg.n_enc_layers));
  put_u32(os, static_cast<uint32_t>(cfg.n_dec_layers));
  put_u32(os, static_cast<uint32_t>(cfg.n_heads));
  put_u32(os, static_cast<uint32_t>(cfg.patch_size));
  put_u32(os, static_cast<uint32_t>(cfg.d_ff));
  put_u32(os, static_cast<uint32_t>(cfg.max_decode_len));
  const uint32_t flags = (cfg.use_ul ? 1u : 0u) | (cfg.use_vg ? 2u : 0u) |
                         (cfg.use_lg ? 4u : 0u) |
                         (cfg.lang_stop_grad ? 8u : 0u);
  put_u32(os, flags);
  put_f64(os, cfg.focal_gamma);
  put_f64(os, cfg.focal_alpha);
  put_str(os, cfg.charset);

  uint32_t n_records = static_cast<uint32_t>(params.size());
  if (trainer)
    n_records += static_cast<uint32_t>(trainer->opt.m.size() +
                                       trainer->opt.v.size()) +
                 2;
  put_u32(os, n_records);
  for (const auto& [name, par] : params)
    put_f32_record(os, name, par.shape, par.w);
  if (trainer) {
    for (const auto& [name, m] : trainer->opt.m)
      put_f32_record(os, "adam.m." + name,
                     {static_cast<int>(m.size())}, m);
    for (const auto& [name, v] : trainer->opt.v)
      put_f32_record(os, "adam.v." + name,
                     {static_cast<int>(v.size())}, v);
    std::string meta(16, '\0');
    const uint64_t step = static_cast<uint64_t>(trainer->step);
    const uint64_t ostep = static_cast<uint64_t>(trainer->opt.step);
    std::memcpy(meta.data(), &step, 8);
    std::memcpy(meta.data() + 8, &ostep, 8);
    put_blob_record(os, "trainer.meta", meta);
    put_blob_record(os, "trainer.rng", trainer->data_rng);
  }
  if (!os) throw IoError("short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "UTNF", 4) != 0)
    throw CorruptCheckpoint(path + ": bad magic");
  const uint32_t version = get_u32(is);
  if (version != kCheckpointVersion)
    throw VersionMismatch(path + ": format version " +
                          std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));

  Checkpoint ck;
  ModelConfig& cfg = ck.config;
  cfg.d_model = static_cast<int>(get_u32(is));
  cfg.n_enc_layers = static_cast<int>(get_u32(is));
  cfg.n_dec_layers = static_cast<int>(get_u32(is));
  cfg.n_heads = static_cast<int>(get_u32(is));
  cfg.patch_size = static_cast<int>(get_u32(is));
  cfg.d_ff = static_cast<int>(get_u32(is));
  cfg.max_decode_len = static_cast<int>(get_u32(is));
  const uint32_t flags = get_u32(is);
  cfg.use_ul = flags & 1u;
  cfg.use_vg = flags & 2u;
  cfg.use_lg = flags & 4u;
  cfg.lang_stop_grad = flags & 8u;
  cfg.focal_gamma = get_f64(is);
  cfg.focal_alpha = get_f64(is);
  cfg.charset = get_str(is);

  const uint32_t n_records = get_u32(is);
  std::map<std::string, std::string> blobs;
  std::map<std::string, Param<float>> arrays;
  for (uint32_t r = 0; r < n_records; ++r) {
    const std::string name = get_str(is);
    const int type = is.get();
    if (type == 0) {
      const uint32_t ndim = get_u32(is);
      if (ndim > 8) throw CorruptCheckpoint("implausible rank");
      Param<float> par;
      for (uint32_t d2 = 0; d2 < ndim; ++d2)
        par.shape.push_back(static_cast<int>(get_u32(is)));
      const uint64_t count = get_u64(is);
      if (count != static_cast<uint64_t>(Array<float>::numel_of(par.shape)))
        throw CorruptCheckpoint(name + ": element count mismatch");
      par.w.resize(count);
      if (!is.read(reinterpret_cast<char*>(par.w.data()),
                   static_cast<std::streamsize>(count * sizeof(float))))
        throw CorruptCheckpoint(name + ": truncated data");
      arrays[name] = std::move(par);
    } else if (type == 1) {
      const uint64_t len = get_u64(is);
      if (len > (1u << 26)) throw CorruptCheckpoint("implausible blob");
      std::string blob(len, '\0');
      if (!is.read(blob.data(), static_cast<std::streamsize>(len)))
        throw CorruptCheckpoint(name + ": truncated blob");
      blobs[name] = std::move(blob);
    } else {
      throw CorruptCheckpoint(name + ": unknown record type");
    }
  }

  const bool has_trainer = blobs.count("trainer.meta") > 0;
  if (has_trainer) ck.trainer.emplace();
  for (auto& [name, par] : arrays) {
    if (name.rfind("adam.m.", 0) == 0) {
      if (has_trainer) ck.trainer->opt.m[name.substr(7)] = std::move(par.w);
    } else if (name.rfind("adam.v.", 0) == 0) {
      if (has_trainer) ck.trainer->opt.v[name.substr(7)] = std::move(par.w);
    } else {
      ck.params[name] = std::move(par);
    }
  }
  if (has_trainer) {
    const std::string& meta = blobs["trainer.meta"];
    if (meta.size() != 16) throw CorruptCheckpoint("bad trainer metadata");
    uint64_t step = 0, ostep = 0;
    std::memcpy(&step, meta.data(), 8);
    std::memcpy(&ostep, meta.data() + 8, 8);
    ck.trainer->step = static_cast<int64_t>(step);
    ck.trainer->opt.step = static_cast<int64_t>(ostep);
    ck.trainer->data_rng = blobs["trainer.rng"];
  }
  return ck;
}

// ---------------------------------------------------------------------------
// explicit instantiations

#define TABREC_INSTANTIATE_MODEL(T)                                          \
  template VisionEmbedding<T> encode_image<T>(                               \
      Graph<T>&, GraphParams<T>&, const std::vector<T>&, int, int,           \
      const ModelConfig&, bool);                                             \
  template DecoderOutput<T> decode_sequence<T>(                              \
      Graph<T>&, GraphParams<T>&, Tensor<T>, const std::vector<int>&,        \
      const ModelConfig&, DecodeTrace*);                                     \
  template Tensor<T> expected_location<T>(Graph<T>&, GraphParams<T>&,        \
                                          Tensor<T>);                        \
  template SpanScores<T> span_scores<T>(Graph<T>&, GraphParams<T>&,          \
                                        Tensor<T>);                          \
  template GuiderScores<T> vision_guider<T>(Graph<T>&, GraphParams<T>&,      \
                                            Tensor<T>, Tensor<T>);           \
  template Tensor<T> total_loss<T>(Graph<T>&, GraphParams<T>&,               \
                                   const std::vector<Tensor<T>>&,            \
                                   const std::vector<int>&, bool);           \
  template LossTensors<T> model_losses<T>(Graph<T>&, GraphParams<T>&,        \
                                          const Batch&, const ModelConfig&); \
  template struct LossTensors<T>;

TABREC_INSTANTIATE_MODEL(float)
TABREC_INSTANTIATE_MODEL(double)
#undef TABREC_INSTANTIATE_MODEL

}  // namespace tabrec
