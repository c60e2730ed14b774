#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "tabrec/array.hpp"
#include "tabrec/kernels.hpp"

namespace tabrec {

// Reverse-mode tape. Nodes are appended in evaluation order, so walking the
// tape backwards visits every node after all of its consumers. Backward
// closures receive the graph and their own node id.
template <typename T>
class Graph {
 public:
  using BackFn = std::function<void(Graph&, int)>;

  struct Node {
    Array<T> val;
    Array<T> grad;  // allocated on first contribution during backward
    bool needs_grad = false;
    bool grad_alloc = false;
    BackFn back;
  };

  bool recording = true;  // when false, no closures are kept (inference)

  int add(Array<T> val, bool needs_grad, BackFn back = {}) {
#ifndef NDEBUG
    for (const T& x : val.v)
      if (!std::isfinite(static_cast<double>(x)))
        throw NonFiniteLoss("non-finite value produced by a forward op");
#endif
    Node n;
    n.val = std::move(val);
    n.needs_grad = recording && needs_grad;
    if (n.needs_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  const Array<T>& val(int id) const { return nodes_[id].val; }

  Array<T>& grad(int id) {
    Node& n = nodes_[id];
    if (!n.grad_alloc) {
      n.grad = Array<T>(n.val.shape);
      n.grad_alloc = true;
    }
    return n.grad;
  }
  bool grad_touched(int id) const { return nodes_[id].grad_alloc; }
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }

  void run_backward(int loss_id) {
    Node& top = nodes_[loss_id];
    if (top.val.numel() != 1)
      throw NonScalarLoss("backward requires a scalar loss, got shape " +
                          shape_str(top.val.shape));
    grad(loss_id).v[0] += T(1);
    for (int i = loss_id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.needs_grad && n.grad_alloc && n.back) n.back(*this, i);
    }
  }

  size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
};

template <typename T>
struct Tensor {
  Graph<T>* g = nullptr;
  int id = -1;

  const Array<T>& val() const { return g->val(id); }
  const std::vector<int>& shape() const { return g->val(id).shape; }
  int rows() const { return val().rows(); }
  int cols() const { return val().cols(); }
  T item() const {
    if (val().numel() != 1)
      throw ShapeMismatch("item() on non-scalar tensor " +
                          shape_str(val().shape));
    return val().v[0];
  }
  // Zero gradient when the node never received one.
  Array<T> grad() const {
    if (g->grad_touched(id)) return g->grad(id);
    return Array<T>(val().shape);
  }
};

template <typename T>
Tensor<T> leaf(Graph<T>& g, Array<T> a, bool requires_grad) {
  int id = g.add(std::move(a), requires_grad);
  return {&g, id};
}

template <typename T>
Tensor<T> constant(Graph<T>& g, Array<T> a) {
  return leaf(g, std::move(a), false);
}

template <typename T>
void backward(Tensor<T> loss) {
  loss.g->run_backward(loss.id);
}

namespace detail {
template <typename T>
inline void axpy(Array<T>& dst, const Array<T>& src) {
  for (size_t i = 0; i < dst.v.size(); ++i) dst.v[i] += src.v[i];
}
}  // namespace detail

// ---------------------------------------------------------------------------
// linear algebra

template <typename T>
Tensor<T> matmul(Tensor<T> a, Tensor<T> b) {
  const Array<T>& av = a.val();
  const Array<T>& bv = b.val();
  if (av.rank() != 2 || bv.rank() != 2 || av.shape[1] != bv.shape[0])
    throw ShapeMismatch("matmul: " + shape_str(av.shape) + " x " +
                        shape_str(bv.shape));
  const int m = av.shape[0], k = av.shape[1], n = bv.shape[1];
  Array<T> out({m, n});
  kernels::matmul(av.data(), bv.data(), out.data(), m, k, n);
  Graph<T>& g = *a.g;
  int id = g.add(std::move(out), g.needs_grad(a.id) || g.needs_grad(b.id),
                 [ai = a.id, bi = b.id, m, k, n](Graph<T>& gr, int self) {
                   const Array<T>& dc = gr.grad(self);
                   if (gr.needs_grad(ai)) {
                     Array<T> bt({n, k});
                     kernels::transpose(gr.val(bi).data(), bt.data(), k, n);
                     kernels::matmul(dc.data(), bt.data(),
                                     gr.grad(ai).data(), m, n, k, true);
                   }
                   if (gr.needs_grad(bi)) {
                     Array<T> at({k, m});
                     kernels::transpose(gr.val(ai).data(), at.data(), m, k);
                     kernels::matmul(at.data(), dc.data(),
                                     gr.grad(bi).data(), k, m, n, true);
                   }
                 });
  return {&g, id};
}

template <typename T>
Tensor<T> transpose(Tensor<T> a) {
  const Array<T>& av = a.val();
  if (av.rank() != 2) throw ShapeMismatch("transpose: rank-2 required");
  const int m = av.shape[0], n = av.shape[1];
  Array<T> out({n, m});
  kernels::transpose(av.data(), out.data(), m, n);
  Graph<T>& g = *a.g;
  int id = g.add(std::move(out), g.needs_grad(a.id),
                 [ai = a.id, m, n](Graph<T>& gr, int self) {
                   const Array<T>& dc = gr.grad(self);
                   Array<T> tmp({m, n});
                   kernels::transpose(dc.data(), tmp.data(), n, m);
                   detail::axpy(gr.grad(ai), tmp);
                 });
  return {&g, id};
}

// ---------------------------------------------------------------------------
// broadcasting helpers: b may have the same shape as a, be a row vector [n]
// against a [m,n], or be a scalar [1].

enum class Bcast { Same, Row, Scalar };

template <typename T>
inline Bcast bcast_kind(const Array<T>& a, const Array<T>& b,
                        const char* what) {
  if (a.same_shape(b)) return Bcast::Same;
  if (b.numel() == 1) return Bcast::Scalar;
  if (a.rank() == 2 && b.rank() == 1 && b.shape[0] == a.shape[1])
    return Bcast::Row;
  throw ShapeMismatch(std::string(what) + ": " + shape_str(a.shape) + " vs " +
                      shape_str(b.shape));
}

template <typename T>
Tensor<T> add(Tensor<T> a, Tensor<T> b) {
  const Array<T>& av = a.val();
  const Array<T>& bv = b.val();
  Bcast bc = bcast_kind(av, bv, "add");
  Array<T> out = av;
  const int n = av.cols();
  switch (bc) {
    case Bcast::Same:
      for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += bv.v[i];
      break;
    case Bcast::Scalar:
      for (T& x : out.v) x += bv.v[0];
      break;
    case Bcast::Row:
      for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += bv.v[i % n];
      break;
  }
  Graph<T>& g = *a.g;
  int id = g.add(std::move(out), g.needs_grad(a.id) || g.needs_grad(b.id),
                 [ai = a.id, bi = b.id, bc, n](Graph<T>& gr, int self) {
                   const Array<T>& dc = gr.grad(self);
                   if (gr.needs_grad(ai)) detail::axpy(gr.grad(ai), dc);
                   if (gr.needs_grad(bi)) {
                     Array<T>& gb = gr.grad(bi);
                     switch (bc) {
                       case Bcast::Same:
                         detail::axpy(gb, dc);
                         break;
                       case Bcast::Scalar:
                         for (const T& x : dc.v) gb.v[0] += x;
                         break;
                       case Bcast::Row:
                         for (size_t i = 0; i < dc.v.size(); ++i)
                           gb.v[i % n] += dc.v[i];
                         break;
                     }
                   }
                 });
  return {&g, id};
}

template <typename T>
Tensor<T> mul(Tensor<T> a, Tensor<T> b) {
  const Array<T>& av = a.val();
  const Array<T>& bv = b.val();
  Bcast bc = bcast_kind(av, bv, "mul");
  Array<T> out = av;
  const int n = av.cols();
  switch (bc) {
    case Bcast::Same:
      for (size_t i = 0; i < out.v.size(); ++i) out.v[i] *= bv.v[i];
      break;
    case Bcast::Scalar:
      for (T& x : out.v) x *= bv.v[0];
      break;
    case Bcast::Row:
      for (size_t i = 0; i < out.v.size(); ++i) out.v[i] *= bv.v[i % n];
      break;
  }
  Graph<T>& g = *a.g;
  int id = g.add(std::move(out), g.needs_grad(a.id) || g.needs_grad(b.id),
                 [ai = a.id, bi = b.id, bc, n](Graph<T>& gr, int self) {
                   const Array<T>& dc = gr.grad(self);
                   const Array<T>& av2 = gr.val(ai);
                   const Array<T>& bv2 = gr.val(bi);
                   if (gr.needs_grad(ai)) {
                     Array<T>& ga = gr.grad(ai);
                     switch (bc) {
                       case Bcast::Same:
                         for (size_t i = 0; i < dc.v.size(); ++i)
                           ga.v[i] += dc.v[i] * bv2.v[i];
                         break;
                       case Bcast::Scalar:
                         for (size_t i = 0; i < dc.v.size(); ++i)
                           ga.v[i] += dc.v[i] * bv2.v[0];
                         break;
                       case Bcast::Row:
                         for (size_t i = 0; i < dc.v.size(); ++i)
                           ga.v[i] += dc.v[i] * bv2.v[i % n];
                         break;
                     }
                   }
                   if (gr.needs_grad(bi)) {
                     Array<T>& gb = gr.grad(bi);
                     switch (bc) {
                       case Bcast::Same:
                         for (size_t i = 0; i < dc.v.size(); ++i)
                           gb.v[i] += dc.v[i] * av2.v[i];
                         break;
                       case Bcast::Scalar:
                         for (size_t i = 0; i < dc.v.size(); ++i)
                           gb.v[0] += dc.v[i] * av2.v[i];
                         break;
                       case Bcast::Row:
                         for (size_t i = 0; i < dc.v.size(); ++i)
                           gb.v[i % n] += dc.v[i] * av2.v[i];
                         break;
                     }
                   }
                 });
  return {&g, id};
}

template <typename T>
Tensor<T> scale(Tensor<T> a, double c) {
  Array<T> out = a.val();
  for (T& x : out.v) x *= static_cast<T>(c);
  Graph<T>& g = *a.g;
  int id = g.add(std::move(out), g.needs_grad(a.id),
                 [ai = a.id, c](Graph<T>& gr, int self) {
                   const Array<T>& dc = gr.grad(self);
                   Array<T>& ga = gr.grad(ai);
                   for (size_t i = 0; i < dc.v.size(); ++i)
                     ga.v[i] += dc.v[i] * static_cast<T>(c);
                 });
  return {&g, id};
}

template <typename T>
Tensor<T> sub(Tensor<T> a, Tensor<T> b) {
  return add(a, scale(b, -1.0));
}

// ---------------------------------------------------------------------------
// elementwise nonlinearities

template <typename T, typename FwdFn, typename BwdFn>
Tensor<T> unary_op(Tensor<T> a, FwdFn fwd, BwdFn dfdx_from_xy) {
  const Array<T>& av = a.val();
  Array<T> out = av;
  for (T& x : out.v) x = fwd(x);
  Graph<T>& g = *a.g;
  int id = g.add(std::move(out), g.needs_grad(a.id),
                 [ai = a.id, dfdx_from_xy](Graph<T>& gr, int self) {
                   const Array<T>& dc = gr.grad(self);
                   const Array<T>& x = gr.val(ai);
                   const Array<T>& y = gr.val(self);
                   Array<T>& ga = gr.grad(ai);
                   for (size_t i = 0; i < dc.v.size(); ++i)
                     ga.v[i] += dc.v[i] * dfdx_from_xy(x.v[i], y.v[i]);
                 });
  return {&g, id};
}

template <typename T>
Tensor<T> sigmoid(Tensor<T> a) {
  return unary_op(
      a,
      [](T x) {
        return x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                         : std::exp(x) / (T(1) + std::exp(x));
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> exp_op(Tensor<T> a) {
  return unary_op(a, [](T x) { return std::exp(x); },
                  [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log_op(Tensor<T> a) {
  return unary_op(a, [](T x) { return std::log(x); },
                  [](T x, T) { return T(1) / x; });
}

template <typename T>
inline T softplus_val(T x) {
  return std::log1p(std::exp(-std::abs(x))) + std::max(x, T(0));
}

template <typename T>
Tensor<T> softplus(Tensor<T> a) {
  return unary_op(a, [](T x) { return softplus_val(x); },
                  [](T x, T) {
                    return x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                                     : std::exp(x) / (T(1) + std::exp(x));
                  });
}

template <typename T>
Tensor<T> gelu(Tensor<T> a) {
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  constexpr double kInvSqrt2Pi = 0.3989422804014326779;
  return unary_op(
      a,
      [=](T x) {
        return x * T(0.5) *
               (T(1) + std::erf(x * static_cast<T>(kInvSqrt2)));
      },
      [=](T x, T) {
        T cdf = T(0.5) * (T(1) + std::erf(x * static_cast<T>(kInvSqrt2)));
        T pdf = static_cast<T>(kInvSqrt2Pi) * std::exp(-T(0.5) * x * x);
        return cdf + x * pdf;
      });
}

// ---------------------------------------------------------------------------
// softmax / log-softmax over the last axis (rows of a 2-D tensor)

template <typename T>
Tensor<T> softmax_rows(Tensor<T> a) {
  const Array<T>& av = a.val();
  const int rows = av.rows(), cols = av.cols();
  Array<T> out(av.shape);
  kernels::softmax_rows(av.data(), out.data(), rows, cols);
  Graph<T>& g = *a.g;
  int id = g.add(std::move(out), g.needs_grad(a.id),
                 [ai = a.id, rows, cols](Graph<T>& gr, int self) {
                   kernels::softmax_rows_backward(
                       gr.val(self).data(), gr.grad(self).data(),
                       gr.grad(ai).data(), rows, cols);
                 });
  return {&g, id};
}

template <typename T>
Tensor<T> log_softmax_rows(Tensor<T> a) {
  const Array<T>& av = a.val();
  const int rows = av.rows(), cols = av.cols();
  Array<T> out(av.shape);
  for (int i = 0; i < rows; ++i) {
    const T* xi = av.data() + static_cast<size_t>(i) * cols;
    T* yi = out.data() + static_cast<size_t>(i) * cols;
    T mx = xi[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, xi[j]);
    T sum = T(0);
    for (int j = 0; j < cols; ++j) sum += std::exp(xi[j] - mx);
    const T lse = mx + std::log(sum);
    for (int j = 0; j < cols; ++j) yi[j] = xi[j] - lse;
  }
  Graph<T>& g = *a.g;
  int id = g.add(std::move(out), g.needs_grad(a.id),
                 [ai = a.id, rows, cols](Graph<T>& gr, int self) {
                   const Array<T>& y = gr.val(self);
                   const Array<T>& dy = gr.grad(self);
                   Array<T>& dx = gr.grad(ai);
                   for (int i = 0; i < rows; ++i) {
                     const size_t off = static_cast<size_t>(i) * cols;
                     T s = T(0);
                     for (int j = 0; j < cols; ++j) s += dy.v[off + j];
                     for (int j = 0; j < cols; ++j)
                       dx.v[off + j] +=
                           dy.v[off + j] - std::exp(y.v[off + j]) * s;
                   }
                 });
  return {&g, id};
}

// ---------------------------------------------------------------------------
// layer norm (row-wise)

template <typename T>
Tensor<T> layer_norm_rows(Tensor<T> x, Tensor<T> gain, Tensor<T> bias,
                          double eps = 1e-5) {
  const Array<T>& xv = x.val();
  const int rows = xv.rows(), cols = xv.cols();
  if (gain.val().numel() != cols || bias.val().numel() != cols)
    throw ShapeMismatch("layer_norm: gain/bias length must equal row width");
  Array<T> out(xv.shape);
  auto mean = std::make_shared<Array<T>>(std::vector<int>{rows});
  auto rstd = std::make_shared<Array<T>>(std::vector<int>{rows});
  kernels::layer_norm_rows(xv.data(), gain.val().data(), bias.val().data(),
                           out.data(), mean->data(), rstd->data(), rows, cols,
                           static_cast<T>(eps));
  Graph<T>& g = *x.g;
  bool ng = g.needs_grad(x.id) || g.needs_grad(gain.id) ||
            g.needs_grad(bias.id);
  int id = g.add(
      std::move(out), ng,
      [xi = x.id, gi = gain.id, bi = bias.id, mean, rstd, rows,
       cols](Graph<T>& gr, int self) {
        const Array<T>& dy = gr.grad(self);
        Array<T> dgain_tmp({cols}), dbias_tmp({cols}), dx_tmp(gr.val(xi).shape);
        kernels::layer_norm_rows_backward(
            gr.val(xi).data(), gr.val(gi).data(), mean->data(), rstd->data(),
            dy.data(), dx_tmp.data(), dgain_tmp.data(), dbias_tmp.data(), rows,
            cols);
        if (gr.needs_grad(xi)) detail::axpy(gr.grad(xi), dx_tmp);
        if (gr.needs_grad(gi)) detail::axpy(gr.grad(gi), dgain_tmp);
        if (gr.needs_grad(bi)) detail::axpy(gr.grad(bi), dbias_tmp);
      });
  return {&g, id};
}

// ---------------------------------------------------------------------------
// gathers, slices, concatenation

// Rows of `table` selected by integer ids; used both for token embedding and
// for gathering per-cell decoder states.
template <typename T>
Tensor<T> embed(Tensor<T> table, std::vector<int> ids) {
  const Array<T>& tv = table.val();
  if (tv.rank() != 2) throw ShapeMismatch("embed: table must be rank 2");
  const int n = tv.shape[1];
  const int m = static_cast<int>(ids.size());
  Array<T> out({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out(i, j) = tv(ids[i], j);
  Graph<T>& g = *table.g;
  int id = g.add(std::move(out), g.needs_grad(table.id),
                 [ti = table.id, ids = std::move(ids), n](Graph<T>& gr,
                                                          int self) {
                   const Array<T>& dc = gr.grad(self);
                   Array<T>& gt = gr.grad(ti);
                   for (size_t i = 0; i < ids.size(); ++i)
                     for (int j = 0; j < n; ++j)
                       gt(ids[i], j) += dc(static_cast<int>(i), j);
                 });
  return {&g, id};
}

template <typename T>
Tensor<T> slice_rows(Tensor<T> a, int r0, int r1) {
  const Array<T>& av = a.val();
  const int n = av.cols();
  if (r0 < 0 || r1 > av.rows() || r0 >= r1)
    throw ShapeMismatch("slice_rows: bad range [" + std::to_string(r0) + "," +
                        std::to_string(r1) + ") for " + shape_str(av.shape));
  Array<T> out({r1 - r0, n});
  std::copy(av.data() + static_cast<size_t>(r0) * n,
            av.data() + static_cast<size_t>(r1) * n, out.data());
  Graph<T>& g = *a.g;
  int id = g.add(std::move(out), g.needs_grad(a.id),
                 [ai = a.id, r0, r1, n](Graph<T>& gr, int self) {
                   const Array<T>& dc = gr.grad(self);
                   Array<T>& ga = gr.grad(ai);
                   for (int i = 0; i < r1 - r0; ++i)
                     for (int j = 0; j < n; ++j) ga(r0 + i, j) += dc(i, j);
                 });
  return {&g, id};
}

template <typename T>
Tensor<T> slice_cols(Tensor<T> a, int c0, int c1) {
  const Array<T>& av = a.val();
  if (av.rank() != 2 || c0 < 0 || c1 > av.shape[1] || c0 >= c1)
    throw ShapeMismatch("slice_cols: bad range for " + shape_str(av.shape));
  const int m = av.shape[0], w = c1 - c0;
  Array<T> out({m, w});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < w; ++j) out(i, j) = av(i, c0 + j);
  Graph<T>& g = *a.g;
  int id = g.add(std::move(out), g.needs_grad(a.id),
                 [ai = a.id, c0, m, w](Graph<T>& gr, int self) {
                   const Array<T>& dc = gr.grad(self);
                   Array<T>& ga = gr.grad(ai);
                   for (int i = 0; i < m; ++i)
                     for (int j = 0; j < w; ++j) ga(i, c0 + j) += dc(i, j);
                 });
  return {&g, id};
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat_cols: no parts");
  for (const auto& p : parts)
    if (p.val().rank() != 2) throw ShapeMismatch("concat_cols: rank-2 only");
  const int m = parts[0].rows();
  int total = 0;
  bool ng = false;
  for (const auto& p : parts) {
    if (p.rows() != m)
      throw ShapeMismatch("concat_cols: row mismatch");
    total += p.cols();
    ng = ng || p.g->needs_grad(p.id);
  }
  Array<T> out({m, total});
  int off = 0;
  std::vector<int> ids, widths;
  for (const auto& p : parts) {
    const Array<T>& pv = p.val();
    const int w = pv.cols();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < w; ++j) out(i, off + j) = pv(i, j);
    ids.push_back(p.id);
    widths.push_back(w);
    off += w;
  }
  Graph<T>& g = *parts[0].g;
  int id = g.add(std::move(out), ng,
                 [ids, widths, m](Graph<T>& gr, int self) {
                   const Array<T>& dc = gr.grad(self);
                   int off2 = 0;
                   for (size_t p = 0; p < ids.size(); ++p) {
                     if (gr.needs_grad(ids[p])) {
                       Array<T>& gp = gr.grad(ids[p]);
                       for (int i = 0; i < m; ++i)
                         for (int j = 0; j < widths[p]; ++j)
                           gp(i, j) += dc(i, off2 + j);
                     }
                     off2 += widths[p];
                   }
                 });
  return {&g, id};
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat_rows: no parts");
  for (const auto& p : parts)
    if (p.val().rank() != 2) throw ShapeMismatch("concat_rows: rank-2 only");
  const int n = parts[0].cols();
  int total = 0;
  bool ng = false;
  for (const auto& p : parts) {
    if (p.cols() != n) throw ShapeMismatch("concat_rows: column mismatch");
    total += p.rows();
    ng = ng || p.g->needs_grad(p.id);
  }
  Array<T> out({total, n});
  int off = 0;
  std::vector<int> ids, heights;
  for (const auto& p : parts) {
    const Array<T>& pv = p.val();
    std::copy(pv.v.begin(), pv.v.end(),
              out.v.begin() + static_cast<size_t>(off) * n);
    ids.push_back(p.id);
    heights.push_back(pv.rows());
    off += pv.rows();
  }
  Graph<T>& g = *parts[0].g;
  int id = g.add(std::move(out), ng,
                 [ids, heights, n](Graph<T>& gr, int self) {
                   const Array<T>& dc = gr.grad(self);
                   int off2 = 0;
                   for (size_t p = 0; p < ids.size(); ++p) {
                     if (gr.needs_grad(ids[p])) {
                       Array<T>& gp = gr.grad(ids[p]);
                       for (int i = 0; i < heights[p]; ++i)
                         for (int j = 0; j < n; ++j)
                           gp(i, j) += dc(off2 + i, j);
                     }
                     off2 += heights[p];
                   }
                 });
  return {&g, id};
}

// ---------------------------------------------------------------------------
// reductions

template <typename T>
Tensor<T> sum_all(Tensor<T> a) {
  T s = T(0);
  for (const T& x : a.val().v) s += x;
  Graph<T>& g = *a.g;
  int id = g.add(Array<T>::scalar(s), g.needs_grad(a.id),
                 [ai = a.id](Graph<T>& gr, int self) {
                   const T d = gr.grad(self).v[0];
                   Array<T>& ga = gr.grad(ai);
                   for (T& x : ga.v) x += d;
                 });
  return {&g, id};
}

template <typename T>
Tensor<T> mean_all(Tensor<T> a) {
  return scale(sum_all(a), 1.0 / static_cast<double>(a.val().numel()));
}

// Mean over axis 0: [m,n] -> [n].
template <typename T>
Tensor<T> mean_rows(Tensor<T> a) {
  const Array<T>& av = a.val();
  if (av.rank() != 2) throw ShapeMismatch("mean_rows: rank-2 only");
  const int m = av.rows(), n = av.cols();
  Array<T> out({n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out(j) += av(i, j);
  for (T& x : out.v) x /= T(m);
  Graph<T>& g = *a.g;
  int id = g.add(std::move(out), g.needs_grad(a.id),
                 [ai = a.id, m, n](Graph<T>& gr, int self) {
                   const Array<T>& dc = gr.grad(self);
                   Array<T>& ga = gr.grad(ai);
                   for (int i = 0; i < m; ++i)
                     for (int j = 0; j < n; ++j) ga(i, j) += dc(j) / T(m);
                 });
  return {&g, id};
}

// Weighted sum against fixed weights (loss masking): sum_i w_i x_i -> scalar.
template <typename T>
Tensor<T> dot_const(Tensor<T> a, Array<T> w) {
  require_same_shape(a.val(), w, "dot_const");
  T s = T(0);
  for (size_t i = 0; i < w.v.size(); ++i) s += a.val().v[i] * w.v[i];
  Graph<T>& g = *a.g;
  int id = g.add(Array<T>::scalar(s), g.needs_grad(a.id),
                 [ai = a.id, w = std::move(w)](Graph<T>& gr, int self) {
                   const T d = gr.grad(self).v[0];
                   Array<T>& ga = gr.grad(ai);
                   for (size_t i = 0; i < w.v.size(); ++i)
                     ga.v[i] += d * w.v[i];
                 });
  return {&g, id};
}

// x(i, ids[i]) for each row -> [m]; used by the token NLL.
template <typename T>
Tensor<T> select_per_row(Tensor<T> a, std::vector<int> ids) {
  const Array<T>& av = a.val();
  if (av.rank() != 2) throw ShapeMismatch("select_per_row: rank-2 only");
  const int m = av.rows();
  if (static_cast<int>(ids.size()) != m)
    throw ShapeMismatch("select_per_row: ids length must equal rows");
  Array<T> out({m});
  for (int i = 0; i < m; ++i) out(i) = av(i, ids[i]);
  Graph<T>& g = *a.g;
  int id = g.add(std::move(out), g.needs_grad(a.id),
                 [ai = a.id, ids = std::move(ids)](Graph<T>& gr, int self) {
                   const Array<T>& dc = gr.grad(self);
                   Array<T>& ga = gr.grad(ai);
                   for (size_t i = 0; i < ids.size(); ++i)
                     ga(static_cast<int>(i), ids[i]) +=
                         dc(static_cast<int>(i));
                 });
  return {&g, id};
}

}  // namespace tabrec
