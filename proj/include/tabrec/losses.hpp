#pragma once

#include "tabrec/graph.hpp"

namespace tabrec {

// Per-element sigmoid focal loss, numerically stable at saturated logits.
// With x' = target ? x : -x and p = sigmoid(x'):
//   fl    = alpha_t * (1-p)^gamma * (-log p)
//   d/dx' = alpha_t * (1-p)^gamma * (gamma * p * log(p) - (1-p))
// (1-p)^gamma and log p are evaluated through softplus to avoid overflow.
template <typename T>
Tensor<T> sigmoid_focal(Tensor<T> logits, Array<T> targets, double gamma,
                        double alpha) {
  require_same_shape(logits.val(), targets, "sigmoid_focal_loss");
  const Array<T>& xv = logits.val();
  Array<T> out(xv.shape);
  const T gam = static_cast<T>(gamma);
  for (size_t i = 0; i < xv.v.size(); ++i) {
    const bool pos = targets.v[i] > T(0.5);
    const T xp = pos ? xv.v[i] : -xv.v[i];
    const T at = static_cast<T>(pos ? alpha : 1.0 - alpha);
    const T log_p = -softplus_val(-xp);          // log sigmoid(x')
    const T log_1mp = -softplus_val(xp);         // log sigmoid(-x')
    const T pow_term = std::exp(gam * log_1mp);  // (1-p)^gamma
    out.v[i] = at * pow_term * (-log_p);
  }
  Graph<T>& g = *logits.g;
  int id = g.add(
      std::move(out), g.needs_grad(logits.id),
      [xi = logits.id, targets = std::move(targets), gam,
       alpha](Graph<T>& gr, int self) {
        const Array<T>& dc = gr.grad(self);
        const Array<T>& x = gr.val(xi);
        Array<T>& gx = gr.grad(xi);
        for (size_t i = 0; i < dc.v.size(); ++i) {
          const bool pos = targets.v[i] > T(0.5);
          const T xp = pos ? x.v[i] : -x.v[i];
          const T at = static_cast<T>(pos ? alpha : 1.0 - alpha);
          const T log_p = -softplus_val(-xp);
          const T log_1mp = -softplus_val(xp);
          const T p = std::exp(log_p);
          const T one_mp = std::exp(log_1mp);
          const T pow_term = std::exp(gam * log_1mp);
          const T d_xp = at * pow_term * (gam * p * log_p - one_mp);
          gx.v[i] += dc.v[i] * (pos ? d_xp : -d_xp);
        }
      });
  return {&g, id};
}

// Mean-reduced focal loss over all elements.
template <typename T>
Tensor<T> sigmoid_focal_loss(Tensor<T> logits, Array<T> targets, double gamma,
                             double alpha) {
  return mean_all(sigmoid_focal(logits, std::move(targets), gamma, alpha));
}

// Mean squared error over all elements.
template <typename T>
Tensor<T> mse_loss(Tensor<T> a, Tensor<T> b) {
  require_same_shape(a.val(), b.val(), "mse_loss");
  Tensor<T> d = sub(a, b);
  return mean_all(mul(d, d));
}

// Token-level negative log-likelihood: -sum_i mask_i * log p(target_i) / M,
// M = sum of mask. logits [m,v], targets/mask length m.
template <typename T>
Tensor<T> masked_cross_entropy(Tensor<T> logits, const std::vector<int>& targets,
                               Array<T> mask) {
  const int m = logits.rows();
  if (static_cast<int>(targets.size()) != m ||
      static_cast<int>(mask.numel()) != m)
    throw ShapeMismatch("masked_cross_entropy: targets/mask length " +
                        std::to_string(targets.size()) + "," +
                        std::to_string(mask.numel()) + " vs rows " +
                        std::to_string(m));
  T count = T(0);
  for (const T& x : mask.v) count += x;
  if (count <= T(0))
    throw ShapeMismatch("masked_cross_entropy: empty mask");
  Tensor<T> logp = select_per_row(log_softmax_rows(logits), targets);
  return scale(dot_const(logp, std::move(mask)),
               -1.0 / static_cast<double>(count));
}

}  // namespace tabrec
