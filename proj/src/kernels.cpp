#include "tabrec/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace tabrec::kernels {

namespace {
int g_max_threads = 0;

inline int threads_for(int64_t work) {
  int hw = g_max_threads > 0 ? g_max_threads : omp_get_max_threads();
  if (work < 524288) return 1;  // forking costs more than tiny shapes do
  return hw;
}
}  // namespace

void set_max_threads(int n) { g_max_threads = n; }
int max_threads() {
  return g_max_threads > 0 ? g_max_threads : omp_get_max_threads();
}

// Accumulation runs in k-order for every C element, identical to the
// reference, so the result does not depend on the thread count.
template <typename T>
void matmul(const T* a, const T* b, T* c, int m, int k, int n, bool acc) {
  const int nt = threads_for(static_cast<int64_t>(m) * k * n);
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1)
  for (int i = 0; i < m; ++i) {
    T* ci = c + static_cast<size_t>(i) * n;
    if (!acc) std::fill(ci, ci + n, T(0));
    const T* ai = a + static_cast<size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const T av = ai[p];
      const T* bp = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

template <typename T>
void transpose(const T* a, T* at, int m, int n) {
  const int nt = threads_for(static_cast<int64_t>(m) * n);
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1)
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      at[static_cast<size_t>(j) * m + i] = a[static_cast<size_t>(i) * n + j];
}

template <typename T>
void softmax_rows(const T* x, T* y, int rows, int cols) {
  const int nt = threads_for(static_cast<int64_t>(rows) * cols * 4);
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1)
  for (int i = 0; i < rows; ++i) {
    const T* xi = x + static_cast<size_t>(i) * cols;
    T* yi = y + static_cast<size_t>(i) * cols;
    T mx = xi[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, xi[j]);
    T sum = T(0);
    for (int j = 0; j < cols; ++j) {
      yi[j] = std::exp(xi[j] - mx);
      sum += yi[j];
    }
    const T inv = T(1) / sum;
    for (int j = 0; j < cols; ++j) yi[j] *= inv;
  }
}

template <typename T>
void softmax_rows_backward(const T* y, const T* dy, T* dx, int rows,
                           int cols) {
  const int nt = threads_for(static_cast<int64_t>(rows) * cols * 4);
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1)
  for (int i = 0; i < rows; ++i) {
    const T* yi = y + static_cast<size_t>(i) * cols;
    const T* di = dy + static_cast<size_t>(i) * cols;
    T* oi = dx + static_cast<size_t>(i) * cols;
    T dot = T(0);
    for (int j = 0; j < cols; ++j) dot += di[j] * yi[j];
    for (int j = 0; j < cols; ++j) oi[j] += yi[j] * (di[j] - dot);
  }
}

template <typename T>
void layer_norm_rows(const T* x, const T* gain, const T* bias, T* y, T* mean,
                     T* rstd, int rows, int cols, T eps) {
  const int nt = threads_for(static_cast<int64_t>(rows) * cols * 4);
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1)
  for (int i = 0; i < rows; ++i) {
    const T* xi = x + static_cast<size_t>(i) * cols;
    T* yi = y + static_cast<size_t>(i) * cols;
    T mu = T(0);
    for (int j = 0; j < cols; ++j) mu += xi[j];
    mu /= T(cols);
    T var = T(0);
    for (int j = 0; j < cols; ++j) {
      const T d = xi[j] - mu;
      var += d * d;
    }
    var /= T(cols);
    const T rs = T(1) / std::sqrt(var + eps);
    mean[i] = mu;
    rstd[i] = rs;
    for (int j = 0; j < cols; ++j)
      yi[j] = (xi[j] - mu) * rs * gain[j] + bias[j];
  }
}

template <typename T>
void layer_norm_rows_backward(const T* x, const T* gain, const T* mean,
                              const T* rstd, const T* dy, T* dx, T* dgain,
                              T* dbias, int rows, int cols) {
  // dgain/dbias accumulate across rows; keep that reduction serial so the
  // result is independent of the thread count.
  for (int i = 0; i < rows; ++i) {
    const T* xi = x + static_cast<size_t>(i) * cols;
    const T* di = dy + static_cast<size_t>(i) * cols;
    for (int j = 0; j < cols; ++j) {
      const T xhat = (xi[j] - mean[i]) * rstd[i];
      dgain[j] += di[j] * xhat;
      dbias[j] += di[j];
    }
  }
  const int nt = threads_for(static_cast<int64_t>(rows) * cols * 6);
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1)
  for (int i = 0; i < rows; ++i) {
    const T* xi = x + static_cast<size_t>(i) * cols;
    const T* di = dy + static_cast<size_t>(i) * cols;
    T* oi = dx + static_cast<size_t>(i) * cols;
    T s1 = T(0), s2 = T(0);
    for (int j = 0; j < cols; ++j) {
      const T dyh = di[j] * gain[j];
      const T xhat = (xi[j] - mean[i]) * rstd[i];
      s1 += dyh;
      s2 += dyh * xhat;
    }
    s1 /= T(cols);
    s2 /= T(cols);
    for (int j = 0; j < cols; ++j) {
      const T dyh = di[j] * gain[j];
      const T xhat = (xi[j] - mean[i]) * rstd[i];
      oi[j] += rstd[i] * (dyh - s1 - xhat * s2);
    }
  }
}

#define TABREC_INSTANTIATE(T)                                                 \
  template void matmul<T>(const T*, const T*, T*, int, int, int, bool);      \
  template void transpose<T>(const T*, T*, int, int);                        \
  template void softmax_rows<T>(const T*, T*, int, int);                     \
  template void softmax_rows_backward<T>(const T*, const T*, T*, int, int);  \
  template void layer_norm_rows<T>(const T*, const T*, const T*, T*, T*, T*, \
                                   int, int, T);                             \
  template void layer_norm_rows_backward<T>(const T*, const T*, const T*,    \
                                            const T*, const T*, T*, T*, T*,  \
                                            int, int);

TABREC_INSTANTIATE(float)
TABREC_INSTANTIATE(double)
#undef TABREC_INSTANTIATE

}  // namespace tabrec::kernels
