#pragma once

#include <cstdint>

namespace tabrec::kernels {

// OpenMP-parallel inner loops of the tensor engine. Parallelism is always
// over independent output elements (rows), so results are bit-identical to
// the serial reference for any thread count.

void set_max_threads(int n);  // <=0 restores the OpenMP default
int max_threads();

// C = A[m,k] * B[k,n]   (accumulates into C when acc)
template <typename T>
void matmul(const T* a, const T* b, T* c, int m, int k, int n,
            bool acc = false);

template <typename T>
void transpose(const T* a, T* at, int m, int n);

// Row-wise softmax with max-subtraction.
template <typename T>
void softmax_rows(const T* x, T* y, int rows, int cols);

// dx += y * (dy - sum_j dy_j y_j) per row, given forward output y.
template <typename T>
void softmax_rows_backward(const T* y, const T* dy, T* dx, int rows, int cols);

// y = (x - mean) * rstd * gain + bias per row; saves mean/rstd for backward.
template <typename T>
void layer_norm_rows(const T* x, const T* gain, const T* bias, T* y, T* mean,
                     T* rstd, int rows, int cols, T eps);

template <typename T>
void layer_norm_rows_backward(const T* x, const T* gain, const T* mean,
                              const T* rstd, const T* dy, T* dx, T* dgain,
                              T* dbias, int rows, int cols);

// Serial reference implementations, kept for correctness testing and the
// kernel benchmark. Same summation order as the parallel versions.
namespace ref {

template <typename T>
void matmul(const T* a, const T* b, T* c, int m, int k, int n,
            bool acc = false);

template <typename T>
void transpose(const T* a, T* at, int m, int n);

template <typename T>
void softmax_rows(const T* x, T* y, int rows, int cols);

template <typename T>
void softmax_rows_backward(const T* y, const T* dy, T* dx, int rows, int cols);

template <typename T>
void layer_norm_rows(const T* x, const T* gain, const T* bias, T* y, T* mean,
                     T* rstd, int rows, int cols, T eps);

template <typename T>
void layer_norm_rows_backward(const T* x, const T* gain, const T* mean,
                              const T* rstd, const T* dy, T* dx, T* dgain,
                              T* dbias, int rows, int cols);

}  // namespace ref

}  // namespace tabrec::kernels
