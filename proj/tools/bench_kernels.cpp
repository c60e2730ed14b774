// Timing comparison between the OpenMP kernels and the serial reference,
// on the shapes the model actually runs, plus a whole training step.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <vector>

#include "tabrec/kernels.hpp"
#include "tabrec/rng.hpp"
#include "tabrec/train.hpp"

using namespace tabrec;
using Clock = std::chrono::steady_clock;

namespace {

template <typename F>
double bench_ms(F&& f, int reps) {
  f();  // warm up
  auto t0 = Clock::now();
  for (int i = 0; i < reps; ++i) f();
  return std::chrono::duration<double, std::milli>(Clock::now() - t0)
             .count() /
         reps;
}

float max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
  float m = 0;
  for (size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

void bench_matmul(int m, int k, int n, int reps) {
  Rng rng(1);
  std::vector<float> a(static_cast<size_t>(m) * k), b(static_cast<size_t>(k) * n);
  for (float& x : a) x = static_cast<float>(rng.normal());
  for (float& x : b) x = static_cast<float>(rng.normal());
  std::vector<float> c1(static_cast<size_t>(m) * n), c2(c1.size());
  const double par = bench_ms(
      [&] { kernels::matmul(a.data(), b.data(), c1.data(), m, k, n); }, reps);
  const double ser = bench_ms(
      [&] { kernels::ref::matmul(a.data(), b.data(), c2.data(), m, k, n); },
      reps);
  std::printf("matmul %5dx%4dx%5d  omp %8.3f ms (%6.1f GF/s)  serial %8.3f ms"
              "  speedup %.2fx  maxdiff %g\n",
              m, k, n, par, 2.0 * m * k * n / par / 1e6, ser, ser / par,
              max_abs_diff(c1, c2));
}

void bench_rowwise(int rows, int cols, int reps) {
  Rng rng(2);
  std::vector<float> x(static_cast<size_t>(rows) * cols);
  for (float& v : x) v = static_cast<float>(rng.normal());
  std::vector<float> y1(x.size()), y2(x.size());
  double par = bench_ms(
      [&] { kernels::softmax_rows(x.data(), y1.data(), rows, cols); }, reps);
  double ser = bench_ms(
      [&] { kernels::ref::softmax_rows(x.data(), y2.data(), rows, cols); },
      reps);
  std::printf("softmax %5dx%-5d       omp %8.3f ms  serial %8.3f ms"
              "  speedup %.2fx  maxdiff %g\n",
              rows, cols, par, ser, ser / par, max_abs_diff(y1, y2));

  std::vector<float> gain(cols, 1.0f), bias(cols, 0.0f), mean(rows),
      rstd(rows);
  par = bench_ms(
      [&] {
        kernels::layer_norm_rows(x.data(), gain.data(), bias.data(),
                                 y1.data(), mean.data(), rstd.data(), rows,
                                 cols, 1e-5f);
      },
      reps);
  ser = bench_ms(
      [&] {
        kernels::ref::layer_norm_rows(x.data(), gain.data(), bias.data(),
                                      y2.data(), mean.data(), rstd.data(),
                                      rows, cols, 1e-5f);
      },
      reps);
  std::printf("layernorm %5dx%-5d     omp %8.3f ms  serial %8.3f ms"
              "  speedup %.2fx  maxdiff %g\n",
              rows, cols, par, ser, ser / par, max_abs_diff(y1, y2));
}

double bench_train_step(int threads) {
  SynthConfig sc;
  sc.image_size = 96;
  sc.rows_min = sc.cols_min = 2;
  sc.rows_max = sc.cols_max = 4;
  Rng rng(7);
  std::vector<TrainSample> data;
  for (int i = 0; i < 4; ++i) data.push_back(to_train_sample(make_sample(rng, sc)));
  ModelConfig mc;
  ParamMap<float> params = init_params(mc, 1);
  OptimizerState<float> opt;
  std::vector<const TrainSample*> ptrs;
  for (const auto& s : data) ptrs.push_back(&s);
  Batch batch = assemble_batch(ptrs, mc);
  kernels::set_max_threads(threads);
  train_step(params, opt, batch, mc, 1e-4);  // warm up
  auto t0 = Clock::now();
  const int reps = 3;
  for (int i = 0; i < reps; ++i) train_step(params, opt, batch, mc, 1e-4);
  kernels::set_max_threads(0);
  return std::chrono::duration<double, std::milli>(Clock::now() - t0)
             .count() /
         reps;
}

}  // namespace

int main() {
  std::printf("== kernel shapes (model-sized) ==\n");
  bench_matmul(144, 128, 128, 100);   // encoder projections, 96px image
  bench_matmul(144, 128, 256, 50);    // encoder FFN
  bench_matmul(144, 32, 144, 200);    // attention scores per head
  bench_matmul(80, 128, 1048, 50);    // decoder logits
  bench_matmul(8, 128, 1000, 100);    // location-vocabulary scoring
  bench_rowwise(576, 144, 200);
  bench_rowwise(80, 1048, 200);

  std::printf("\n== full training step (batch 4, 96px, default model) ==\n");
  const double t1 = bench_train_step(1);
  std::printf("1 thread : %8.1f ms/step\n", t1);
  const double tn = bench_train_step(0);
  std::printf("all cores: %8.1f ms/step  speedup %.2fx\n", tn, t1 / tn);
  return 0;
}
