#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tabrec/array.hpp"

namespace tabrec {

template <typename T>
struct Param {
  std::vector<int> shape;
  std::vector<T> w;
  int64_t numel() const { return static_cast<int64_t>(w.size()); }
};

// Ordered by name so every iteration order (updates, checkpoints, gradient
// checks) is deterministic.
template <typename T>
using ParamMap = std::map<std::string, Param<T>>;

template <typename U, typename T>
ParamMap<U> cast_params(const ParamMap<T>& p) {
  ParamMap<U> out;
  for (const auto& [name, par] : p) {
    Param<U> q;
    q.shape = par.shape;
    q.w.assign(par.w.begin(), par.w.end());
    out[name] = std::move(q);
  }
  return out;
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct OptimizerState {
  std::map<std::string, std::vector<T>> m;  // first moments
  std::map<std::string, std::vector<T>> v;  // second moments
  int64_t step = 0;
  AdamConfig cfg;
};

// Bias-corrected Adam update over every parameter present in grads.
// Parameters whose name appears in lr_overrides use lr * multiplier.
template <typename T>
void adam_step(ParamMap<T>& params,
               const std::map<std::string, std::vector<T>>& grads,
               OptimizerState<T>& state, double lr,
               const std::map<std::string, double>& lr_mult = {}) {
  state.step += 1;
  const double b1 = state.cfg.beta1, b2 = state.cfg.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (auto& [name, par] : params) {
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    const std::vector<T>& gvec = git->second;
    if (gvec.size() != par.w.size())
      throw ShapeMismatch("adam_step: gradient size mismatch for " + name);
    std::vector<T>& m = state.m[name];
    std::vector<T>& v = state.v[name];
    if (m.empty()) m.assign(par.w.size(), T(0));
    if (v.empty()) v.assign(par.w.size(), T(0));
    double step_lr = lr;
    if (auto it = lr_mult.find(name); it != lr_mult.end())
      step_lr *= it->second;
    for (size_t i = 0; i < par.w.size(); ++i) {
      const double gi = static_cast<double>(gvec[i]);
      const double mi = b1 * static_cast<double>(m[i]) + (1.0 - b1) * gi;
      const double vi = b2 * static_cast<double>(v[i]) + (1.0 - b2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      par.w[i] = static_cast<T>(static_cast<double>(par.w[i]) -
                                step_lr * mhat /
                                    (std::sqrt(vhat) + state.cfg.eps));
    }
  }
}

// Linear warmup over the first ceil(warmup_frac * total) steps, then linear
// decay to zero at total_steps.
inline double lr_schedule(int64_t step, int64_t total_steps, double peak_lr,
                          double warmup_frac = 0.1) {
  if (step < 0 || step > total_steps)
    throw StepOutOfRange("lr_schedule: step " + std::to_string(step) +
                         " outside [0," + std::to_string(total_steps) + "]");
  const int64_t warmup = static_cast<int64_t>(
      std::ceil(warmup_frac * static_cast<double>(total_steps)));
  if (warmup > 0 && step <= warmup)
    return peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
  if (total_steps == warmup) return 0.0;
  return peak_lr * static_cast<double>(total_steps - step) /
         static_cast<double>(total_steps - warmup);
}

}  // namespace tabrec
