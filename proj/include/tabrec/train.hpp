#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tabrec/model.hpp"
#include "tabrec/optim.hpp"

namespace tabrec {

struct SampleTooLong : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  int batch_size = 8;
  int64_t total_steps = 1000;
  double peak_lr = 5e-5;
  double warmup_frac = 0.1;
  uint64_t seed = 1;
  std::string data_dir;
  std::string out_path;
  std::string init_from;      // warm-start parameters from a checkpoint
  int64_t checkpoint_interval = 500;
  std::string log_path;       // CSV; defaults to out_path + ".log.csv"
  double sigma_lr_mult = 1.0; // learning-rate multiplier on the s_k weights
  int threads = 0;            // kernel threads; 0 = OpenMP default
  ModelConfig model;

  void validate() const;
};

// Pads TSR/TR sequences to the per-batch maximum and copies targets.
// Padding is loss-neutral: masked positions carry zero weight and every
// reduction divides by mask totals.
Batch assemble_batch(const std::vector<const TrainSample*>& samples,
                     const ModelConfig& cfg);

struct StepResult {
  LossValues losses;
};

StepResult train_step(ParamMap<float>& params, OptimizerState<float>& opt,
                      const Batch& batch, const ModelConfig& cfg, double lr,
                      double sigma_lr_mult = 1.0);

struct TrainResult {
  ParamMap<float> params;
  ModelConfig model;
  int64_t steps_run = 0;
  LossValues final_losses;
};

// Full run: dataset load, deterministic batch sampling, schedule, CSV log,
// periodic checkpoints, resume from an existing out_path checkpoint.
TrainResult train_loop(const TrainConfig& cfg);

// In-memory variant used by tests and the acceptance suite; `stop` is polled
// between steps and may end the run early.
TrainResult train_loop_mem(const TrainConfig& cfg,
                           const std::vector<TrainSample>& data,
                           const std::function<bool(int64_t,
                                                    const LossValues&)>&
                               stop = {});

}  // namespace tabrec
