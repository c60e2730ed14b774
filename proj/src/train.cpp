#include "tabrec/train.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "tabrec/kernels.hpp"
#include "tabrec/losses.hpp"

namespace fs = std::filesystem;

namespace tabrec {

void TrainConfig::validate() const {
  if (batch_size < 1) throw StepOutOfRange("batch_size must be >= 1");
  if (total_steps < 1) throw StepOutOfRange("total_steps must be >= 1");
  if (warmup_frac <= 0.0 || warmup_frac >= 1.0)
    throw StepOutOfRange("warmup_frac must lie in (0,1)");
  model.validate();
}

Batch assemble_batch(const std::vector<const TrainSample*>& samples,
                     const ModelConfig& cfg) {
  Batch b;
  for (const TrainSample* s : samples) {
    const int tsr_in = static_cast<int>(s->tsr_tokens.size()) - 1;
    const int tr_in = static_cast<int>(s->tr_tokens.size()) - 1;
    if (tsr_in > cfg.max_decode_len || (cfg.use_lg && tr_in > cfg.max_decode_len))
      throw SampleTooLong("sequence of " +
                          std::to_string(std::max(tsr_in, tr_in)) +
                          " tokens exceeds max_decode_len " +
                          std::to_string(cfg.max_decode_len));
    b.tsr_len = std::max(b.tsr_len, static_cast<int>(s->tsr_tokens.size()));
    b.tr_len = std::max(b.tr_len, static_cast<int>(s->tr_tokens.size()));
  }
  for (const TrainSample* s : samples) {
    TrainSample padded = *s;
    padded.tsr_tokens.resize(b.tsr_len, PAD);
    padded.tr_tokens.resize(b.tr_len, PAD);
    b.items.push_back(std::move(padded));
  }
  return b;
}

namespace {

void check_finite(const LossValues& v) {
  auto bad = [](double x) { return !std::isfinite(x); };
  if (bad(v.lm)) throw NonFiniteLoss("loss_lm is not finite");
  if (bad(v.poly)) throw NonFiniteLoss("loss_poly is not finite");
  if (bad(v.span)) throw NonFiniteLoss("loss_span is not finite");
  if (v.has_vis && bad(v.vis)) throw NonFiniteLoss("loss_vis is not finite");
  if (v.has_lang && bad(v.lang))
    throw NonFiniteLoss("loss_lang is not finite");
  if (bad(v.total)) throw NonFiniteLoss("total loss is not finite");
}

}  // namespace

StepResult train_step(ParamMap<float>& params, OptimizerState<float>& opt,
                      const Batch& batch, const ModelConfig& cfg, double lr,
                      double sigma_lr_mult) {
  Graph<float> g;
  GraphParams<float> gp(g, params, /*trainable=*/true);
  LossTensors<float> losses;
  try {
    losses = model_losses(g, gp, batch, cfg);
  } catch (const EmptyAlignment&) {
    // A batch can lack aligned text cells entirely; retry without the
    // language term for this step.
    ModelConfig no_lang = cfg;
    no_lang.use_lg = false;
    Graph<float> g2;
    GraphParams<float> gp2(g2, params, true);
    losses = model_losses(g2, gp2, batch, no_lang);
    backward(losses.total);
    auto grads = gp2.collect_grads();
    adam_step(params, grads, opt, lr, {{"uncert.s", sigma_lr_mult}});
    StepResult r{losses.values()};
    check_finite(r.losses);
    return r;
  }
  backward(losses.total);
  auto grads = gp.collect_grads();
  adam_step(params, grads, opt, lr, {{"uncert.s", sigma_lr_mult}});
  StepResult r{losses.values()};
  check_finite(r.losses);
  return r;
}

namespace {

uint64_t mix(uint64_t a, uint64_t b) {
  uint64_t x = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  x ^= x >> 33;
  x *= 0xff51afd7ed558ccdULL;
  x ^= x >> 33;
  return x;
}

std::array<double, 5> sigma2_from(const ParamMap<float>& params) {
  std::array<double, 5> out{1, 1, 1, 1, 1};
  auto it = params.find("uncert.s");
  if (it != params.end())
    for (int k = 0; k < 5 && k < static_cast<int>(it->second.w.size()); ++k)
      out[k] = std::exp(static_cast<double>(it->second.w[k]));
  return out;
}

void write_log_header(std::ostream& os, const ModelConfig& m) {
  os << "step,lr,loss_lm,loss_poly,loss_span";
  if (m.use_vg) os << ",loss_vis";
  if (m.use_lg) os << ",loss_lang";
  if (m.use_ul) {
    os << ",sigma2_lm,sigma2_poly,sigma2_span";
    if (m.use_vg) os << ",sigma2_vis";
    if (m.use_lg) os << ",sigma2_lang";
  }
  os << ",total\n";
}

void write_log_row(std::ostream& os, int64_t step, double lr,
                   const LossValues& v, const ModelConfig& m,
                   const std::array<double, 5>& sigma2) {
  os << step << "," << lr << "," << v.lm << "," << v.poly << "," << v.span;
  if (m.use_vg) os << "," << v.vis;
  if (m.use_lg) os << "," << v.lang;
  if (m.use_ul) {
    os << "," << sigma2[0] << "," << sigma2[1] << "," << sigma2[2];
    if (m.use_vg) os << "," << sigma2[3];
    if (m.use_lg) os << "," << sigma2[4];
  }
  os << "," << v.total << "\n";
}

TrainResult run_loop(const TrainConfig& cfg,
                     const std::vector<TrainSample>& data,
                     const std::function<bool(int64_t, const LossValues&)>&
                         stop,
                     bool with_files) {
  cfg.validate();
  if (data.empty()) throw IoError("training dataset is empty");
  if (cfg.threads > 0) kernels::set_max_threads(cfg.threads);

  ParamMap<float> params;
  OptimizerState<float> opt;
  int64_t start_step = 0;

  const bool resumable = with_files && !cfg.out_path.empty() &&
                         fs::exists(cfg.out_path);
  if (resumable) {
    Checkpoint ck = load_checkpoint(cfg.out_path);
    if (ck.trainer && ck.config == cfg.model &&
        ck.trainer->step < cfg.total_steps) {
      params = std::move(ck.params);
      opt = std::move(ck.trainer->opt);
      start_step = ck.trainer->step;
      std::cerr << "resuming from step " << start_step << "\n";
    }
  }
  if (params.empty()) {
    if (!cfg.init_from.empty()) {
      Checkpoint ck = load_checkpoint(cfg.init_from);
      params = std::move(ck.params);
    } else {
      params = init_params(cfg.model, cfg.seed);
    }
  }

  std::ofstream log;
  if (with_files) {
    const std::string log_path =
        cfg.log_path.empty() ? cfg.out_path + ".log.csv" : cfg.log_path;
    log.open(log_path, start_step > 0 ? std::ios::app : std::ios::out);
    if (start_step == 0) write_log_header(log, cfg.model);
  }

  auto save = [&](int64_t step) {
    if (!with_files || cfg.out_path.empty()) return;
    TrainerState ts;
    ts.opt = opt;
    ts.step = step;
    ts.data_rng = std::to_string(cfg.seed);
    const std::string tmp = cfg.out_path + ".tmp";
    save_checkpoint(tmp, cfg.model, params, &ts);
    fs::rename(tmp, cfg.out_path);
  };

  TrainResult result;
  LossValues last;
  for (int64_t step = start_step + 1; step <= cfg.total_steps; ++step) {
    // Stateless per-step batch sampling keeps interrupted runs bit-exact.
    uint64_t h = mix(cfg.seed, static_cast<uint64_t>(step));
    std::vector<const TrainSample*> chosen;
    for (int i = 0; i < cfg.batch_size; ++i) {
      h = mix(h, static_cast<uint64_t>(i) + 0x51ULL);
      chosen.push_back(&data[h % data.size()]);
    }
    Batch batch = assemble_batch(chosen, cfg.model);
    const double lr = lr_schedule(step, cfg.total_steps, cfg.peak_lr,
                                  cfg.warmup_frac);
    StepResult sr;
    try {
      sr = train_step(params, opt, batch, cfg.model, lr, cfg.sigma_lr_mult);
    } catch (const NonFiniteLoss& e) {
      save(step - 1);
      throw NonFiniteLoss(std::string(e.what()) + " at step " +
                          std::to_string(step));
    }
    last = sr.losses;
    if (with_files)
      write_log_row(log, step, lr, sr.losses, cfg.model, sigma2_from(params));
    if (with_files && cfg.checkpoint_interval > 0 &&
        step % cfg.checkpoint_interval == 0)
      save(step);
    result.steps_run = step;
    if (stop && stop(step, sr.losses)) break;
  }
  save(result.steps_run);
  result.params = std::move(params);
  result.model = cfg.model;
  result.final_losses = last;
  return result;
}

}  // namespace

TrainResult train_loop(const TrainConfig& cfg) {
  std::vector<SynthSample> raw = load_dataset(cfg.data_dir);
  std::vector<TrainSample> data;
  int skipped = 0;
  for (const SynthSample& s : raw) {
    TrainSample t = to_train_sample(s);
    const int tsr_in = static_cast<int>(t.tsr_tokens.size()) - 1;
    const int tr_in = static_cast<int>(t.tr_tokens.size()) - 1;
    if (tsr_in > cfg.model.max_decode_len ||
        (cfg.model.use_lg && tr_in > cfg.model.max_decode_len)) {
      ++skipped;
      continue;
    }
    data.push_back(std::move(t));
  }
  if (skipped > 0)
    std::cerr << "warning: skipped " << skipped
              << " sample(s) longer than max_decode_len\n";
  return run_loop(cfg, data, {}, /*with_files=*/true);
}

TrainResult train_loop_mem(
    const TrainConfig& cfg, const std::vector<TrainSample>& data,
    const std::function<bool(int64_t, const LossValues&)>& stop) {
  return run_loop(cfg, data, stop, /*with_files=*/!cfg.out_path.empty());
}

}  // namespace tabrec
