#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <string>
#include <vector>

#include "dttnet/checkpoint.hpp"
#include "dttnet/data.hpp"
#include "dttnet/metrics.hpp"
#include "dttnet/model.hpp"

namespace dttnet {
namespace train {

struct TrainConfig {
  real learning_rate = 2e-4;
  real beta1 = 0.9;
  real beta2 = 0.999;
  real weight_decay = 1e-2;  // decoupled
  real adam_eps = 1e-8;
  real clip_norm = 5.0;      // global-norm gradient clip
  long epoch_size = 3240;    // chunks per epoch; 324 for fine-tuning
  long max_epochs = 1;
  long batch_size = 8;
  uint64_t seed = 0;
  data::TrainMode mode = data::TrainMode::base;
  bool augment = true;
  real valid_overlap = 0.5;
  std::string out_dir = "train_out";

  void validate() const {
    check_config(learning_rate > 0 && batch_size > 0 && epoch_size > 0 && max_epochs >= 0,
                 "train: learning_rate, batch_size, epoch_size must be positive");
    check_config(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, "train: betas in [0,1)");
    check_config(weight_decay >= 0 && clip_norm > 0, "train: decay >= 0, clip_norm > 0");
  }
};

// AdamW with decoupled weight decay; moment tensors align with the registry.
class AdamW {
 public:
  AdamW(const nn::ParamRegistry& reg, const TrainConfig& cfg) : cfg_(cfg) {
    for (const auto& p : reg.items()) {
      m_.emplace_back(p.value->dims());
      v_.emplace_back(p.value->dims());
    }
  }

  long step_count() const { return step_; }

  // Clips the global gradient norm, then applies one update.
  void step(nn::ParamRegistry& reg) {
    real sq = 0.0;
    for (const auto& p : reg.items()) sq += p.grad->sq_norm();
    real norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw NumericError("adamw: non-finite gradient norm");
    real scale = norm > cfg_.clip_norm ? cfg_.clip_norm / norm : 1.0;

    ++step_;
    const real bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<real>(step_));
    const real bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<real>(step_));
    auto& items = reg.items();
    for (size_t i = 0; i < items.size(); ++i) {
      Tensor& w = *items[i].value;
      Tensor& g = *items[i].grad;
      Tensor& m = m_[i];
      Tensor& v = v_[i];
      for (long j = 0; j < w.numel(); ++j) {
        real gj = g[j] * scale;
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
        real mh = m[j] / bc1, vh = v[j] / bc2;
        w[j] -= cfg_.learning_rate * (mh / (std::sqrt(vh) + cfg_.adam_eps) +
                                      cfg_.weight_decay * w[j]);
      }
    }
  }

  // Optimizer state round trip for resumable training.
  void export_state(checkpoint::Checkpoint& ck, const nn::ParamRegistry& reg) const {
    ck.opt_step = step_;
    ck.opt_state.clear();
    for (size_t i = 0; i < reg.items().size(); ++i) {
      ck.opt_state.emplace_back("adamw.m." + reg.items()[i].name, m_[i]);
      ck.opt_state.emplace_back("adamw.v." + reg.items()[i].name, v_[i]);
    }
  }

  void import_state(const checkpoint::Checkpoint& ck, const nn::ParamRegistry& reg) {
    if (ck.opt_state.empty()) return;
    check_data(ck.opt_state.size() == 2 * reg.items().size(),
               "adamw: optimizer state size mismatch");
    step_ = ck.opt_step;
    for (size_t i = 0; i < reg.items().size(); ++i) {
      m_[i] = ck.opt_state[2 * i].second;
      v_[i] = ck.opt_state[2 * i + 1].second;
    }
  }

 private:
  TrainConfig cfg_;
  long step_ = 0;
  std::vector<Tensor> m_, v_;
};

// One chunk through the waveform-loss path: stft -> trim -> network ->
// restore -> istft, L1 against the target waveform; gradients flow back
// through the istft adjoint. Returns (loss contribution, grad flag).
struct ChunkLoss {
  real loss_sum = 0.0;  // sum of |err| over samples
  long n_samples = 0;
};

inline ChunkLoss chunk_forward_backward(model::DttNet& m, const Waveform& mix,
                                        const Waveform& target, real inv_total,
                                        bool do_backward = true) {
  const auto& sp = m.config().spectral;
  const long div = 1L << m.config().depth;
  spectral::ComplexSpectrogram s = spectral::stft(mix, sp);
  const long T = s.frames(), keep = T - T % div;
  check(keep >= 1, "train: chunk too short for the network");

  Tensor x({1, s.data.dim(0), s.data.dim(1), keep});
  for (long c = 0; c < s.data.dim(0); ++c)
    for (long f = 0; f < s.data.dim(1); ++f)
      for (long t = 0; t < keep; ++t) x.at(0, c, f, t) = s.data.at(c, f, t);

  model::DttNet::Ctx ctx = m.make_ctx();
  Tensor y = m.forward(x, do_backward ? &ctx : nullptr);

  spectral::ComplexSpectrogram est = s;
  est.data.zero();
  for (long c = 0; c < s.data.dim(0); ++c)
    for (long f = 0; f < s.data.dim(1); ++f)
      for (long t = 0; t < keep; ++t) est.data.at(c, f, t) = y.at(0, c, f, t);
  Waveform pred = spectral::istft(est, sp);

  check(pred.length() == target.length() && pred.channels() == target.channels(),
        "train: prediction/target geometry mismatch");

  ChunkLoss cl;
  cl.n_samples = pred.samples.numel();
  Tensor gwave(pred.samples.dims());
  for (long i = 0; i < pred.samples.numel(); ++i) {
    real d = pred.samples[i] - target.samples[i];
    cl.loss_sum += std::abs(d);
    gwave[i] = (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)) * inv_total;
  }
  if (!do_backward) return cl;

  Tensor gspec = spectral::istft_adjoint(gwave, sp, s.bins(), T);
  Tensor gx({1, s.data.dim(0), s.data.dim(1), keep});
  for (long c = 0; c < s.data.dim(0); ++c)
    for (long f = 0; f < s.data.dim(1); ++f)
      for (long t = 0; t < keep; ++t) gx.at(0, c, f, t) = gspec.at(c, f, t);
  m.backward(gx, ctx);
  return cl;
}

// One optimizer update on a batch of (mix, target) chunks. The loss is the
// mean absolute waveform error over the batch. Non-finite losses abort with
// a diagnostic dump instead of corrupting the parameters.
inline real train_step(model::DttNet& m, AdamW& opt,
                       const std::vector<std::pair<Waveform, Waveform>>& batch) {
  check(!batch.empty(), "train_step: empty batch");
  long total = 0;
  for (const auto& [mix, target] : batch) total += target.samples.numel();
  const real inv_total = 1.0 / static_cast<real>(total);

  m.params().zero_grads();
  real loss_sum = 0.0;
  for (size_t i = 0; i < batch.size(); ++i) {
    ChunkLoss cl = chunk_forward_backward(m, batch[i].first, batch[i].second, inv_total);
    if (!std::isfinite(cl.loss_sum)) {
      real gn = 0.0;
      for (const auto& p : m.params().items()) gn += p.grad->sq_norm();
      throw NumericError("train_step: non-finite loss at batch item " + std::to_string(i) +
                         " (grad sq-norm so far " + std::to_string(gn) + ")");
    }
    loss_sum += cl.loss_sum;
  }
  real loss = loss_sum * inv_total;
  if (!std::isfinite(loss)) throw NumericError("train_step: non-finite batch loss");
  opt.step(m.params());
  return loss;
}

// Full-song chunked inference against each validation track's target stem.
inline real validate(const model::DttNet& m, const data::TrackSet& valid,
                     const std::string& source, real overlap) {
  check(!valid.tracks.empty(), "validate: empty validation set");
  std::vector<Waveform> ests;
  std::vector<std::pair<const Waveform*, const Waveform*>> pairs;
  ests.reserve(valid.tracks.size());
  for (const auto& track : valid.tracks) {
    check_data(track.stems.count(source) == 1,
               "validate: track " + track.id + " lacks stem " + source);
    ests.push_back(model::separate(track.mixture, m, overlap));
    pairs.push_back({&track.stems.at(source), &ests.back()});
  }
  return metrics::usdr(pairs);
}

struct TrainState {
  long epoch = 0;
  real best_usdr = -std::numeric_limits<real>::infinity();
  long best_epoch = -1;
  std::string best_path;
  std::vector<real> loss_history;
  std::vector<real> usdr_history;
  std::vector<long> steps_history;  // optimizer steps per epoch
  data::SamplerLog sampler_log;
};

// Epoch loop: epoch_size chunks per epoch, ceil(epoch_size/batch_size)
// optimizer steps, validation uSDR checkpoint selection. Per-epoch RNG
// streams derive from (seed, epoch) so a resumed run continues identically.
inline TrainState fit(model::DttNet& m, const TrainConfig& cfg, const data::TrackSet& train_set,
                      const data::TrackSet& valid_set, const data::PatternBank* bank,
                      std::ostream& log = std::cerr, const std::string& resume_path = {}) {
  cfg.validate();
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  const std::string source = m.config().source;
  for (const auto* set : {&train_set, &valid_set})
    for (const auto& t : set->tracks)
      check_data(t.mixture.sample_rate == m.config().sample_rate,
                 "fit: track " + t.id + " sample rate does not match the model (no resampling)");

  AdamW opt(m.params(), cfg);
  TrainState state;
  long start_epoch = 0;
  if (!resume_path.empty()) {
    checkpoint::Checkpoint ck = checkpoint::Checkpoint::load(resume_path);
    checkpoint::restore(m, ck);
    opt.import_state(ck, m.params());
    start_epoch = ck.epoch;
    state.best_usdr = ck.best_usdr;
    log << "[train] resumed from " << resume_path << " at epoch " << start_epoch << "\n";
  }

  std::ofstream log_file(fs::path(cfg.out_dir) / "train_log.txt",
                         start_epoch > 0 ? std::ios::app : std::ios::trunc);

  Rng base(cfg.seed);
  for (long epoch = start_epoch; epoch < cfg.max_epochs; ++epoch) {
    data::ChunkSampler sampler(train_set, source, m.config().chunk_samples(),
                               cfg.augment, bank, cfg.mode, log);
    Rng erng = base.derive(static_cast<uint64_t>(epoch) + 1);

    real loss_acc = 0.0;
    long steps = 0, drawn = 0;
    while (drawn < cfg.epoch_size) {
      long n = std::min(cfg.batch_size, cfg.epoch_size - drawn);
      std::vector<std::pair<Waveform, Waveform>> batch;
      batch.reserve(static_cast<size_t>(n));
      for (long i = 0; i < n; ++i) batch.push_back(sampler.draw(erng));
      loss_acc += train_step(m, opt, batch);
      ++steps;
      drawn += n;
    }
    real mean_loss = loss_acc / static_cast<real>(steps);
    state.loss_history.push_back(mean_loss);
    state.steps_history.push_back(steps);
    for (const auto& e : sampler.log()) state.sampler_log.push_back(e);

    real val = validate(m, valid_set, source, cfg.valid_overlap);
    state.usdr_history.push_back(val);
    bool best = val > state.best_usdr;
    if (best) {
      state.best_usdr = val;
      state.best_epoch = epoch;
      checkpoint::Checkpoint ck = checkpoint::snapshot(m, epoch + 1, state.best_usdr);
      state.best_path = (fs::path(cfg.out_dir) / "best.ckpt").string();
      ck.save(state.best_path);
    }
    // Periodic snapshot with optimizer state for resumption.
    checkpoint::Checkpoint last = checkpoint::snapshot(m, epoch + 1, state.best_usdr);
    opt.export_state(last, m.params());
    last.save((fs::path(cfg.out_dir) / "last.ckpt").string());

    std::ostringstream line;
    line << "epoch=" << epoch + 1 << " loss=" << mean_loss << " val_usdr=" << val
         << " best=" << (best ? 1 : 0);
    log << "[train] " << line.str() << "\n";
    if (log_file) log_file << line.str() << "\n";
    state.epoch = epoch + 1;
  }
  return state;
}

}  // namespace train
}  // namespace dttnet
