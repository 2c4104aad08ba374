#pragma once

#include <string>

#include "dttnet/nn.hpp"

namespace dttnet {
namespace idpm {

struct IdpmConfig {
  int heads = 2;
  int repeats = 4;
  long group_norm_channels = 16;
  long latent_channels = 0;

  void validate() const {
    check_config(heads >= 1, "idpm: heads must be >= 1");
    check_config(repeats >= 0, "idpm: repeats must be >= 0");
    check_config(latent_channels >= 1 && latent_channels % heads == 0,
                 "idpm: heads must divide latent channels");
    long per_head = latent_channels / heads;
    check_config(group_norm_channels >= 1 && per_head % group_norm_channels == 0,
                 "idpm: group_norm_channels must divide per-head channels");
  }
};

// Contiguous channel blocks fold straight into the batch axis, so head
// splitting is a pure reinterpretation of the buffer: bitwise invertible.
inline Tensor split_heads(const Tensor& x, int heads) {
  check(x.rank() == 4, "split_heads: need [B x C x F x T]");
  check(heads >= 1 && x.dim(1) % heads == 0, "split_heads: heads must divide channels");
  return x.reshaped({x.dim(0) * heads, x.dim(1) / heads, x.dim(2), x.dim(3)});
}

inline Tensor merge_heads(const Tensor& x, int heads) {
  check(x.rank() == 4, "merge_heads: need [B*H x C' x F x T]");
  check(heads >= 1 && x.dim(0) % heads == 0, "merge_heads: heads must divide batch");
  return x.reshaped({x.dim(0) / heads, x.dim(1) * heads, x.dim(2), x.dim(3)});
}

enum class Axis { time, frequency };

// One RNN block of the dual-path pair: GroupNorm, then a BLSTM along the
// chosen axis (the other spatial axis rides in the batch), an FC projection
// back to C', and a residual add. BLSTM state starts at zero every call.
struct RnnBlock {
  Axis axis = Axis::time;
  long channels = 0;
  nn::GroupNorm norm;
  nn::Blstm blstm;
  nn::Linear fc;

  struct Ctx {
    nn::GroupNorm::Ctx norm;
    nn::Blstm::Ctx blstm;
    nn::Linear::Ctx fc;
    long B = 0, F = 0, T = 0;
  };

  RnnBlock() = default;
  RnnBlock(Axis a, long c, long gn_channels)
      : axis(a), channels(c), norm(c, gn_channels), blstm(c, 2 * c), fc(4 * c, c) {}

  void init(Rng& rng) {
    blstm.init(rng);
    fc.init(rng);
  }

  void collect(const std::string& prefix, nn::ParamRegistry& reg) {
    norm.collect(prefix + ".norm", reg);
    blstm.collect(prefix + ".blstm", reg);
    fc.collect(prefix + ".fc", reg);
  }

  Tensor forward(const Tensor& x, Ctx* ctx) const {
    check(x.rank() == 4 && x.dim(1) == channels, "RnnBlock: channel mismatch");
    const long B = x.dim(0), F = x.dim(2), T = x.dim(3);
    Tensor y = norm.forward(x, ctx ? &ctx->norm : nullptr);
    Tensor seq = fold(y, axis);
    Tensor h = blstm.forward(seq, ctx ? &ctx->blstm : nullptr);
    Tensor o = fc.forward(h, h.dim(0) * h.dim(1), ctx ? &ctx->fc : nullptr);
    Tensor out = x;
    unfold_add(o.reshaped({seq.dim(0), seq.dim(1), channels}), axis, out);
    if (ctx) {
      ctx->B = B;
      ctx->F = F;
      ctx->T = T;
    }
    return out;
  }

  Tensor backward(const Tensor& gy, const Ctx& ctx) {
    Tensor gseq_out = fold(gy, axis);
    const long S = gseq_out.dim(0), Nb = gseq_out.dim(1);
    Tensor go = fc.backward(gseq_out.reshaped({S * Nb, channels}), ctx.fc);
    Tensor gh = blstm.backward(go.reshaped({S, Nb, 4 * channels}), ctx.blstm);
    Tensor gx = gy;  // residual path
    Tensor gnorm({ctx.B, channels, ctx.F, ctx.T});
    unfold_assign(gh, axis, gnorm);
    gx += norm.backward(gnorm, ctx.norm);
    return gx;
  }

  long param_count() const {
    return norm.param_count() + blstm.param_count() + fc.param_count();
  }

 private:
  // [N x C x F x T] -> [S x Nb x C]; time: S=T, Nb=N*F; frequency: S=F, Nb=N*T.
  static Tensor fold(const Tensor& x, Axis axis) {
    const long N = x.dim(0), C = x.dim(1), F = x.dim(2), T = x.dim(3);
    if (axis == Axis::time) {
      Tensor seq({T, N * F, C});
      for (long n = 0; n < N; ++n)
        for (long c = 0; c < C; ++c) {
          const real* xp = x.data() + ((n * C + c) * F) * T;
          for (long f = 0; f < F; ++f)
            for (long t = 0; t < T; ++t) seq.at(t, n * F + f, c) = xp[f * T + t];
        }
      return seq;
    }
    Tensor seq({F, N * T, C});
    for (long n = 0; n < N; ++n)
      for (long c = 0; c < C; ++c) {
        const real* xp = x.data() + ((n * C + c) * F) * T;
        for (long f = 0; f < F; ++f)
          for (long t = 0; t < T; ++t) seq.at(f, n * T + t, c) = xp[f * T + t];
      }
    return seq;
  }

  static void unfold_add(const Tensor& seq, Axis axis, Tensor& y) {
    const long N = y.dim(0), C = y.dim(1), F = y.dim(2), T = y.dim(3);
    for (long n = 0; n < N; ++n)
      for (long c = 0; c < C; ++c) {
        real* yp = y.data() + ((n * C + c) * F) * T;
        for (long f = 0; f < F; ++f)
          for (long t = 0; t < T; ++t)
            yp[f * T + t] += axis == Axis::time ? seq.at(t, n * F + f, c) : seq.at(f, n * T + t, c);
      }
  }

  static void unfold_assign(const Tensor& seq, Axis axis, Tensor& y) {
    const long N = y.dim(0), C = y.dim(1), F = y.dim(2), T = y.dim(3);
    for (long n = 0; n < N; ++n)
      for (long c = 0; c < C; ++c) {
        real* yp = y.data() + ((n * C + c) * F) * T;
        for (long f = 0; f < F; ++f)
          for (long t = 0; t < T; ++t)
            yp[f * T + t] = axis == Axis::time ? seq.at(t, n * F + f, c) : seq.at(f, n * T + t, c);
      }
  }
};

// Improved Dual-Path Module: split C into H heads, run a time-axis RNN block
// then a frequency-axis RNN block per head, merge heads back.
struct Idpm {
  int heads = 1;
  RnnBlock time_block, freq_block;

  struct Ctx {
    RnnBlock::Ctx time, freq;
  };

  Idpm() = default;
  Idpm(const IdpmConfig& cfg)
      : heads(cfg.heads),
        time_block(Axis::time, cfg.latent_channels / cfg.heads, cfg.group_norm_channels),
        freq_block(Axis::frequency, cfg.latent_channels / cfg.heads, cfg.group_norm_channels) {}

  void init(Rng& rng) {
    time_block.init(rng);
    freq_block.init(rng);
  }

  void collect(const std::string& prefix, nn::ParamRegistry& reg) {
    time_block.collect(prefix + ".time", reg);
    freq_block.collect(prefix + ".freq", reg);
  }

  Tensor forward(const Tensor& x, Ctx* ctx) const {
    Tensor y = split_heads(x, heads);
    y = time_block.forward(y, ctx ? &ctx->time : nullptr);
    y = freq_block.forward(y, ctx ? &ctx->freq : nullptr);
    return merge_heads(y, heads);
  }

  Tensor backward(const Tensor& gy, const Ctx& ctx) {
    Tensor g = split_heads(gy, heads);
    g = freq_block.backward(g, ctx.freq);
    g = time_block.backward(g, ctx.time);
    return merge_heads(g, heads);
  }

  long param_count() const { return time_block.param_count() + freq_block.param_count(); }
};

}  // namespace idpm
}  // namespace dttnet
