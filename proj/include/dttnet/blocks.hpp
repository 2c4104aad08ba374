#pragma once

#include <array>
#include <string>

#include "dttnet/nn.hpp"

namespace dttnet {
namespace blocks {

// Conv sub-block: normalization -> GELU -> 3x3 conv (pre-activation order,
// so zeroed conv weights make the block output exactly zero).
struct ConvBlock {
  nn::InstanceNorm norm;
  nn::Conv2d conv;

  struct Ctx {
    nn::InstanceNorm::Ctx norm;
    Tensor act_in;
    nn::Conv2d::Ctx conv;
  };

  ConvBlock() = default;
  ConvBlock(long channels, int kernel) : norm(channels), conv(channels, channels, kernel) {}

  void init(Rng& rng) { conv.init(rng); }

  void collect(const std::string& prefix, nn::ParamRegistry& reg) {
    norm.collect(prefix + ".norm", reg);
    conv.collect(prefix + ".conv", reg);
  }

  Tensor forward(const Tensor& x, Ctx* ctx) const {
    Tensor y = norm.forward(x, ctx ? &ctx->norm : nullptr);
    if (ctx) ctx->act_in = y;
    nn::gelu_inplace(y);
    return conv.forward(y, ctx ? &ctx->conv : nullptr);
  }

  Tensor backward(const Tensor& gy, const Ctx& ctx) {
    Tensor g = conv.backward(gy, ctx.conv);
    for (long i = 0; i < g.numel(); ++i) g[i] *= nn::gelu_grad(ctx.act_in[i]);
    return norm.backward(g, ctx.norm);
  }

  long param_count() const { return norm.param_count() + conv.param_count(); }
};

// Time-Frequency Convolutions: three conv sub-blocks in sequence.
struct Tfc {
  std::array<ConvBlock, 3> sub;

  struct Ctx {
    std::array<ConvBlock::Ctx, 3> sub;
  };

  Tfc() = default;
  Tfc(long channels, int kernel) {
    for (auto& s : sub) s = ConvBlock(channels, kernel);
  }

  void init(Rng& rng) {
    for (auto& s : sub) s.init(rng);
  }

  void collect(const std::string& prefix, nn::ParamRegistry& reg) {
    for (size_t i = 0; i < sub.size(); ++i)
      sub[i].collect(prefix + ".conv" + std::to_string(i), reg);
  }

  Tensor forward(const Tensor& x, Ctx* ctx) const {
    Tensor y = sub[0].forward(x, ctx ? &ctx->sub[0] : nullptr);
    y = sub[1].forward(y, ctx ? &ctx->sub[1] : nullptr);
    return sub[2].forward(y, ctx ? &ctx->sub[2] : nullptr);
  }

  Tensor backward(const Tensor& gy, const Ctx& ctx) {
    Tensor g = sub[2].backward(gy, ctx.sub[2]);
    g = sub[1].backward(g, ctx.sub[1]);
    return sub[0].backward(g, ctx.sub[0]);
  }

  long param_count() const {
    long n = 0;
    for (const auto& s : sub) n += s.param_count();
    return n;
  }
};

// Time-Distributed Fully-connected layer, residual over the frequency axis:
// out = x + expand(gelu(reduce(x))), reduce F -> F/bf, expand F/bf -> F,
// with weights shared across every (B, C, T) fiber.
struct Tdf {
  long freq = 0;
  int bf = 1;
  nn::Linear reduce, expand;

  struct Ctx {
    nn::Linear::Ctx reduce;
    Tensor act_in;
    nn::Linear::Ctx expand;
    std::vector<long> x_dims;
  };

  Tdf() = default;
  Tdf(long f, int bottleneck) : freq(f), bf(bottleneck) {
    check_config(bf >= 1 && f % bf == 0, "Tdf: bottleneck factor must divide F");
    reduce = nn::Linear(f, f / bf);
    expand = nn::Linear(f / bf, f);
  }

  void init(Rng& rng) {
    reduce.init(rng);
    expand.init(rng);
  }

  void collect(const std::string& prefix, nn::ParamRegistry& reg) {
    reduce.collect(prefix + ".reduce", reg);
    expand.collect(prefix + ".expand", reg);
  }

  // The F axis is not contiguous in [B x C x F x T]; transpose fibers into
  // [B*C*T x F] rows, run the bottleneck, and transpose back.
  Tensor forward(const Tensor& x, Ctx* ctx) const {
    check(x.rank() == 4 && x.dim(2) == freq, "Tdf: frequency size mismatch");
    const long B = x.dim(0), C = x.dim(1), F = x.dim(2), T = x.dim(3);
    Tensor rows({B * C * T, F});
    gather_fibers(x, rows);
    Tensor mid = reduce.forward(rows, B * C * T, ctx ? &ctx->reduce : nullptr);
    if (ctx) ctx->act_in = mid;
    nn::gelu_inplace(mid);
    Tensor out_rows = expand.forward(mid, B * C * T, ctx ? &ctx->expand : nullptr);
    Tensor y = x;
    scatter_fibers_add(out_rows, y);
    if (ctx) ctx->x_dims = x.dims();
    return y;
  }

  Tensor backward(const Tensor& gy, const Ctx& ctx) {
    const long B = gy.dim(0), C = gy.dim(1), F = gy.dim(2), T = gy.dim(3);
    Tensor grows({B * C * T, F});
    gather_fibers(gy, grows);
    Tensor gmid = expand.backward(grows, ctx.expand);
    for (long i = 0; i < gmid.numel(); ++i) gmid[i] *= nn::gelu_grad(ctx.act_in[i]);
    Tensor gin_rows = reduce.backward(gmid, ctx.reduce);
    Tensor gx = gy;  // residual path
    scatter_fibers_add(gin_rows, gx);
    return gx;
  }

  long param_count() const { return reduce.param_count() + expand.param_count(); }

 private:
  static void gather_fibers(const Tensor& x, Tensor& rows) {
    const long B = x.dim(0), C = x.dim(1), F = x.dim(2), T = x.dim(3);
    for (long b = 0; b < B; ++b)
      for (long c = 0; c < C; ++c) {
        const real* xp = x.data() + ((b * C + c) * F) * T;
        real* rp = rows.data() + (b * C + c) * T * F;
        for (long f = 0; f < F; ++f)
          for (long t = 0; t < T; ++t) rp[t * F + f] = xp[f * T + t];
      }
  }

  static void scatter_fibers_add(const Tensor& rows, Tensor& y) {
    const long B = y.dim(0), C = y.dim(1), F = y.dim(2), T = y.dim(3);
    for (long b = 0; b < B; ++b)
      for (long c = 0; c < C; ++c) {
        real* yp = y.data() + ((b * C + c) * F) * T;
        const real* rp = rows.data() + (b * C + c) * T * F;
        for (long f = 0; f < F; ++f)
          for (long t = 0; t < T; ++t) yp[f * T + t] += rp[t * F + f];
      }
  }
};

// Residual convolution block: y1 = TFC(x); y2 = y1 + TDF core(y1);
// y3 = TFC(y2); out = y3 + Conv1x1(x).
struct TfcTdfV3 {
  Tfc tfc1, tfc2;
  Tdf tdf;
  nn::Conv2d res;

  struct Ctx {
    Tfc::Ctx tfc1, tfc2;
    Tdf::Ctx tdf;
    nn::Conv2d::Ctx res;
  };

  TfcTdfV3() = default;
  TfcTdfV3(long channels, long freq, int bf, int kernel = 3)
      : tfc1(channels, kernel), tfc2(channels, kernel), tdf(freq, bf),
        res(channels, channels, 1) {}

  void init(Rng& rng) {
    tfc1.init(rng);
    tfc2.init(rng);
    tdf.init(rng);
    res.init(rng);
  }

  void collect(const std::string& prefix, nn::ParamRegistry& reg) {
    tfc1.collect(prefix + ".tfc1", reg);
    tdf.collect(prefix + ".tdf", reg);
    tfc2.collect(prefix + ".tfc2", reg);
    res.collect(prefix + ".res", reg);
  }

  Tensor forward(const Tensor& x, Ctx* ctx) const {
    Tensor y = tfc1.forward(x, ctx ? &ctx->tfc1 : nullptr);
    y = tdf.forward(y, ctx ? &ctx->tdf : nullptr);
    y = tfc2.forward(y, ctx ? &ctx->tfc2 : nullptr);
    y += res.forward(x, ctx ? &ctx->res : nullptr);
    return y;
  }

  Tensor backward(const Tensor& gy, const Ctx& ctx) {
    Tensor g = tfc2.backward(gy, ctx.tfc2);
    g = tdf.backward(g, ctx.tdf);
    g = tfc1.backward(g, ctx.tfc1);
    g += res.backward(gy, ctx.res);
    return g;
  }

  long param_count() const {
    return tfc1.param_count() + tfc2.param_count() + tdf.param_count() + res.param_count();
  }
};

// 3x3 stride-2 conv: [B x C x F x T] -> [B x (C+g) x F/2 x T/2].
struct Downsample {
  nn::Conv2d conv;

  using Ctx = nn::Conv2d::Ctx;

  Downsample() = default;
  Downsample(long channels, long growth) : conv(channels, channels + growth, 3, 2, 1) {}

  void init(Rng& rng) { conv.init(rng); }
  void collect(const std::string& prefix, nn::ParamRegistry& reg) { conv.collect(prefix, reg); }

  Tensor forward(const Tensor& x, Ctx* ctx) const {
    check(x.dim(2) % 2 == 0 && x.dim(3) % 2 == 0, "Downsample: F and T must be even");
    return conv.forward(x, ctx);
  }

  Tensor backward(const Tensor& gy, const Ctx& ctx) { return conv.backward(gy, ctx); }

  long param_count() const { return conv.param_count(); }
};

// 3x3 stride-2 transposed conv: [B x C x F x T] -> [B x (C-g) x 2F x 2T].
struct Upsample {
  nn::ConvTranspose2d conv;

  using Ctx = nn::ConvTranspose2d::Ctx;

  Upsample() = default;
  Upsample(long channels, long growth) : conv(channels, shrunk(channels, growth), 3, 2) {}

  static long shrunk(long channels, long growth) {
    check_config(channels > growth, "Upsample: channels must exceed growth");
    return channels - growth;
  }

  void init(Rng& rng) { conv.init(rng); }
  void collect(const std::string& prefix, nn::ParamRegistry& reg) { conv.collect(prefix, reg); }

  Tensor forward(const Tensor& x, Ctx* ctx) const { return conv.forward(x, ctx); }
  Tensor backward(const Tensor& gy, const Ctx& ctx) { return conv.backward(gy, ctx); }

  long param_count() const { return conv.param_count(); }
};

}  // namespace blocks
}  // namespace dttnet
