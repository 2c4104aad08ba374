#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "dttnet/core.hpp"
#include "dttnet/rng.hpp"
#include "dttnet/tensor.hpp"

namespace dttnet {
namespace nn {

using EMat = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<EMat>;
using CMatMap = Eigen::Map<const EMat>;

inline MatMap mat(real* p, long rows, long cols) { return MatMap(p, rows, cols); }
inline CMatMap mat(const real* p, long rows, long cols) { return CMatMap(p, rows, cols); }
inline MatMap mat(Tensor& t, long rows, long cols) { return MatMap(t.data(), rows, cols); }
inline CMatMap mat(const Tensor& t, long rows, long cols) { return CMatMap(t.data(), rows, cols); }

// Named view of one learnable tensor and its gradient accumulator.
struct Param {
  std::string name;
  Tensor* value;
  Tensor* grad;
};

class ParamRegistry {
 public:
  void add(const std::string& name, Tensor& value, Tensor& grad) {
    check(value.same_shape(grad), "ParamRegistry: value/grad shape mismatch for " + name);
    params_.push_back({name, &value, &grad});
  }

  std::vector<Param>& items() { return params_; }
  const std::vector<Param>& items() const { return params_; }

  long total_count() const {
    long n = 0;
    for (const auto& p : params_) n += p.value->numel();
    return n;
  }

  void zero_grads() {
    for (auto& p : params_) p.grad->zero();
  }

  const Param* find(const std::string& name) const {
    for (const auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }

 private:
  std::vector<Param> params_;
};

// ---------------------------------------------------------------------------
// Initializers
// ---------------------------------------------------------------------------

inline void kaiming_uniform(Tensor& w, long fan_in, Rng& rng) {
  real bound = 1.0 / std::sqrt(static_cast<real>(fan_in));
  for (long i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-bound, bound);
}

// Semi-orthogonal rows x cols block written into dst starting at row_off,
// assuming dst is a (dst_rows x cols) row-major buffer.
inline void orthogonal_block(real* dst, long rows, long cols, Rng& rng) {
  long big = std::max(rows, cols), small = std::min(rows, cols);
  EMat a(big, small);
  for (long i = 0; i < big; ++i)
    for (long j = 0; j < small; ++j) a(i, j) = rng.normal();
  Eigen::HouseholderQR<EMat> qr(a);
  EMat q = qr.householderQ() * EMat::Identity(big, small);
  // Fix signs so the factorization is unique.
  EMat r = qr.matrixQR().topRows(small).triangularView<Eigen::Upper>();
  for (long j = 0; j < small; ++j)
    if (r(j, j) < 0) q.col(j) *= -1.0;
  MatMap out(dst, rows, cols);
  if (rows >= cols)
    out = q;
  else
    out = q.transpose();
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

inline real gelu(real x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

inline real gelu_grad(real x) {
  real cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
  real pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
  return cdf + x * pdf;
}

inline void gelu_inplace(Tensor& t) {
  for (long i = 0; i < t.numel(); ++i) t[i] = gelu(t[i]);
}

// ---------------------------------------------------------------------------
// Linear: y = x W^T + b applied to the last axis of a [rows x in] matrix view
// ---------------------------------------------------------------------------

struct Linear {
  long in = 0, out = 0;
  Tensor w, gw;  // [out x in]
  Tensor b, gb;  // [out]

  struct Ctx {
    Tensor x;  // [rows x in]
  };

  Linear() = default;
  Linear(long in_features, long out_features) : in(in_features), out(out_features) {
    w = Tensor({out, in});
    gw = Tensor({out, in});
    b = Tensor({out});
    gb = Tensor({out});
  }

  void init(Rng& rng) {
    kaiming_uniform(w, in, rng);
    kaiming_uniform(b, in, rng);
  }

  void collect(const std::string& prefix, ParamRegistry& reg) {
    reg.add(prefix + ".weight", w, gw);
    reg.add(prefix + ".bias", b, gb);
  }

  // x viewed as [rows x in]; returns [rows x out].
  Tensor forward(const Tensor& x, long rows, Ctx* ctx) const {
    check(x.numel() == rows * in, "Linear: input size mismatch");
    Tensor y({rows, out});
    mat(y, rows, out).noalias() = mat(x, rows, in) * mat(w, out, in).transpose();
    mat(y, rows, out).rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.data(), out);
    if (ctx) ctx->x = x.reshaped({rows, in});
    return y;
  }

  Tensor backward(const Tensor& gy, const Ctx& ctx) {
    long rows = ctx.x.dim(0);
    mat(gw, out, in).noalias() += mat(gy, rows, out).transpose() * mat(ctx.x, rows, in);
    Eigen::Map<Eigen::RowVectorXd>(gb.data(), out) += mat(gy, rows, out).colwise().sum();
    Tensor gx({rows, in});
    mat(gx, rows, in).noalias() = mat(gy, rows, out) * mat(w, out, in);
    return gx;
  }

  long param_count() const { return w.numel() + b.numel(); }
};

// ---------------------------------------------------------------------------
// 2D convolution over the trailing (F, T) axes of [B x C x F x T]
// ---------------------------------------------------------------------------

struct ConvGeometry {
  long ci = 0, co = 0;
  int kh = 1, kw = 1, stride = 1, pad = 0;

  long out_f(long f) const { return (f + 2 * pad - kh) / stride + 1; }
  long out_t(long t) const { return (t + 2 * pad - kw) / stride + 1; }
  long col_rows() const { return ci * kh * kw; }
};

namespace detail {

// Gathers conv patches for output positions [c0, c0+n) of image b into a
// (ci*kh*kw) x n column matrix.
inline void im2col(const Tensor& x, long b, const ConvGeometry& g, long fo_dim, long to_dim,
                   long c0, long n, real* col) {
  const long F = x.dim(2), T = x.dim(3);
  for (long ci = 0; ci < g.ci; ++ci) {
    const real* xp = x.data() + ((b * x.dim(1) + ci) * F) * T;
    for (int i = 0; i < g.kh; ++i)
      for (int j = 0; j < g.kw; ++j) {
        real* row = col + ((ci * g.kh + i) * g.kw + j) * n;
        for (long c = 0; c < n; ++c) {
          long pos = c0 + c;
          long fo = pos / to_dim, to = pos % to_dim;
          long fi = fo * g.stride - g.pad + i;
          long ti = to * g.stride - g.pad + j;
          row[c] = (fi >= 0 && fi < F && ti >= 0 && ti < T) ? xp[fi * T + ti] : 0.0;
        }
      }
  }
}

// Adjoint of im2col: scatter-adds columns back into gx.
inline void col2im(const real* col, long b, const ConvGeometry& g, long fo_dim, long to_dim,
                   long c0, long n, Tensor& gx) {
  const long F = gx.dim(2), T = gx.dim(3);
  for (long ci = 0; ci < g.ci; ++ci) {
    real* xp = gx.data() + ((b * gx.dim(1) + ci) * F) * T;
    for (int i = 0; i < g.kh; ++i)
      for (int j = 0; j < g.kw; ++j) {
        const real* row = col + ((ci * g.kh + i) * g.kw + j) * n;
        for (long c = 0; c < n; ++c) {
          long pos = c0 + c;
          long fo = pos / to_dim, to = pos % to_dim;
          long fi = fo * g.stride - g.pad + i;
          long ti = to * g.stride - g.pad + j;
          if (fi >= 0 && fi < F && ti >= 0 && ti < T) xp[fi * T + ti] += row[c];
        }
      }
  }
}

constexpr long kColTileElems = 1 << 22;  // ~32 MB of doubles per im2col tile

inline long col_tile(const ConvGeometry& g, long positions) {
  long tile = std::max<long>(1, kColTileElems / std::max<long>(1, g.col_rows()));
  return std::min(tile, positions);
}

}  // namespace detail

struct Conv2d {
  ConvGeometry geo;
  Tensor w, gw;  // [co x ci*kh*kw]
  Tensor b, gb;  // [co]

  struct Ctx {
    Tensor x;
  };

  Conv2d() = default;
  Conv2d(long ci, long co, int k, int stride = 1, int pad = -1) {
    geo.ci = ci;
    geo.co = co;
    geo.kh = geo.kw = k;
    geo.stride = stride;
    geo.pad = pad < 0 ? k / 2 : pad;
    w = Tensor({co, ci * k * k});
    gw = Tensor({co, ci * k * k});
    b = Tensor({co});
    gb = Tensor({co});
  }

  void init(Rng& rng) {
    kaiming_uniform(w, geo.col_rows(), rng);
    kaiming_uniform(b, geo.col_rows(), rng);
  }

  void collect(const std::string& prefix, ParamRegistry& reg) {
    reg.add(prefix + ".weight", w, gw);
    reg.add(prefix + ".bias", b, gb);
  }

  Tensor forward(const Tensor& x, Ctx* ctx) const {
    check(x.rank() == 4 && x.dim(1) == geo.ci, "Conv2d: channel mismatch");
    const long B = x.dim(0), Fo = geo.out_f(x.dim(2)), To = geo.out_t(x.dim(3));
    check(Fo >= 1 && To >= 1, "Conv2d: input smaller than kernel");
    Tensor y({B, geo.co, Fo, To});
    const long positions = Fo * To;
    const long tile = detail::col_tile(geo, positions);
    RealVec col(static_cast<size_t>(geo.col_rows() * tile));
    for (long bb = 0; bb < B; ++bb)
      for (long c0 = 0; c0 < positions; c0 += tile) {
        long n = std::min(tile, positions - c0);
        detail::im2col(x, bb, geo, Fo, To, c0, n, col.data());
        // Strided view of the output tile: rows are co, columns the tile.
        Eigen::Map<EMat, 0, Eigen::OuterStride<>> ytv(
            y.data() + (bb * geo.co) * positions + c0, geo.co, n,
            Eigen::OuterStride<>(positions));
        ytv.noalias() = mat(w, geo.co, geo.col_rows()) * mat(col.data(), geo.col_rows(), n);
        ytv.colwise() += Eigen::Map<const Eigen::VectorXd>(b.data(), geo.co);
      }
    if (ctx) ctx->x = x;
    return y;
  }

  Tensor backward(const Tensor& gy, const Ctx& ctx) {
    const Tensor& x = ctx.x;
    const long B = x.dim(0), Fo = gy.dim(2), To = gy.dim(3);
    const long positions = Fo * To;
    Tensor gx(x.dims());
    const long tile = detail::col_tile(geo, positions);
    RealVec col(static_cast<size_t>(geo.col_rows() * tile));
    RealVec colg(static_cast<size_t>(geo.col_rows() * tile));
    for (long bb = 0; bb < B; ++bb)
      for (long c0 = 0; c0 < positions; c0 += tile) {
        long n = std::min(tile, positions - c0);
        Eigen::Map<const EMat, 0, Eigen::OuterStride<>> gyt(
            gy.data() + (bb * geo.co) * positions + c0, geo.co, n,
            Eigen::OuterStride<>(positions));
        detail::im2col(x, bb, geo, Fo, To, c0, n, col.data());
        mat(gw, geo.co, geo.col_rows()).noalias() +=
            gyt * mat(col.data(), geo.col_rows(), n).transpose();
        Eigen::Map<Eigen::VectorXd>(gb.data(), geo.co) += gyt.rowwise().sum();
        mat(colg.data(), geo.col_rows(), n).noalias() =
            mat(w, geo.co, geo.col_rows()).transpose() * gyt;
        detail::col2im(colg.data(), bb, geo, Fo, To, c0, n, gx);
      }
    return gx;
  }

  long param_count() const { return w.numel() + b.numel(); }
};

// Transposed 2D convolution (stride 2, kernel 3, pad 1, output padding 1
// geometry when built with k=3, stride=2): [B x ci x F x T] ->
// [B x co x sF x sT]. Implemented as the exact adjoint of the matching
// strided Conv2d, plus an output-channel bias.
struct ConvTranspose2d {
  ConvGeometry geo;  // geometry of the underlying strided conv: ci=co_out, co=ci_in
  long cin = 0, cout = 0;
  Tensor w, gw;  // [cin x cout*kh*kw]  (the underlying conv's weight layout)
  Tensor b, gb;  // [cout]

  struct Ctx {
    Tensor x;
    long out_f = 0, out_t = 0;
  };

  ConvTranspose2d() = default;
  ConvTranspose2d(long ci, long co, int k, int stride) : cin(ci), cout(co) {
    geo.ci = co;  // underlying conv maps co -> ci
    geo.co = ci;
    geo.kh = geo.kw = k;
    geo.stride = stride;
    geo.pad = k / 2;
    w = Tensor({ci, co * k * k});
    gw = Tensor({ci, co * k * k});
    b = Tensor({co});
    gb = Tensor({co});
  }

  void init(Rng& rng) {
    kaiming_uniform(w, cin * geo.kh * geo.kw, rng);
    kaiming_uniform(b, cin * geo.kh * geo.kw, rng);
  }

  void collect(const std::string& prefix, ParamRegistry& reg) {
    reg.add(prefix + ".weight", w, gw);
    reg.add(prefix + ".bias", b, gb);
  }

  Tensor forward(const Tensor& x, Ctx* ctx) const {
    check(x.rank() == 4 && x.dim(1) == cin, "ConvTranspose2d: channel mismatch");
    const long B = x.dim(0), F = x.dim(2), T = x.dim(3);
    const long Fo = F * geo.stride, To = T * geo.stride;
    check(geo.out_f(Fo) == F && geo.out_t(To) == T,
          "ConvTranspose2d: geometry does not invert the paired stride");
    Tensor y({B, cout, Fo, To});
    const long positions = F * T;  // underlying conv's output positions
    const long tile = detail::col_tile(geo, positions);
    RealVec colg(static_cast<size_t>(geo.col_rows() * tile));
    for (long bb = 0; bb < B; ++bb)
      for (long c0 = 0; c0 < positions; c0 += tile) {
        long n = std::min(tile, positions - c0);
        Eigen::Map<const EMat, 0, Eigen::OuterStride<>> xt(
            x.data() + (bb * cin) * positions + c0, cin, n, Eigen::OuterStride<>(positions));
        mat(colg.data(), geo.col_rows(), n).noalias() =
            mat(w, cin, geo.col_rows()).transpose() * xt;
        detail::col2im(colg.data(), bb, geo, F, T, c0, n, y);
      }
    for (long bb = 0; bb < B; ++bb)
      for (long c = 0; c < cout; ++c) {
        real* yp = y.data() + ((bb * cout + c) * Fo) * To;
        for (long i = 0; i < Fo * To; ++i) yp[i] += b[c];
      }
    if (ctx) {
      ctx->x = x;
      ctx->out_f = Fo;
      ctx->out_t = To;
    }
    return y;
  }

  Tensor backward(const Tensor& gy, const Ctx& ctx) {
    const Tensor& x = ctx.x;
    const long B = x.dim(0), F = x.dim(2), T = x.dim(3);
    const long positions = F * T;
    Tensor gx(x.dims());
    const long tile = detail::col_tile(geo, positions);
    RealVec col(static_cast<size_t>(geo.col_rows() * tile));
    for (long bb = 0; bb < B; ++bb) {
      for (long c0 = 0; c0 < positions; c0 += tile) {
        long n = std::min(tile, positions - c0);
        detail::im2col(gy, bb, geo, F, T, c0, n, col.data());
        Eigen::Map<EMat, 0, Eigen::OuterStride<>> gxt(
            gx.data() + (bb * cin) * positions + c0, cin, n, Eigen::OuterStride<>(positions));
        gxt.noalias() = mat(w, cin, geo.col_rows()) * mat(col.data(), geo.col_rows(), n);
        Eigen::Map<const EMat, 0, Eigen::OuterStride<>> xt(
            x.data() + (bb * cin) * positions + c0, cin, n, Eigen::OuterStride<>(positions));
        mat(gw, cin, geo.col_rows()).noalias() +=
            xt * mat(col.data(), geo.col_rows(), n).transpose();
      }
      for (long c = 0; c < cout; ++c) {
        const real* gp = gy.data() + ((bb * cout + c) * ctx.out_f) * ctx.out_t;
        real s = 0.0;
        for (long i = 0; i < ctx.out_f * ctx.out_t; ++i) s += gp[i];
        gb[c] += s;
      }
    }
    return gx;
  }

  long param_count() const { return w.numel() + b.numel(); }
};

// ---------------------------------------------------------------------------
// Normalizations
// ---------------------------------------------------------------------------

constexpr real kNormEps = 1e-5;

// Shared affine-norm core: normalizes n_groups slices of group_size elements.
struct NormCore {
  struct Ctx {
    Tensor xhat;          // normalized pre-affine values, input shape
    std::vector<real> inv_std;
  };

  // gamma/beta are indexed per element via an affine index callback.
  template <typename AffineIdx>
  static Tensor forward(const Tensor& x, long n_groups, long group_size, const Tensor& gamma,
                        const Tensor& beta, AffineIdx aff, Ctx* ctx) {
    Tensor y(x.dims());
    Tensor xhat(x.dims());
    std::vector<real> inv_std(static_cast<size_t>(n_groups));
    for (long g = 0; g < n_groups; ++g) {
      const real* xp = x.data() + g * group_size;
      real mean = 0.0;
      for (long i = 0; i < group_size; ++i) mean += xp[i];
      mean /= group_size;
      real var = 0.0;
      for (long i = 0; i < group_size; ++i) {
        real d = xp[i] - mean;
        var += d * d;
      }
      var /= group_size;
      real is = 1.0 / std::sqrt(var + kNormEps);
      inv_std[static_cast<size_t>(g)] = is;
      real* hp = xhat.data() + g * group_size;
      real* yp = y.data() + g * group_size;
      for (long i = 0; i < group_size; ++i) {
        hp[i] = (xp[i] - mean) * is;
        long a = aff(g, i);
        yp[i] = gamma[a] * hp[i] + beta[a];
      }
    }
    if (ctx) {
      ctx->xhat = std::move(xhat);
      ctx->inv_std = std::move(inv_std);
    }
    return y;
  }

  template <typename AffineIdx>
  static Tensor backward(const Tensor& gy, long n_groups, long group_size, const Tensor& gamma,
                         Tensor& ggamma, Tensor& gbeta, AffineIdx aff, const Ctx& ctx) {
    Tensor gx(gy.dims());
    for (long g = 0; g < n_groups; ++g) {
      const real* gp = gy.data() + g * group_size;
      const real* hp = ctx.xhat.data() + g * group_size;
      real sum_gh = 0.0, sum_ghh = 0.0;
      for (long i = 0; i < group_size; ++i) {
        long a = aff(g, i);
        ggamma[a] += gp[i] * hp[i];
        gbeta[a] += gp[i];
        real gxh = gp[i] * gamma[a];
        sum_gh += gxh;
        sum_ghh += gxh * hp[i];
      }
      real is = ctx.inv_std[static_cast<size_t>(g)];
      real m1 = sum_gh / group_size, m2 = sum_ghh / group_size;
      real* xp = gx.data() + g * group_size;
      for (long i = 0; i < group_size; ++i) {
        long a = aff(g, i);
        real gxh = gp[i] * gamma[a];
        xp[i] = is * (gxh - m1 - hp[i] * m2);
      }
    }
    return gx;
  }
};

// Per-channel normalization over (F, T), affine per channel.
struct InstanceNorm {
  long channels = 0;
  Tensor gamma, ggamma, beta, gbeta;

  using Ctx = NormCore::Ctx;

  InstanceNorm() = default;
  explicit InstanceNorm(long c) : channels(c) {
    gamma = Tensor::full({c}, 1.0);
    ggamma = Tensor({c});
    beta = Tensor({c});
    gbeta = Tensor({c});
  }

  void init(Rng&) {}

  void collect(const std::string& prefix, ParamRegistry& reg) {
    reg.add(prefix + ".scale", gamma, ggamma);
    reg.add(prefix + ".shift", beta, gbeta);
  }

  Tensor forward(const Tensor& x, Ctx* ctx) const {
    check(x.rank() == 4 && x.dim(1) == channels, "InstanceNorm: channel mismatch");
    long groups = x.dim(0) * channels, gsz = x.dim(2) * x.dim(3);
    long c = channels;
    return NormCore::forward(x, groups, gsz, gamma, beta,
                             [c](long g, long) { return g % c; }, ctx);
  }

  Tensor backward(const Tensor& gy, const Ctx& ctx) {
    long groups = gy.dim(0) * channels, gsz = gy.dim(2) * gy.dim(3);
    long c = channels;
    return NormCore::backward(gy, groups, gsz, gamma, ggamma, gbeta,
                              [c](long g, long) { return g % c; }, ctx);
  }

  long param_count() const { return 2 * channels; }
};

// GroupNorm with a fixed number of channels per group; stats over
// (channels-in-group, F, T), affine per channel.
struct GroupNorm {
  long channels = 0, chans_per_group = 0;
  Tensor gamma, ggamma, beta, gbeta;

  using Ctx = NormCore::Ctx;

  GroupNorm() = default;
  GroupNorm(long c, long per_group) : channels(c), chans_per_group(per_group) {
    check_config(per_group >= 1 && c % per_group == 0,
                 "GroupNorm: group size must divide channel count");
    gamma = Tensor::full({c}, 1.0);
    ggamma = Tensor({c});
    beta = Tensor({c});
    gbeta = Tensor({c});
  }

  void init(Rng&) {}

  void collect(const std::string& prefix, ParamRegistry& reg) {
    reg.add(prefix + ".scale", gamma, ggamma);
    reg.add(prefix + ".shift", beta, gbeta);
  }

  Tensor forward(const Tensor& x, Ctx* ctx) const {
    check(x.rank() == 4 && x.dim(1) == channels, "GroupNorm: channel mismatch");
    long n_groups_per_b = channels / chans_per_group;
    long groups = x.dim(0) * n_groups_per_b;
    long spatial = x.dim(2) * x.dim(3);
    long gsz = chans_per_group * spatial;
    long cpg = chans_per_group, ngb = n_groups_per_b;
    auto aff = [cpg, ngb, spatial](long g, long i) {
      return (g % ngb) * cpg + i / spatial;
    };
    return NormCore::forward(x, groups, gsz, gamma, beta, aff, ctx);
  }

  Tensor backward(const Tensor& gy, const Ctx& ctx) {
    long n_groups_per_b = channels / chans_per_group;
    long groups = gy.dim(0) * n_groups_per_b;
    long spatial = gy.dim(2) * gy.dim(3);
    long gsz = chans_per_group * spatial;
    long cpg = chans_per_group, ngb = n_groups_per_b;
    auto aff = [cpg, ngb, spatial](long g, long i) {
      return (g % ngb) * cpg + i / spatial;
    };
    return NormCore::backward(gy, groups, gsz, gamma, ggamma, gbeta, aff, ctx);
  }

  long param_count() const { return 2 * channels; }
};

// ---------------------------------------------------------------------------
// LSTM over a [S x N x in] sequence buffer; gates ordered [i, f, g, o]
// ---------------------------------------------------------------------------

struct Lstm {
  long in = 0, hidden = 0;
  bool reverse = false;
  Tensor w_ih, gw_ih;  // [4h x in]
  Tensor w_hh, gw_hh;  // [4h x h]
  Tensor b_ih, gb_ih;  // [4h]
  Tensor b_hh, gb_hh;  // [4h]

  struct Ctx {
    Tensor x;      // [S x N x in]
    Tensor gates;  // [S x N x 4h], post-activation
    Tensor c;      // [S x N x h]
    Tensor h;      // [S x N x h]
  };

  Lstm() = default;
  Lstm(long in_features, long hidden_size, bool rev)
      : in(in_features), hidden(hidden_size), reverse(rev) {
    w_ih = Tensor({4 * hidden, in});
    gw_ih = Tensor({4 * hidden, in});
    w_hh = Tensor({4 * hidden, hidden});
    gw_hh = Tensor({4 * hidden, hidden});
    b_ih = Tensor({4 * hidden});
    gb_ih = Tensor({4 * hidden});
    b_hh = Tensor({4 * hidden});
    gb_hh = Tensor({4 * hidden});
  }

  // Orthogonal per gate for both weight matrices; zero biases.
  void init(Rng& rng) {
    for (int gate = 0; gate < 4; ++gate)
      orthogonal_block(w_ih.data() + gate * hidden * in, hidden, in, rng);
    for (int gate = 0; gate < 4; ++gate)
      orthogonal_block(w_hh.data() + gate * hidden * hidden, hidden, hidden, rng);
  }

  void collect(const std::string& prefix, ParamRegistry& reg) {
    reg.add(prefix + ".w_ih", w_ih, gw_ih);
    reg.add(prefix + ".w_hh", w_hh, gw_hh);
    reg.add(prefix + ".b_ih", b_ih, gb_ih);
    reg.add(prefix + ".b_hh", b_hh, gb_hh);
  }

  // Returns hidden states [S x N x h]; zero initial state each call.
  Tensor forward(const Tensor& x, Ctx* ctx) const {
    check(x.rank() == 3 && x.dim(2) == in, "Lstm: feature size mismatch");
    const long S = x.dim(0), N = x.dim(1), H4 = 4 * hidden;
    Tensor gates({S, N, H4});
    // Input projection for all steps at once.
    mat(gates, S * N, H4).noalias() = mat(x, S * N, in) * mat(w_ih, H4, in).transpose();
    Eigen::RowVectorXd bias =
        Eigen::Map<const Eigen::RowVectorXd>(b_ih.data(), H4) +
        Eigen::Map<const Eigen::RowVectorXd>(b_hh.data(), H4);
    mat(gates, S * N, H4).rowwise() += bias;

    Tensor h({S, N, hidden}), c({S, N, hidden});
    Tensor h_prev({N, hidden}), c_prev({N, hidden});
    for (long step = 0; step < S; ++step) {
      long t = reverse ? S - 1 - step : step;
      real* gt = gates.data() + t * N * H4;
      mat(gt, N, H4).noalias() += mat(h_prev, N, hidden) * mat(w_hh, H4, hidden).transpose();
      real* ht = h.data() + t * N * hidden;
      real* ct = c.data() + t * N * hidden;
      for (long nidx = 0; nidx < N; ++nidx) {
        real* gg = gt + nidx * H4;
        const real* cp = c_prev.data() + nidx * hidden;
        for (long u = 0; u < hidden; ++u) {
          real ig = 1.0 / (1.0 + std::exp(-gg[u]));
          real fg = 1.0 / (1.0 + std::exp(-gg[hidden + u]));
          real gc = std::tanh(gg[2 * hidden + u]);
          real og = 1.0 / (1.0 + std::exp(-gg[3 * hidden + u]));
          real cv = fg * cp[u] + ig * gc;
          gg[u] = ig;
          gg[hidden + u] = fg;
          gg[2 * hidden + u] = gc;
          gg[3 * hidden + u] = og;
          ct[nidx * hidden + u] = cv;
          ht[nidx * hidden + u] = og * std::tanh(cv);
        }
      }
      std::copy(ht, ht + N * hidden, h_prev.data());
      std::copy(ct, ct + N * hidden, c_prev.data());
    }
    if (ctx) {
      ctx->x = x;
      ctx->gates = std::move(gates);
      ctx->c = c;
      ctx->h = h;
    }
    return h;
  }

  Tensor backward(const Tensor& gy, const Ctx& ctx) {
    const long S = gy.dim(0), N = gy.dim(1), H4 = 4 * hidden;
    Tensor gx({S, N, in});
    Tensor gpre({S, N, H4});  // gradients at pre-activation gates
    Tensor gh_rec({N, hidden}), gc_rec({N, hidden});
    for (long step = S - 1; step >= 0; --step) {
      long t = reverse ? S - 1 - step : step;
      const real* gt = ctx.gates.data() + t * N * H4;
      const real* ct = ctx.c.data() + t * N * hidden;
      // c_{t-1} and h_{t-1} in iteration order.
      long tprev = reverse ? t + 1 : t - 1;
      bool has_prev = step > 0;
      const real* cprev = has_prev ? ctx.c.data() + tprev * N * hidden : nullptr;
      real* gp = gpre.data() + t * N * H4;
      for (long nidx = 0; nidx < N; ++nidx) {
        const real* gg = gt + nidx * H4;
        const real* cc = ct + nidx * hidden;
        real* gpn = gp + nidx * H4;
        for (long u = 0; u < hidden; ++u) {
          real ig = gg[u], fg = gg[hidden + u], gc = gg[2 * hidden + u], og = gg[3 * hidden + u];
          real tc = std::tanh(cc[u]);
          real ghval = gy.at(t, nidx, u) + gh_rec.at(nidx, u);
          real gcv = gc_rec.at(nidx, u) + ghval * og * (1.0 - tc * tc);
          real cprev_v = has_prev ? cprev[nidx * hidden + u] : 0.0;
          gpn[u] = gcv * gc * ig * (1.0 - ig);
          gpn[hidden + u] = gcv * cprev_v * fg * (1.0 - fg);
          gpn[2 * hidden + u] = gcv * ig * (1.0 - gc * gc);
          gpn[3 * hidden + u] = ghval * tc * og * (1.0 - og);
          gc_rec.at(nidx, u) = gcv * fg;
        }
      }
      // Recurrent gradient into h_{t-1} and parameter grads for W_hh.
      if (has_prev) {
        const real* hprev = ctx.h.data() + tprev * N * hidden;
        mat(gh_rec, N, hidden).noalias() = mat(gp, N, H4) * mat(w_hh, H4, hidden);
        mat(gw_hh, H4, hidden).noalias() +=
            mat(gp, N, H4).transpose() * mat(hprev, N, hidden);
      } else {
        gh_rec.zero();
      }
    }
    // Input-side parameter and input gradients for all steps at once.
    mat(gw_ih, H4, in).noalias() += mat(gpre, S * N, H4).transpose() * mat(ctx.x, S * N, in);
    Eigen::RowVectorXd bsum = mat(gpre, S * N, H4).colwise().sum();
    Eigen::Map<Eigen::RowVectorXd>(gb_ih.data(), H4) += bsum;
    Eigen::Map<Eigen::RowVectorXd>(gb_hh.data(), H4) += bsum;
    mat(gx, S * N, in).noalias() = mat(gpre, S * N, H4) * mat(w_ih, H4, in);
    return gx;
  }

  long param_count() const {
    return w_ih.numel() + w_hh.numel() + b_ih.numel() + b_hh.numel();
  }
};

// Bidirectional LSTM: output is [S x N x 2h], forward then backward halves.
struct Blstm {
  Lstm fwd, bwd;

  struct Ctx {
    Lstm::Ctx fwd, bwd;
  };

  Blstm() = default;
  Blstm(long in_features, long hidden_size)
      : fwd(in_features, hidden_size, false), bwd(in_features, hidden_size, true) {}

  void init(Rng& rng) {
    fwd.init(rng);
    bwd.init(rng);
  }

  void collect(const std::string& prefix, ParamRegistry& reg) {
    fwd.collect(prefix + ".fwd", reg);
    bwd.collect(prefix + ".bwd", reg);
  }

  Tensor forward(const Tensor& x, Ctx* ctx) const {
    Tensor hf = fwd.forward(x, ctx ? &ctx->fwd : nullptr);
    Tensor hb = bwd.forward(x, ctx ? &ctx->bwd : nullptr);
    const long S = x.dim(0), N = x.dim(1), h = fwd.hidden;
    Tensor y({S, N, 2 * h});
    for (long t = 0; t < S; ++t)
      for (long nidx = 0; nidx < N; ++nidx) {
        real* yp = y.data() + (t * N + nidx) * 2 * h;
        std::copy(hf.data() + (t * N + nidx) * h, hf.data() + (t * N + nidx + 1) * h, yp);
        std::copy(hb.data() + (t * N + nidx) * h, hb.data() + (t * N + nidx + 1) * h, yp + h);
      }
    return y;
  }

  Tensor backward(const Tensor& gy, const Ctx& ctx) {
    const long S = gy.dim(0), N = gy.dim(1), h = fwd.hidden;
    Tensor gf({S, N, h}), gb({S, N, h});
    for (long t = 0; t < S; ++t)
      for (long nidx = 0; nidx < N; ++nidx) {
        const real* gp = gy.data() + (t * N + nidx) * 2 * h;
        std::copy(gp, gp + h, gf.data() + (t * N + nidx) * h);
        std::copy(gp + h, gp + 2 * h, gb.data() + (t * N + nidx) * h);
      }
    Tensor gx = fwd.backward(gf, ctx.fwd);
    gx += bwd.backward(gb, ctx.bwd);
    return gx;
  }

  long param_count() const { return fwd.param_count() + bwd.param_count(); }
};

}  // namespace nn
}  // namespace dttnet
