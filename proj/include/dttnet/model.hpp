#pragma once

#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dttnet/blocks.hpp"
#include "dttnet/idpm.hpp"
#include "dttnet/spectral.hpp"

namespace dttnet {
namespace model {

struct ModelConfig {
  std::string source = "vocals";  // vocals | drums | bass | other
  int audio_channels = 2;
  int sample_rate = 44100;
  long growth = 32;       // g: channels added per encoder layer
  int depth = 2;          // D: frozen against the 5.0 M parameter budget
  int idpm_repeats = 4;   // L
  int heads = 2;          // H
  int bottleneck = 8;     // bf: 8 for vocals/drums/other, 2 for bass
  long group_norm_channels = 16;
  std::string block_version = "v3";
  real chunk_seconds = 6.0;
  spectral::SpectralConfig spectral;

  long in_channels() const { return 2 * audio_channels; }
  long latent_channels() const { return growth * (depth + 1); }
  long chunk_samples() const { return static_cast<long>(std::lround(chunk_seconds * sample_rate)); }

  static ModelConfig defaults_for(const std::string& src) {
    ModelConfig cfg;
    cfg.source = src;
    if (src == "bass") {
      cfg.spectral.crop_bins = 864;
      cfg.bottleneck = 2;
    }
    cfg.validate();
    return cfg;
  }

  void validate() const {
    check_config(source == "vocals" || source == "drums" || source == "bass" || source == "other",
                 "config: unknown source '" + source + "'");
    check_config(audio_channels == 1 || audio_channels == 2, "config: audio_channels must be 1 or 2");
    check_config(sample_rate > 0, "config: sample_rate must be positive");
    check_config(growth >= 1 && depth >= 1 && idpm_repeats >= 0 && heads >= 1,
                 "config: g, D must be >= 1; L, H non-negative/positive");
    check_config(bottleneck >= 1, "config: bottleneck must be >= 1");
    check_config(chunk_seconds > 0, "config: chunk_seconds must be positive");
    if (block_version != "v3")
      throw ConfigError("config: block_version '" + block_version +
                        "' is recognized only as a stub; this build implements v3");
    spectral.validate();
    long crop = spectral.crop_bins;
    check_config(crop % (1L << depth) == 0, "config: crop_bins must be divisible by 2^depth");
    for (int d = 0; d <= depth; ++d)
      check_config((crop >> d) % bottleneck == 0,
                   "config: bottleneck must divide the frequency axis at every level");
    check_config(latent_channels() % heads == 0, "config: heads must divide latent channels");
    check_config((latent_channels() / heads) % group_norm_channels == 0,
                 "config: group_norm_channels must divide per-head channels");
  }

  // Flat key=value serialization, also embedded in checkpoints.
  std::string to_kv() const {
    std::ostringstream os;
    os << "source = " << source << "\n";
    os << "audio_channels = " << audio_channels << "\n";
    os << "sample_rate = " << sample_rate << "\n";
    os << "growth = " << growth << "\n";
    os << "depth = " << depth << "\n";
    os << "idpm_repeats = " << idpm_repeats << "\n";
    os << "heads = " << heads << "\n";
    os << "bottleneck = " << bottleneck << "\n";
    os << "group_norm_channels = " << group_norm_channels << "\n";
    os << "block_version = " << block_version << "\n";
    os << "chunk_seconds = " << chunk_seconds << "\n";
    os << "window_size = " << spectral.window_size << "\n";
    os << "hop_length = " << spectral.hop_length << "\n";
    os << "crop_bins = " << spectral.crop_bins << "\n";
    os << "center_pad = " << (spectral.center_pad ? "true" : "false") << "\n";
    os << "copy_high_bins_on_inverse = " << (spectral.copy_high_bins_on_inverse ? "true" : "false")
       << "\n";
    return os.str();
  }

  void apply_kv(const std::string& key, const std::string& value) {
    auto to_long = [&](const std::string& v) {
      try {
        size_t used = 0;
        long r = std::stol(v, &used);
        check_config(used == v.size(), "config: bad integer for " + key + ": '" + v + "'");
        return r;
      } catch (const ConfigError&) {
        throw;
      } catch (const std::exception&) {
        throw ConfigError("config: bad integer for " + key + ": '" + v + "'");
      }
    };
    auto to_bool = [&](const std::string& v) {
      if (v == "true" || v == "1") return true;
      if (v == "false" || v == "0") return false;
      throw ConfigError("config: bad boolean for " + key + ": '" + v + "'");
    };
    if (key == "source") source = value;
    else if (key == "audio_channels") audio_channels = static_cast<int>(to_long(value));
    else if (key == "sample_rate") sample_rate = static_cast<int>(to_long(value));
    else if (key == "growth") growth = to_long(value);
    else if (key == "depth") depth = static_cast<int>(to_long(value));
    else if (key == "idpm_repeats") idpm_repeats = static_cast<int>(to_long(value));
    else if (key == "heads") heads = static_cast<int>(to_long(value));
    else if (key == "bottleneck") bottleneck = static_cast<int>(to_long(value));
    else if (key == "group_norm_channels") group_norm_channels = to_long(value);
    else if (key == "block_version") block_version = value;
    else if (key == "chunk_seconds") chunk_seconds = std::stod(value);
    else if (key == "window_size") spectral.window_size = static_cast<int>(to_long(value));
    else if (key == "hop_length") spectral.hop_length = static_cast<int>(to_long(value));
    else if (key == "crop_bins") spectral.crop_bins = static_cast<int>(to_long(value));
    else if (key == "center_pad") spectral.center_pad = to_bool(value);
    else if (key == "copy_high_bins_on_inverse") spectral.copy_high_bins_on_inverse = to_bool(value);
    else throw ConfigError("config: unknown model key '" + key + "'");
  }

  static ModelConfig from_kv(const std::string& text) {
    ModelConfig cfg;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
      auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      auto trim = [](std::string s) {
        size_t a = s.find_first_not_of(" \t");
        size_t b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
      };
      cfg.apply_kv(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
  }
};

// The full network: 1x1 input conv, D encoder layers (block + downsample),
// latent block + L dual-path modules, D decoder layers (upsample +
// multiplicative skip + block), 1x1 output conv. Direct complex-spectrogram
// estimation: input and output shapes match.
class DttNet {
 public:
  struct Ctx {
    nn::Conv2d::Ctx in_conv;
    std::vector<blocks::TfcTdfV3::Ctx> enc;
    std::vector<blocks::Downsample::Ctx> down;
    std::vector<Tensor> skip;     // encoder features at each scale
    std::vector<Tensor> up_out;   // decoder features before the skip multiply
    blocks::TfcTdfV3::Ctx latent;
    std::vector<idpm::Idpm::Ctx> idpm;
    std::vector<blocks::Upsample::Ctx> up;
    std::vector<blocks::TfcTdfV3::Ctx> dec;
    nn::Conv2d::Ctx out_conv;

    explicit Ctx(int depth, int repeats)
        : enc(depth), down(depth), skip(depth), up_out(depth), idpm(repeats), up(depth),
          dec(depth) {}
  };

  explicit DttNet(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const long g = cfg_.growth;
    const long crop = cfg_.spectral.crop_bins;
    in_conv = nn::Conv2d(cfg_.in_channels(), g, 1);
    long c = g, f = crop;
    for (int d = 0; d < cfg_.depth; ++d) {
      enc_blocks.emplace_back(c, f, cfg_.bottleneck);
      downs.emplace_back(c, g);
      c += g;
      f /= 2;
    }
    latent_block = blocks::TfcTdfV3(c, f, cfg_.bottleneck);
    idpm::IdpmConfig icfg;
    icfg.heads = cfg_.heads;
    icfg.repeats = cfg_.idpm_repeats;
    icfg.group_norm_channels = cfg_.group_norm_channels;
    icfg.latent_channels = c;
    icfg.validate();
    for (int r = 0; r < cfg_.idpm_repeats; ++r) idpms.emplace_back(icfg);
    for (int d = cfg_.depth - 1; d >= 0; --d) {
      ups.emplace_back(c, g);
      c -= g;
      f *= 2;
      dec_blocks.emplace_back(c, f, cfg_.bottleneck);
    }
    out_conv = nn::Conv2d(g, cfg_.in_channels(), 1);
    collect_params();
  }

  DttNet(const DttNet&) = delete;
  DttNet& operator=(const DttNet&) = delete;

  const ModelConfig& config() const { return cfg_; }

  // Deterministic: a fixed seed yields bitwise-identical parameters.
  void init(uint64_t seed) {
    Rng rng(seed);
    in_conv.init(rng);
    for (auto& b : enc_blocks) b.init(rng);
    for (auto& d : downs) d.init(rng);
    latent_block.init(rng);
    for (auto& m : idpms) m.init(rng);
    for (auto& u : ups) u.init(rng);
    for (auto& b : dec_blocks) b.init(rng);
    out_conv.init(rng);
  }

  Ctx make_ctx() const { return Ctx(cfg_.depth, cfg_.idpm_repeats); }

  Tensor forward(const Tensor& x, Ctx* ctx = nullptr) const {
    check(x.rank() == 4 && x.dim(1) == cfg_.in_channels(), "forward: need [B x C x F x T]");
    check(x.dim(2) == cfg_.spectral.crop_bins, "forward: frequency bins must equal crop_bins");
    check(x.dim(2) % (1L << cfg_.depth) == 0 && x.dim(3) % (1L << cfg_.depth) == 0,
          "forward: F and T must be divisible by 2^depth");
    if (!x.all_finite()) throw NumericError("forward: non-finite input");

    Tensor y = in_conv.forward(x, ctx ? &ctx->in_conv : nullptr);
    std::vector<Tensor> skips(static_cast<size_t>(cfg_.depth));
    for (int d = 0; d < cfg_.depth; ++d) {
      y = enc_blocks[d].forward(y, ctx ? &ctx->enc[d] : nullptr);
      skips[static_cast<size_t>(d)] = y;
      y = downs[d].forward(y, ctx ? &ctx->down[d] : nullptr);
    }
    y = latent_block.forward(y, ctx ? &ctx->latent : nullptr);
    for (size_t r = 0; r < idpms.size(); ++r) y = idpms[r].forward(y, ctx ? &ctx->idpm[r] : nullptr);
    for (int i = 0; i < cfg_.depth; ++i) {
      int d = cfg_.depth - 1 - i;  // scale of this decoder layer
      y = ups[static_cast<size_t>(i)].forward(y, ctx ? &ctx->up[static_cast<size_t>(i)] : nullptr);
      if (ctx) ctx->up_out[static_cast<size_t>(i)] = y;
      const Tensor& s = skips[static_cast<size_t>(d)];
      check(y.same_shape(s), "forward: skip shape mismatch");
      for (long j = 0; j < y.numel(); ++j) y[j] *= s[j];
      y = dec_blocks[static_cast<size_t>(i)].forward(y, ctx ? &ctx->dec[static_cast<size_t>(i)] : nullptr);
    }
    if (ctx) ctx->skip = std::move(skips);
    return out_conv.forward(y, ctx ? &ctx->out_conv : nullptr);
  }

  Tensor backward(const Tensor& gy, const Ctx& ctx) {
    Tensor g = out_conv.backward(gy, ctx.out_conv);
    std::vector<Tensor> gskip(static_cast<size_t>(cfg_.depth));
    for (int i = cfg_.depth - 1; i >= 0; --i) {
      int d = cfg_.depth - 1 - i;
      g = dec_blocks[static_cast<size_t>(i)].backward(g, ctx.dec[static_cast<size_t>(i)]);
      const Tensor& s = ctx.skip[static_cast<size_t>(d)];
      const Tensor& u = ctx.up_out[static_cast<size_t>(i)];
      Tensor gs(s.dims());
      for (long j = 0; j < g.numel(); ++j) {
        gs[j] = g[j] * u[j];
        g[j] *= s[j];
      }
      gskip[static_cast<size_t>(d)] = std::move(gs);
      g = ups[static_cast<size_t>(i)].backward(g, ctx.up[static_cast<size_t>(i)]);
    }
    for (size_t r = idpms.size(); r-- > 0;) g = idpms[r].backward(g, ctx.idpm[r]);
    g = latent_block.backward(g, ctx.latent);
    for (int d = cfg_.depth - 1; d >= 0; --d) {
      g = downs[d].backward(g, ctx.down[d]);
      g += gskip[static_cast<size_t>(d)];
      g = enc_blocks[d].backward(g, ctx.enc[d]);
    }
    return in_conv.backward(g, ctx.in_conv);
  }

  nn::ParamRegistry& params() { return registry_; }
  const nn::ParamRegistry& params() const { return registry_; }
  long param_count() const { return registry_.total_count(); }

  struct LayerRow {
    std::string name;
    std::vector<long> shape;
    long count;
  };

  std::vector<LayerRow> param_table() const {
    std::vector<LayerRow> rows;
    for (const auto& p : registry_.items())
      rows.push_back({p.name, p.value->dims(), p.value->numel()});
    return rows;
  }

  // Public structure: tests probe and rewire sub-modules directly.
  nn::Conv2d in_conv, out_conv;
  std::vector<blocks::TfcTdfV3> enc_blocks;
  std::vector<blocks::Downsample> downs;
  blocks::TfcTdfV3 latent_block;
  std::vector<idpm::Idpm> idpms;
  std::vector<blocks::Upsample> ups;
  std::vector<blocks::TfcTdfV3> dec_blocks;

 private:
  void collect_params() {
    registry_ = nn::ParamRegistry();
    in_conv.collect("input_conv", registry_);
    for (size_t d = 0; d < enc_blocks.size(); ++d) {
      enc_blocks[d].collect("encoder." + std::to_string(d) + ".block", registry_);
      downs[d].collect("encoder." + std::to_string(d) + ".down", registry_);
    }
    latent_block.collect("latent.block", registry_);
    for (size_t r = 0; r < idpms.size(); ++r)
      idpms[r].collect("latent.idpm." + std::to_string(r), registry_);
    for (size_t i = 0; i < ups.size(); ++i) {
      ups[i].collect("decoder." + std::to_string(i) + ".up", registry_);
      dec_blocks[i].collect("decoder." + std::to_string(i) + ".block", registry_);
    }
    out_conv.collect("output_conv", registry_);
  }

  ModelConfig cfg_;
  nn::ParamRegistry registry_;
};

// ---------------------------------------------------------------------------
// Chunked long-audio inference
// ---------------------------------------------------------------------------

// Maps a packed spectrogram [C x F x T] to its estimate; the model's forward
// wrapped for one chunk. Kept as a functional seam so tests can drive the
// chunking path with an identity transform.
using SpecFn = std::function<Tensor(const Tensor&)>;

inline SpecFn spec_fn_of(const DttNet& m) {
  return [&m](const Tensor& spec) {
    Tensor x = spec.reshaped({1, spec.dim(0), spec.dim(1), spec.dim(2)});
    Tensor y = m.forward(x);
    return y.reshaped({spec.dim(0), spec.dim(1), spec.dim(2)});
  };
}

// Samples per chunk that are fully covered by the frames kept after trimming
// T down to a multiple of 2^depth.
inline long chunk_valid_samples(const ModelConfig& cfg) {
  const auto& sp = cfg.spectral;
  long frames = spectral::frame_count(cfg.chunk_samples(), sp);
  long keep = frames - frames % (1L << cfg.depth);
  long pad = sp.center_pad ? sp.window_size / 2 : 0;
  return std::min(cfg.chunk_samples(), keep * sp.hop_length - pad);
}

// Splits the mixture into chunk_seconds chunks with the given overlap, runs
// stft -> fn -> istft per chunk and cross-fades the overlaps with a linear
// ramp. Output length equals input length.
inline Waveform separate(const Waveform& mix, const ModelConfig& cfg, const SpecFn& fn,
                         real overlap = 0.5) {
  mix.validate();
  check_data(mix.sample_rate == cfg.sample_rate,
             "separate: sample-rate mismatch (got " + std::to_string(mix.sample_rate) +
                 ", model expects " + std::to_string(cfg.sample_rate) + ")");
  check(overlap >= 0.0 && overlap <= 0.95, "separate: overlap must be in [0, 0.95]");

  const auto& sp = cfg.spectral;
  const long L = mix.length(), ch = mix.channels();
  const long chunk = cfg.chunk_samples();
  const long valid = chunk_valid_samples(cfg);
  const long div = 1L << cfg.depth;
  long hop = std::min<long>(valid, std::max<long>(1, std::lround(chunk * (1.0 - overlap))));

  long n_chunks = 1 + std::max<long>(0, (L - valid + hop - 1) / hop);
  const long ramp = std::max<long>(1, std::min(chunk - hop, valid / 2));

  Tensor out({ch, L});
  std::vector<real> wsum(static_cast<size_t>(L), 0.0);
  Tensor chunk_buf({ch, chunk});

  for (long k = 0; k < n_chunks; ++k) {
    const long start = k * hop;
    for (long c = 0; c < ch; ++c)
      for (long i = 0; i < chunk; ++i)
        chunk_buf.at(c, i) = (start + i < L) ? mix.samples.at(c, start + i) : 0.0;

    spectral::ComplexSpectrogram s = spectral::stft(Waveform(chunk_buf, mix.sample_rate), sp);
    const long T = s.frames(), keep = T - T % div;
    Tensor x({s.data.dim(0), s.data.dim(1), keep});
    for (long cc = 0; cc < x.dim(0); ++cc)
      for (long f = 0; f < x.dim(1); ++f)
        for (long t = 0; t < keep; ++t) x.at(cc, f, t) = s.data.at(cc, f, t);

    Tensor y = fn(x);
    check(y.same_shape(x), "separate: spec transform must preserve shape");

    spectral::ComplexSpectrogram est = s;  // carries metadata (+ high bins if kept)
    est.data.zero();
    for (long cc = 0; cc < x.dim(0); ++cc)
      for (long f = 0; f < x.dim(1); ++f)
        for (long t = 0; t < keep; ++t) est.data.at(cc, f, t) = y.at(cc, f, t);

    Waveform rec = spectral::istft(est, sp);
    for (long i = 0; i < valid; ++i) {
      long n = start + i;
      if (n >= L) break;
      real w = 1.0;
      if (i < ramp) w = static_cast<real>(i + 1) / static_cast<real>(ramp + 1);
      long from_end = valid - 1 - i;
      if (from_end < ramp)
        w = std::min(w, static_cast<real>(from_end + 1) / static_cast<real>(ramp + 1));
      wsum[static_cast<size_t>(n)] += w;
      for (long c = 0; c < ch; ++c) out.at(c, n) += w * rec.samples.at(c, i);
    }
  }

  for (long n = 0; n < L; ++n) {
    real w = wsum[static_cast<size_t>(n)];
    if (w > 0)
      for (long c = 0; c < ch; ++c) out.at(c, n) /= w;
  }
  return Waveform(std::move(out), mix.sample_rate);
}

inline Waveform separate(const Waveform& mix, const DttNet& m, real overlap = 0.5) {
  return separate(mix, m.config(), spec_fn_of(m), overlap);
}

}  // namespace model
}  // namespace dttnet
