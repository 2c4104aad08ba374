#pragma once

#include <complex>
#include <vector>

#include "dttnet/core.hpp"
#include "dttnet/fft.hpp"
#include "dttnet/tensor.hpp"
#include "dttnet/wav.hpp"

namespace dttnet {
namespace spectral {

enum class WindowKind { hann_periodic };

struct SpectralConfig {
  int window_size = 6144;
  int hop_length = 1024;
  WindowKind window = WindowKind::hann_periodic;
  int crop_bins = 2048;       // 2048 for vocals/drums/other, 864 for bass
  bool center_pad = true;
  // Off: cropped-away bins are restored as zeros at inversion. On: istft
  // reuses the bins retained by stft (the mixture's own high bins).
  bool copy_high_bins_on_inverse = false;

  int full_bins() const { return window_size / 2 + 1; }

  void validate() const {
    check_config(window_size >= 2 && hop_length >= 1, "spectral: window/hop must be positive");
    check_config(hop_length <= window_size, "spectral: hop_length must be <= window_size");
    check_config(crop_bins >= 1 && crop_bins <= full_bins(),
                 "spectral: crop_bins must be <= window_size/2 + 1");
  }
};

// Complex STFT packed as real channels: C = 2 * audio_channels with fixed
// order [ch0_re, ch0_im, ch1_re, ch1_im]. full_bins and source_length are
// carried so inversion can restore cropped bins and trim padding exactly.
struct ComplexSpectrogram {
  Tensor data;  // [C x F x T]
  int full_bins = 0;
  long source_length = 0;
  int sample_rate = 44100;
  Tensor high_bins;  // [C x (full_bins - F) x T], kept only on request

  long packed_channels() const { return data.dim(0); }
  long audio_channels() const { return data.dim(0) / 2; }
  long bins() const { return data.dim(1); }
  long frames() const { return data.dim(2); }
};

inline Tensor make_window(const SpectralConfig& cfg) {
  Tensor w({cfg.window_size});
  // Periodic Hann: w[n] = 0.5 * (1 - cos(2*pi*n/N)).
  for (int n = 0; n < cfg.window_size; ++n)
    w[n] = 0.5 * (1.0 - std::cos(2.0 * M_PI * n / cfg.window_size));
  return w;
}

inline long frame_count(long length, const SpectralConfig& cfg) {
  if (cfg.center_pad) return length / cfg.hop_length + 1;
  check(length >= cfg.window_size, "spectral: signal shorter than window without center padding");
  return (length - cfg.window_size) / cfg.hop_length + 1;
}

// Bouncing reflect index (numpy 'reflect' semantics, edge not repeated).
inline long reflect_index(long i, long n) {
  if (n == 1) return 0;
  long period = 2 * (n - 1);
  long r = i % period;
  if (r < 0) r += period;
  return r < n ? r : period - r;
}

// Packs per-channel complex planes [ch x F x T] into [2ch x F x T].
inline Tensor pack(const Tensor& re, const Tensor& im) {
  check(re.same_shape(im) && re.rank() == 3, "pack: need matching [ch x F x T] planes");
  Tensor out({2 * re.dim(0), re.dim(1), re.dim(2)});
  long plane = re.dim(1) * re.dim(2);
  for (long c = 0; c < re.dim(0); ++c) {
    std::copy(re.data() + c * plane, re.data() + (c + 1) * plane, out.data() + 2 * c * plane);
    std::copy(im.data() + c * plane, im.data() + (c + 1) * plane, out.data() + (2 * c + 1) * plane);
  }
  return out;
}

inline std::pair<Tensor, Tensor> unpack(const Tensor& packed) {
  check(packed.rank() == 3 && packed.dim(0) % 2 == 0, "unpack: need [2ch x F x T]");
  long ch = packed.dim(0) / 2, plane = packed.dim(1) * packed.dim(2);
  Tensor re({ch, packed.dim(1), packed.dim(2)}), im = re;
  for (long c = 0; c < ch; ++c) {
    std::copy(packed.data() + 2 * c * plane, packed.data() + (2 * c + 1) * plane,
              re.data() + c * plane);
    std::copy(packed.data() + (2 * c + 1) * plane, packed.data() + (2 * c + 2) * plane,
              im.data() + c * plane);
  }
  return {re, im};
}

inline ComplexSpectrogram stft(const Waveform& w, const SpectralConfig& cfg) {
  cfg.validate();
  w.validate();
  check(w.length() >= cfg.hop_length, "stft: waveform shorter than one hop");

  const long ch = w.channels(), len = w.length();
  const int N = cfg.window_size, hop = cfg.hop_length;
  const long pad = cfg.center_pad ? N / 2 : 0;
  const long T = frame_count(len, cfg);
  const long F = cfg.crop_bins;
  const int full = cfg.full_bins();
  const Tensor win = make_window(cfg);
  const RealFft& fft = RealFft::of_size(N);

  ComplexSpectrogram s;
  s.data = Tensor({2 * ch, F, T});
  s.full_bins = full;
  s.source_length = len;
  s.sample_rate = w.sample_rate;
  if (cfg.copy_high_bins_on_inverse && full > F) s.high_bins = Tensor({2 * ch, full - F, T});

  std::vector<real> frame(static_cast<size_t>(N));
  std::vector<std::complex<real>> spec(static_cast<size_t>(full));
  for (long c = 0; c < ch; ++c) {
    const real* x = w.samples.data() + c * len;
    for (long t = 0; t < T; ++t) {
      const long start = t * hop - pad;
      for (int m = 0; m < N; ++m) {
        long i = start + m;
        if (i < 0 || i >= len) i = reflect_index(i, len);
        frame[static_cast<size_t>(m)] = x[i] * win[m];
      }
      fft.forward(frame.data(), spec.data());
      for (long k = 0; k < F; ++k) {
        s.data.at(2 * c, k, t) = spec[static_cast<size_t>(k)].real();
        s.data.at(2 * c + 1, k, t) = spec[static_cast<size_t>(k)].imag();
      }
      if (!s.high_bins.empty())
        for (long k = F; k < full; ++k) {
          s.high_bins.at(2 * c, k - F, t) = spec[static_cast<size_t>(k)].real();
          s.high_bins.at(2 * c + 1, k - F, t) = spec[static_cast<size_t>(k)].imag();
        }
    }
  }
  return s;
}

// Squared-window overlap-add normalizer over the padded sample grid.
inline std::vector<real> window_sum(const SpectralConfig& cfg, long frames, long padded_len) {
  const Tensor win = make_window(cfg);
  std::vector<real> wsum(static_cast<size_t>(padded_len), 0.0);
  for (long t = 0; t < frames; ++t)
    for (int m = 0; m < cfg.window_size; ++m) {
      long i = t * cfg.hop_length + m;
      if (i < padded_len) wsum[static_cast<size_t>(i)] += win[m] * win[m];
    }
  return wsum;
}

constexpr real kWindowSumFloor = 1e-8;

inline Waveform istft(const ComplexSpectrogram& s, const SpectralConfig& cfg) {
  cfg.validate();
  check(s.bins() <= s.full_bins, "istft: spectrogram has more bins than full_bins");
  check(s.full_bins == cfg.full_bins(), "istft: config window does not match spectrogram");
  check(s.source_length >= 1, "istft: missing source_length");

  const long ch = s.audio_channels(), F = s.bins(), T = s.frames();
  const int N = cfg.window_size, hop = cfg.hop_length;
  const long pad = cfg.center_pad ? N / 2 : 0;
  const int full = s.full_bins;
  const Tensor win = make_window(cfg);
  const RealFft& fft = RealFft::of_size(N);
  const bool use_high = cfg.copy_high_bins_on_inverse && !s.high_bins.empty();

  const long padded_len = (T - 1) * hop + N;
  const std::vector<real> wsum = window_sum(cfg, T, padded_len);

  Waveform out(Tensor({ch, s.source_length}), s.sample_rate);
  std::vector<real> acc(static_cast<size_t>(padded_len));
  std::vector<real> frame(static_cast<size_t>(N));
  std::vector<std::complex<real>> spec(static_cast<size_t>(full));
  for (long c = 0; c < ch; ++c) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (long t = 0; t < T; ++t) {
      for (long k = 0; k < F; ++k)
        spec[static_cast<size_t>(k)] = {s.data.at(2 * c, k, t), s.data.at(2 * c + 1, k, t)};
      for (long k = F; k < full; ++k)
        spec[static_cast<size_t>(k)] =
            use_high ? std::complex<real>{s.high_bins.at(2 * c, k - F, t),
                                          s.high_bins.at(2 * c + 1, k - F, t)}
                     : std::complex<real>{0.0, 0.0};
      fft.inverse(spec.data(), frame.data());
      for (int m = 0; m < N; ++m) acc[static_cast<size_t>(t * hop + m)] += win[m] * frame[static_cast<size_t>(m)];
    }
    for (long n = 0; n < s.source_length; ++n) {
      real den = wsum[static_cast<size_t>(n + pad)];
      out.samples.at(c, n) = den > kWindowSumFloor ? acc[static_cast<size_t>(n + pad)] / den : 0.0;
    }
  }
  return out;
}

// Adjoint of istft as a linear map from packed spectrogram [C x F x T] to
// waveform [ch x source_length]. Used to backpropagate a waveform-domain
// loss into the network's spectrogram output. Gradients for bins that istft
// ignores (imaginary DC/Nyquist, zero-restored high bins) are zero.
inline Tensor istft_adjoint(const Tensor& grad_wave, const SpectralConfig& cfg, long bins,
                            long frames) {
  cfg.validate();
  check(grad_wave.rank() == 2, "istft_adjoint: grad must be [ch x time]");
  const long ch = grad_wave.dim(0), len = grad_wave.dim(1);
  const int N = cfg.window_size, hop = cfg.hop_length;
  const long pad = cfg.center_pad ? N / 2 : 0;
  const int full = cfg.full_bins();
  check(bins <= full, "istft_adjoint: bins exceed full_bins");
  const Tensor win = make_window(cfg);
  const RealFft& fft = RealFft::of_size(N);

  const long padded_len = (frames - 1) * hop + N;
  check(pad + len <= padded_len, "istft_adjoint: frame count too small for signal");
  const std::vector<real> wsum = window_sum(cfg, frames, padded_len);

  Tensor grad_spec({2 * ch, bins, frames});
  std::vector<real> gp(static_cast<size_t>(padded_len));
  std::vector<real> frame(static_cast<size_t>(N));
  std::vector<std::complex<real>> spec(static_cast<size_t>(full));
  for (long c = 0; c < ch; ++c) {
    std::fill(gp.begin(), gp.end(), 0.0);
    for (long n = 0; n < len; ++n) {
      real den = wsum[static_cast<size_t>(n + pad)];
      gp[static_cast<size_t>(n + pad)] = den > kWindowSumFloor ? grad_wave.at(c, n) / den : 0.0;
    }
    for (long t = 0; t < frames; ++t) {
      for (int m = 0; m < N; ++m)
        frame[static_cast<size_t>(m)] = win[m] * gp[static_cast<size_t>(t * hop + m)];
      fft.forward(frame.data(), spec.data());
      // Adjoint of the normalized inverse real FFT: scale by c_k / N with
      // c_k = 2 on interior bins (Hermitian pair) and 1 at DC/Nyquist.
      for (long k = 0; k < bins; ++k) {
        real ck = (k == 0 || (N % 2 == 0 && k == N / 2)) ? 1.0 : 2.0;
        grad_spec.at(2 * c, k, t) = ck / N * spec[static_cast<size_t>(k)].real();
        grad_spec.at(2 * c + 1, k, t) =
            (k == 0 || (N % 2 == 0 && k == N / 2)) ? 0.0 : ck / N * spec[static_cast<size_t>(k)].imag();
      }
    }
  }
  return grad_spec;
}

}  // namespace spectral
}  // namespace dttnet
