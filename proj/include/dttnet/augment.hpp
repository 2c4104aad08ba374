#pragma once

#include <complex>
#include <vector>

#include "dttnet/core.hpp"
#include "dttnet/fft.hpp"
#include "dttnet/rng.hpp"
#include "dttnet/wav.hpp"

namespace dttnet {
namespace data {

// On-the-fly augmentation draws: pitch shift in semitones from {-2..2} and
// time stretch percent from {-20, -10, 0, 10, 20}.
struct AugmentSpec {
  int pitch_semitones = 0;
  int stretch_percent = 0;

  void validate() const {
    check_config(pitch_semitones >= -2 && pitch_semitones <= 2,
                 "augment: pitch semitones must be in {-2..2}");
    bool ok = false;
    for (int p : {-20, -10, 0, 10, 20}) ok = ok || stretch_percent == p;
    check_config(ok, "augment: stretch percent must be in {-20,-10,0,10,20}");
  }

  bool is_identity() const { return pitch_semitones == 0 && stretch_percent == 0; }

  static AugmentSpec draw(Rng& rng) {
    AugmentSpec s;
    s.pitch_semitones = static_cast<int>(rng.below(5)) - 2;
    s.stretch_percent = (static_cast<int>(rng.below(5)) - 2) * 10;
    return s;
  }
};

// Playback-speed resampler: output[n] = x(n * speed), length round(len/speed).
// Windowed-sinc interpolation with the cutoff lowered for speed > 1.
inline Waveform resample_speed(const Waveform& w, real speed) {
  check(speed > 0, "resample: speed must be positive");
  const int taps = 16;  // half-width
  const long in_len = w.length(), ch = w.channels();
  const long out_len = std::max<long>(1, std::lround(static_cast<real>(in_len) / speed));
  const real cutoff = std::min(1.0, 1.0 / speed) * 0.95;
  Waveform out(Tensor({ch, out_len}), w.sample_rate);
  for (long c = 0; c < ch; ++c) {
    const real* x = w.samples.data() + c * in_len;
    for (long n = 0; n < out_len; ++n) {
      const real pos = static_cast<real>(n) * speed;
      const long m0 = static_cast<long>(std::floor(pos)) - taps + 1;
      const long m1 = static_cast<long>(std::floor(pos)) + taps;
      real acc = 0.0;
      for (long m = std::max<long>(0, m0); m <= std::min(in_len - 1, m1); ++m) {
        real t = pos - static_cast<real>(m);
        real s = t == 0.0 ? cutoff : std::sin(M_PI * cutoff * t) / (M_PI * t);
        real win = 0.5 * (1.0 + std::cos(M_PI * t / taps));  // Hann over the taps
        acc += x[m] * s * win;
      }
      out.samples.at(c, n) = acc;
    }
  }
  return out;
}

// Phase-vocoder time stretch: output duration = rate * input duration at the
// same pitch. Window 2048, synthesis hop 512, accumulated-phase resynthesis.
inline Waveform time_stretch(const Waveform& w, real rate) {
  check(rate > 0, "time_stretch: rate must be positive");
  const int N = 2048, hop_syn = 512;
  const int bins = N / 2 + 1;
  const long in_len = w.length(), ch = w.channels();
  const long out_len = std::max<long>(1, std::lround(static_cast<real>(in_len) * rate));
  const real hop_ana = static_cast<real>(hop_syn) / rate;
  const long frames = out_len / hop_syn + 1;
  const RealFft& fft = RealFft::of_size(N);

  std::vector<real> win(N);
  for (int i = 0; i < N; ++i) win[i] = 0.5 * (1.0 - std::cos(2.0 * M_PI * i / N));

  Waveform out(Tensor({ch, out_len}), w.sample_rate);
  const long acc_len = (frames - 1) * hop_syn + N;
  std::vector<real> acc(static_cast<size_t>(acc_len));
  std::vector<real> wsum(static_cast<size_t>(acc_len));
  std::vector<real> frame(N);
  std::vector<std::complex<real>> spec(bins);
  std::vector<real> phase_acc(bins), prev_phase(bins);

  for (long c = 0; c < ch; ++c) {
    std::fill(acc.begin(), acc.end(), 0.0);
    std::fill(wsum.begin(), wsum.end(), 0.0);
    std::fill(phase_acc.begin(), phase_acc.end(), 0.0);
    long prev_ta = 0;
    const real* x = w.samples.data() + c * in_len;
    for (long j = 0; j < frames; ++j) {
      long ta = std::lround(static_cast<real>(j) * hop_ana);
      for (int i = 0; i < N; ++i) {
        long m = ta + i;
        frame[static_cast<size_t>(i)] = (m >= 0 && m < in_len) ? x[m] * win[i] : 0.0;
      }
      fft.forward(frame.data(), spec.data());
      if (j == 0) {
        for (int k = 0; k < bins; ++k) {
          prev_phase[k] = std::arg(spec[static_cast<size_t>(k)]);
          phase_acc[k] = prev_phase[k];
        }
      } else {
        const real dt = static_cast<real>(ta - prev_ta);
        for (int k = 0; k < bins; ++k) {
          real ph = std::arg(spec[static_cast<size_t>(k)]);
          real omega = 2.0 * M_PI * static_cast<real>(k) / N;
          real dev = ph - prev_phase[k] - omega * dt;
          dev -= 2.0 * M_PI * std::round(dev / (2.0 * M_PI));  // principal value
          real true_freq = omega + dev / std::max<real>(1.0, dt);
          phase_acc[k] += true_freq * hop_syn;
          prev_phase[k] = ph;
        }
      }
      for (int k = 0; k < bins; ++k)
        spec[static_cast<size_t>(k)] = std::polar(std::abs(spec[static_cast<size_t>(k)]),
                                                  phase_acc[k]);
      fft.inverse(spec.data(), frame.data());
      for (int i = 0; i < N; ++i) {
        acc[static_cast<size_t>(j * hop_syn + i)] += win[i] * frame[static_cast<size_t>(i)];
        wsum[static_cast<size_t>(j * hop_syn + i)] += win[i] * win[i];
      }
    }
    for (long n = 0; n < out_len; ++n)
      out.samples.at(c, n) = wsum[static_cast<size_t>(n)] > 1e-8
                                 ? acc[static_cast<size_t>(n)] / wsum[static_cast<size_t>(n)]
                                 : 0.0;
  }
  return out;
}

// Pitch shift via resample-then-stretch; time stretch via the phase vocoder.
// The (0, 0) spec returns the input bitwise.
inline Waveform augment(const Waveform& w, const AugmentSpec& spec) {
  spec.validate();
  if (spec.is_identity()) return w;
  const real stretch = 1.0 + static_cast<real>(spec.stretch_percent) / 100.0;
  if (spec.pitch_semitones == 0) return time_stretch(w, stretch);
  const real speed = std::pow(2.0, static_cast<real>(spec.pitch_semitones) / 12.0);
  Waveform shifted = resample_speed(w, speed);
  // One vocoder pass restores the original duration and applies the stretch.
  return time_stretch(shifted, speed * stretch);
}

}  // namespace data
}  // namespace dttnet
