#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "dttnet/core.hpp"
#include "dttnet/tensor.hpp"

namespace dttnet {

// Multichannel time-domain audio. samples is [channels x time], nominal
// range [-1, 1].
struct Waveform {
  Tensor samples;
  int sample_rate = 44100;

  Waveform() = default;
  Waveform(Tensor s, int rate) : samples(std::move(s)), sample_rate(rate) {}

  long channels() const { return samples.empty() ? 0 : samples.dim(0); }
  long length() const { return samples.empty() ? 0 : samples.dim(1); }
  real seconds() const { return static_cast<real>(length()) / sample_rate; }

  void validate() const {
    check(samples.rank() == 2, "Waveform: samples must be [channels x time]");
    check(channels() >= 1 && channels() <= 2, "Waveform: channels must be 1 or 2");
    check(length() >= 1, "Waveform: empty signal");
    if (!samples.all_finite()) throw NumericError("Waveform: non-finite samples");
  }
};

namespace wav {

enum class SampleFormat { pcm16, float32 };

namespace detail {

inline uint32_t rd_u32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

inline uint16_t rd_u16(const unsigned char* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

inline void wr_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void wr_u16(std::ostream& os, uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

}  // namespace detail

// Reads 16-bit PCM or 32-bit float WAV, 1-2 channels. No resampling: callers
// that require a specific rate must check Waveform::sample_rate themselves.
inline Waveform read(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check_data(static_cast<bool>(f), "wav: cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
  check_data(bytes.size() >= 44, "wav: truncated file " + path);
  check_data(std::memcmp(bytes.data(), "RIFF", 4) == 0 &&
                 std::memcmp(bytes.data() + 8, "WAVE", 4) == 0,
             "wav: not a RIFF/WAVE file: " + path);

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  const unsigned char* data = nullptr;
  size_t data_len = 0;

  size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* hdr = bytes.data() + pos;
    uint32_t chunk_len = detail::rd_u32(hdr + 4);
    const unsigned char* body = hdr + 8;
    if (pos + 8 + chunk_len > bytes.size()) chunk_len = static_cast<uint32_t>(bytes.size() - pos - 8);
    if (std::memcmp(hdr, "fmt ", 4) == 0 && chunk_len >= 16) {
      format = detail::rd_u16(body);
      channels = detail::rd_u16(body + 2);
      rate = detail::rd_u32(body + 4);
      bits = detail::rd_u16(body + 14);
      if (format == 0xfffe && chunk_len >= 40) format = detail::rd_u16(body + 24);  // extensible
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      data = body;
      data_len = chunk_len;
    }
    pos += 8 + chunk_len + (chunk_len & 1);
  }

  check_data(data != nullptr && format != 0, "wav: missing fmt/data chunk in " + path);
  check_data(channels >= 1 && channels <= 2, "wav: unsupported channel count in " + path);
  bool pcm16 = (format == 1 && bits == 16);
  bool f32 = (format == 3 && bits == 32);
  check_data(pcm16 || f32, "wav: only 16-bit PCM and 32-bit float supported: " + path);

  size_t frame_bytes = static_cast<size_t>(channels) * (bits / 8);
  size_t frames = data_len / frame_bytes;
  check_data(frames >= 1, "wav: empty data chunk in " + path);

  Waveform w(Tensor({channels, static_cast<long>(frames)}), static_cast<int>(rate));
  if (pcm16) {
    for (size_t t = 0; t < frames; ++t)
      for (int c = 0; c < channels; ++c) {
        const unsigned char* p = data + (t * channels + c) * 2;
        int16_t s = static_cast<int16_t>(p[0] | (p[1] << 8));
        w.samples.at(c, static_cast<long>(t)) = static_cast<real>(s) / 32768.0;
      }
  } else {
    for (size_t t = 0; t < frames; ++t)
      for (int c = 0; c < channels; ++c) {
        const unsigned char* p = data + (t * channels + c) * 4;
        uint32_t u = detail::rd_u32(p);
        float s;
        std::memcpy(&s, &u, 4);
        w.samples.at(c, static_cast<long>(t)) = static_cast<real>(s);
      }
  }
  return w;
}

// Peeks at the fmt chunk so callers can rewrite a file in its own format.
inline SampleFormat probe_format(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check_data(static_cast<bool>(f), "wav: cannot open " + path);
  std::vector<unsigned char> head(256);
  f.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(head.size()));
  size_t got = static_cast<size_t>(f.gcount());
  size_t pos = 12;
  while (pos + 8 <= got) {
    uint32_t chunk_len = detail::rd_u32(head.data() + pos + 4);
    if (std::memcmp(head.data() + pos, "fmt ", 4) == 0 && pos + 8 + 16 <= got) {
      uint16_t format = detail::rd_u16(head.data() + pos + 8);
      uint16_t bits = detail::rd_u16(head.data() + pos + 8 + 14);
      if (format == 3 || bits == 32) return SampleFormat::float32;
      return SampleFormat::pcm16;
    }
    pos += 8 + chunk_len + (chunk_len & 1);
  }
  return SampleFormat::pcm16;
}

inline void write(const std::string& path, const Waveform& w,
                  SampleFormat fmt = SampleFormat::pcm16) {
  w.validate();
  std::ofstream f(path, std::ios::binary);
  check_data(static_cast<bool>(f), "wav: cannot write " + path);

  const uint16_t channels = static_cast<uint16_t>(w.channels());
  const long frames = w.length();
  const uint16_t bits = fmt == SampleFormat::pcm16 ? 16 : 32;
  const uint32_t byte_rate = static_cast<uint32_t>(w.sample_rate) * channels * (bits / 8);
  const uint32_t data_len = static_cast<uint32_t>(frames) * channels * (bits / 8);

  f.write("RIFF", 4);
  detail::wr_u32(f, 36 + data_len);
  f.write("WAVE", 4);
  f.write("fmt ", 4);
  detail::wr_u32(f, 16);
  detail::wr_u16(f, fmt == SampleFormat::pcm16 ? 1 : 3);
  detail::wr_u16(f, channels);
  detail::wr_u32(f, static_cast<uint32_t>(w.sample_rate));
  detail::wr_u32(f, byte_rate);
  detail::wr_u16(f, static_cast<uint16_t>(channels * (bits / 8)));
  detail::wr_u16(f, bits);
  f.write("data", 4);
  detail::wr_u32(f, data_len);

  if (fmt == SampleFormat::pcm16) {
    for (long t = 0; t < frames; ++t)
      for (int c = 0; c < channels; ++c) {
        real x = w.samples.at(c, t) * 32768.0;
        long q = std::lround(x);
        q = std::min<long>(32767, std::max<long>(-32768, q));
        detail::wr_u16(f, static_cast<uint16_t>(static_cast<int16_t>(q)));
      }
  } else {
    for (long t = 0; t < frames; ++t)
      for (int c = 0; c < channels; ++c) {
        float s = static_cast<float>(w.samples.at(c, t));
        uint32_t u;
        std::memcpy(&u, &s, 4);
        detail::wr_u32(f, u);
      }
  }
  check_data(static_cast<bool>(f), "wav: write failed for " + path);
}

}  // namespace wav
}  // namespace dttnet
