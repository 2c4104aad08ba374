#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dttnet/wav.hpp"
#include "test_helpers.hpp"

using namespace dttnet;
namespace fs = std::filesystem;

namespace {

std::string tmp_path(const std::string& name) {
  return (fs::temp_directory_path() / name).string();
}

std::string file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("pcm16 round trip") {
  Rng rng(1);
  Waveform w(Tensor({2, 4410}), 44100);
  for (long i = 0; i < w.samples.numel(); ++i) w.samples[i] = rng.uniform(-0.9, 0.9);
  std::string p = tmp_path("dttnet_pcm16.wav");
  wav::write(p, w, wav::SampleFormat::pcm16);
  Waveform r = wav::read(p);
  CHECK(r.sample_rate == 44100);
  CHECK(r.channels() == 2);
  CHECK(r.length() == 4410);
  CHECK(max_abs_diff(r.samples, w.samples) <= 0.5 / 32768.0);
  std::remove(p.c_str());
}

TEST_CASE("float32 round trip") {
  Rng rng(2);
  Waveform w(Tensor({1, 1000}), 44100);
  for (long i = 0; i < w.samples.numel(); ++i) w.samples[i] = rng.uniform(-1.0, 1.0);
  std::string p = tmp_path("dttnet_f32.wav");
  wav::write(p, w, wav::SampleFormat::float32);
  Waveform r = wav::read(p);
  CHECK(max_abs_diff(r.samples, w.samples) <= 1e-7);
  std::remove(p.c_str());
}

TEST_CASE("read-write of a pcm16 file is byte stable") {
  Rng rng(3);
  Waveform w(Tensor({2, 2000}), 44100);
  for (long i = 0; i < w.samples.numel(); ++i) w.samples[i] = rng.uniform(-0.99, 0.99);
  std::string a = tmp_path("dttnet_a.wav"), b = tmp_path("dttnet_b.wav");
  wav::write(a, w);
  wav::write(b, wav::read(a));
  CHECK(file_bytes(a) == file_bytes(b));
  std::remove(a.c_str());
  std::remove(b.c_str());
}

TEST_CASE("reader rejects garbage") {
  std::string p = tmp_path("dttnet_garbage.wav");
  std::ofstream(p) << "this is definitely not audio";
  CHECK_THROWS_AS(wav::read(p), DataError);
  std::remove(p.c_str());
}
