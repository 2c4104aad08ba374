#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "dttnet/checkpoint.hpp"
#include "dttnet/model.hpp"
#include "test_helpers.hpp"

using namespace dttnet;
using namespace dttnet::model;
using testutil::band_limited_noise;
using testutil::random_tensor;

namespace {

ModelConfig mini_cfg() {
  ModelConfig cfg;
  cfg.audio_channels = 1;
  cfg.growth = 4;
  cfg.depth = 2;
  cfg.idpm_repeats = 1;
  cfg.heads = 2;
  cfg.bottleneck = 2;
  cfg.group_norm_channels = 3;
  cfg.spectral.window_size = 256;
  cfg.spectral.hop_length = 64;
  cfg.spectral.crop_bins = 32;
  cfg.chunk_seconds = 0.15;
  cfg.validate();
  return cfg;
}

}  // namespace

TEST_CASE("config defaults and validation") {
  ModelConfig vocals = ModelConfig::defaults_for("vocals");
  CHECK(vocals.spectral.crop_bins == 2048);
  CHECK(vocals.bottleneck == 8);
  ModelConfig bass = ModelConfig::defaults_for("bass");
  CHECK(bass.spectral.crop_bins == 864);
  CHECK(bass.bottleneck == 2);
  CHECK_THROWS_AS(ModelConfig::defaults_for("piano"), ConfigError);

  ModelConfig v2 = ModelConfig::defaults_for("vocals");
  v2.block_version = "v2";
  CHECK_THROWS_AS(v2.validate(), ConfigError);

  ModelConfig bad = ModelConfig::defaults_for("vocals");
  bad.spectral.crop_bins = 1000;  // not divisible by 2^depth * bf path
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("config kv round trip") {
  ModelConfig cfg = mini_cfg();
  ModelConfig back = ModelConfig::from_kv(cfg.to_kv());
  CHECK(back.to_kv() == cfg.to_kv());
  CHECK_THROWS_AS(ModelConfig().apply_kv("no_such_key", "1"), ConfigError);
}

TEST_CASE("encoder channel ladder grows by g per layer") {
  ModelConfig cfg = ModelConfig::defaults_for("vocals");
  cfg.depth = 4;
  cfg.validate();
  DttNet m(cfg);
  std::vector<long> ladder;
  for (auto& b : m.enc_blocks) ladder.push_back(b.res.geo.ci);
  ladder.push_back(m.latent_block.res.geo.ci);
  CHECK(ladder == std::vector<long>{32, 64, 96, 128, 160});
  CHECK(cfg.latent_channels() == 160);
}

TEST_CASE("parameter count is a pure function of the config") {
  ModelConfig cfg = mini_cfg();
  DttNet a(cfg), b(cfg);
  a.init(1);
  b.init(99);
  CHECK(a.param_count() == b.param_count());
  CHECK(a.param_count() > 0);

  // The per-layer table reconciles exactly with the total.
  long sum = 0;
  for (const auto& row : a.param_table()) sum += row.count;
  CHECK(sum == a.param_count());
}

TEST_CASE("default vocals config lands in the published parameter budget") {
  DttNet m(ModelConfig::defaults_for("vocals"));
  CHECK(m.param_count() >= 4'500'000);
  CHECK(m.param_count() <= 5'500'000);
}

TEST_CASE("forward preserves shape across valid configs") {
  Rng rng(3);
  ModelConfig cfg = mini_cfg();
  DttNet m(cfg);
  m.init(7);
  Tensor x = random_tensor({1, 2, 32, 16}, rng, 0.5);
  Tensor y = m.forward(x);
  CHECK(y.dims() == x.dims());

  Tensor bad = random_tensor({1, 2, 32, 14}, rng);  // T not divisible by 4
  CHECK_THROWS(m.forward(bad));
}

TEST_CASE("fixed seed gives bitwise-identical init and forward") {
  ModelConfig cfg = mini_cfg();
  DttNet a(cfg), b(cfg);
  a.init(42);
  b.init(42);
  for (size_t i = 0; i < a.params().items().size(); ++i)
    REQUIRE(*a.params().items()[i].value == *b.params().items()[i].value);
  Rng rng(4);
  Tensor x = random_tensor({1, 2, 32, 16}, rng, 0.5);
  CHECK(a.forward(x) == b.forward(x));
}

TEST_CASE("untrained forward stays finite and bounded on unit-norm input") {
  ModelConfig cfg = mini_cfg();
  Rng rng(5);
  for (uint64_t seed = 0; seed < 100; ++seed) {
    DttNet m(cfg);
    m.init(seed);
    Tensor x = random_tensor({1, 2, 32, 16}, rng);
    real norm = std::sqrt(x.sq_norm());
    x *= 1.0 / norm;
    Tensor y = m.forward(x);
    REQUIRE(y.all_finite());
    REQUIRE(y.abs_max() < 1e3);
  }
}

TEST_CASE("unit encoder features make the skip multiply a pass-through") {
  ModelConfig cfg = mini_cfg();
  DttNet m(cfg);
  m.init(11);
  // Rewire every encoder block to output exactly ones: zero both TFCs and
  // the TDF, then drive the last conv's bias to 1 with a zero residual conv.
  for (auto& blk : m.enc_blocks) {
    for (auto* tfc : {&blk.tfc1, &blk.tfc2})
      for (auto& sub : tfc->sub) {
        sub.conv.w.zero();
        sub.conv.b.zero();
      }
    blk.tdf.reduce.w.zero();
    blk.tdf.reduce.b.zero();
    blk.tdf.expand.w.zero();
    blk.tdf.expand.b.zero();
    blk.tfc2.sub[2].conv.b.fill(1.0);
    blk.res.w.zero();
    blk.res.b.zero();
  }
  Rng rng(6);
  Tensor x = random_tensor({1, 2, 32, 16}, rng, 0.5);

  // Decoder-only composition: same modules,没 skip multiply.
  Tensor y = m.in_conv.forward(x, nullptr);
  for (int d = 0; d < cfg.depth; ++d) {
    y = m.enc_blocks[d].forward(y, nullptr);
    y = m.downs[d].forward(y, nullptr);
  }
  y = m.latent_block.forward(y, nullptr);
  for (auto& mod : m.idpms) y = mod.forward(y, nullptr);
  for (size_t i = 0; i < m.ups.size(); ++i) {
    y = m.ups[i].forward(y, nullptr);
    y = m.dec_blocks[i].forward(y, nullptr);
  }
  Tensor want = m.out_conv.forward(y, nullptr);

  CHECK(m.forward(x) == want);
}

TEST_CASE("latent stage equals sequential dual-path module calls") {
  ModelConfig cfg = mini_cfg();
  cfg.idpm_repeats = 4;
  DttNet m(cfg);
  m.init(13);
  Rng rng(7);
  Tensor z = random_tensor({1, cfg.latent_channels(), 8, 4}, rng, 0.3);
  Tensor a = z;
  for (auto& mod : m.idpms) a = mod.forward(a, nullptr);
  Tensor b = z;
  for (int r = 0; r < 4; ++r) b = m.idpms[static_cast<size_t>(r)].forward(b, nullptr);
  CHECK(a == b);
}

TEST_CASE("end-to-end gradient check on a tiny config") {
  ModelConfig cfg = mini_cfg();
  cfg.spectral.crop_bins = 16;
  cfg.validate();
  DttNet m(cfg);
  m.init(17);
  Rng rng(8);
  Tensor x = random_tensor({1, 2, 16, 8}, rng, 0.5);
  Tensor target = random_tensor(x.dims(), rng, 0.5);

  auto l1 = [&](const Tensor& pred) {
    real s = 0.0;
    for (long i = 0; i < pred.numel(); ++i) s += std::abs(pred[i] - target[i]);
    return s / static_cast<real>(pred.numel());
  };
  auto loss = [&]() { return l1(m.forward(x)); };

  DttNet::Ctx ctx = m.make_ctx();
  Tensor pred = m.forward(x, &ctx);
  Tensor gy(pred.dims());
  for (long i = 0; i < pred.numel(); ++i) {
    real d = pred[i] - target[i];
    gy[i] = (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)) / static_cast<real>(pred.numel());
  }
  m.params().zero_grads();
  m.backward(gy, ctx);

  const real h = 1e-5, tol = 1e-3;
  auto& items = m.params().items();
  for (int s = 0; s < 60; ++s) {
    auto& p = items[static_cast<size_t>(rng.below(static_cast<long>(items.size())))];
    long i = rng.below(p.value->numel());
    real save = (*p.value)[i];
    (*p.value)[i] = save + h;
    real lp = loss();
    (*p.value)[i] = save - h;
    real lm = loss();
    (*p.value)[i] = save;
    real numeric = (lp - lm) / (2 * h);
    real analytic = (*p.grad)[i];
    INFO(p.name << "[" << i << "] analytic=" << analytic << " numeric=" << numeric);
    REQUIRE(std::abs(analytic - numeric) <=
            tol * std::max({1e-4, std::abs(analytic), std::abs(numeric)}));
  }
}

TEST_CASE("separate keeps length and reconstructs band-limited content through identity") {
  ModelConfig cfg = mini_cfg();
  Rng rng(9);
  // 1.0 s of band-limited audio against 0.15 s chunks: many chunk seams.
  Waveform mix = band_limited_noise(1, 44100, cfg.spectral.window_size, 1, 24, 30, rng, 44100, 2048);
  SpecFn identity = [](const Tensor& s) { return s; };
  Waveform out = separate(mix, cfg, identity, 0.5);
  REQUIRE(out.length() == mix.length());
  REQUIRE(out.channels() == mix.channels());
  CHECK(max_abs_diff(out.samples, mix.samples) <= 1e-3);
}

TEST_CASE("separate length contract on a 3-minute stereo input") {
  ModelConfig cfg = ModelConfig::defaults_for("vocals");
  Rng rng(10);
  Waveform mix = band_limited_noise(2, 180 * 44100, cfg.spectral.window_size, 1, 600, 20, rng,
                                    44100, 8192);
  SpecFn identity = [](const Tensor& s) { return s; };
  Waveform out = separate(mix, cfg, identity, 0.5);
  CHECK(out.length() == mix.length());
  CHECK(out.channels() == 2);
}

TEST_CASE("chunk seams introduce no discontinuity on a smooth input") {
  ModelConfig cfg = mini_cfg();
  const long n = 30000;
  Waveform mix(Tensor({1, n}), 44100);
  const real omega = 2.0 * M_PI * 12.0 / cfg.spectral.window_size;
  for (long i = 0; i < n; ++i) mix.samples.at(0, i) = 0.5 * std::sin(omega * i);
  // Fade edges so the content is representable under the crop.
  for (long i = 0; i < 2048; ++i) {
    real g = std::sin(0.5 * M_PI * i / 2048.0);
    mix.samples.at(0, i) *= g * g;
    mix.samples.at(0, n - 1 - i) *= g * g;
  }
  SpecFn identity = [](const Tensor& s) { return s; };
  Waveform out = separate(mix, cfg, identity, 0.5);

  std::vector<real> jumps;
  for (long i = 1; i < n; ++i) jumps.push_back(std::abs(out.samples.at(0, i) - out.samples.at(0, i - 1)));
  std::vector<real> sorted = jumps;
  std::sort(sorted.begin(), sorted.end());
  real median = sorted[sorted.size() / 2];

  long hop = std::min<long>(chunk_valid_samples(cfg),
                            std::lround(cfg.chunk_samples() * 0.5));
  real worst_seam = 0.0;
  for (long s = hop; s < n; s += hop)
    for (long i = std::max<long>(1, s - 4); i <= std::min(n - 1, s + 4); ++i)
      worst_seam = std::max(worst_seam, jumps[static_cast<size_t>(i - 1)]);
  CHECK(worst_seam <= 10.0 * median);
}

TEST_CASE("separate rejects a sample-rate mismatch") {
  ModelConfig cfg = mini_cfg();
  Waveform mix(Tensor({1, 8000}), 22050);
  mix.samples.fill(0.1);
  SpecFn identity = [](const Tensor& s) { return s; };
  CHECK_THROWS_AS(separate(mix, cfg, identity, 0.5), DataError);
}

TEST_CASE("checkpoint round trip preserves forward bitwise") {
  namespace fs = std::filesystem;
  ModelConfig cfg = mini_cfg();
  DttNet m(cfg);
  m.init(21);
  Rng rng(11);
  Tensor x = random_tensor({1, 2, 32, 16}, rng, 0.5);
  Tensor y0 = m.forward(x);

  std::string path = (fs::temp_directory_path() / "dttnet_ckpt_test.bin").string();
  checkpoint::Checkpoint ck = checkpoint::snapshot(m, 3, 12.5, "rngstate");
  ck.save(path);

  DttNet m2(cfg);
  m2.init(999);
  checkpoint::Checkpoint loaded = checkpoint::Checkpoint::load(path);
  CHECK(loaded.epoch == 3);
  CHECK(loaded.best_usdr == 12.5);
  CHECK(loaded.rng_state == "rngstate");
  checkpoint::restore(m2, loaded);
  CHECK(m2.forward(x) == y0);
  std::remove(path.c_str());
}

TEST_CASE("checkpoint load-resave is byte identical") {
  namespace fs = std::filesystem;
  ModelConfig cfg = mini_cfg();
  DttNet m(cfg);
  m.init(22);
  std::string a = (fs::temp_directory_path() / "dttnet_ckpt_a.bin").string();
  std::string b = (fs::temp_directory_path() / "dttnet_ckpt_b.bin").string();
  checkpoint::snapshot(m, 1, 2.0, "s").save(a);
  checkpoint::Checkpoint::load(a).save(b);
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  std::string ba((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
  std::string bb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
  CHECK(ba == bb);
  std::remove(a.c_str());
  std::remove(b.c_str());
}

TEST_CASE("checkpoint with mismatched config is rejected") {
  namespace fs = std::filesystem;
  ModelConfig cfg = mini_cfg();
  DttNet m(cfg);
  m.init(23);
  std::string path = (fs::temp_directory_path() / "dttnet_ckpt_c.bin").string();
  checkpoint::snapshot(m).save(path);

  ModelConfig other = mini_cfg();
  other.heads = 1;
  DttNet m2(other);
  CHECK_THROWS_AS(checkpoint::restore(m2, checkpoint::Checkpoint::load(path)), DataError);

  // Corrupt one payload byte: checksum must catch it.
  std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(64);
  char c;
  f.seekg(64);
  f.read(&c, 1);
  f.seekp(64);
  c = static_cast<char>(c ^ 0x5a);
  f.write(&c, 1);
  f.close();
  CHECK_THROWS_AS(checkpoint::Checkpoint::load(path), DataError);
  std::remove(path.c_str());
}
