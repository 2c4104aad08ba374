// Acceptance suite: one pass/fail line per criterion. Exit code 0 only if
// every criterion holds at its stated tolerance.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "dttnet/checkpoint.hpp"
#include "dttnet/config.hpp"
#include "dttnet/data.hpp"
#include "dttnet/metrics.hpp"
#include "dttnet/model.hpp"
#include "dttnet/training.hpp"
#include "test_helpers.hpp"

using namespace dttnet;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(const std::string& name, bool pass, const std::string& detail, double seconds) {
  std::cout << (pass ? "[PASS] " : "[FAIL] ") << name << ": " << detail << " ("
            << std::fixed << std::setprecision(1) << seconds << " s)\n";
  std::cout.flush();
  if (!pass) ++g_failures;
}

template <typename Fn>
void criterion(const std::string& name, Fn fn) {
  auto t0 = Clock::now();
  bool pass = false;
  std::string detail;
  try {
    std::tie(pass, detail) = fn();
  } catch (const std::exception& e) {
    pass = false;
    detail = std::string("exception: ") + e.what();
  }
  double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  report(name, pass, detail, secs);
}

model::ModelConfig mini_cfg(long crop, real chunk_seconds = 0.15) {
  model::ModelConfig cfg;
  cfg.audio_channels = 1;
  cfg.growth = 4;
  cfg.depth = 2;
  cfg.idpm_repeats = 1;
  cfg.heads = 2;
  cfg.bottleneck = 2;
  cfg.group_norm_channels = 3;
  cfg.spectral.window_size = 256;
  cfg.spectral.hop_length = 64;
  cfg.spectral.crop_bins = static_cast<int>(crop);
  cfg.chunk_seconds = chunk_seconds;
  cfg.validate();
  return cfg;
}

// --------------------------------------------------------------------------
// 1. Parameter budget via the inspect CLI
// --------------------------------------------------------------------------
std::pair<bool, std::string> parameter_budget() {
  fs::path dir = fs::temp_directory_path() / "dttnet_acceptance";
  fs::create_directories(dir);
  fs::path out = dir / "inspect_out.txt";
  std::string cmd = std::string(DTTNET_CLI_PATH) + " inspect > " + out.string() + " 2>/dev/null";
  int rc = std::system(cmd.c_str());
  if (rc != 0) return {false, "inspect exited nonzero"};

  std::ifstream f(out);
  std::string line;
  long row_sum = 0, total = -1;
  while (std::getline(f, line)) {
    if (line.rfind("total = ", 0) == 0) {
      total = std::stol(line.substr(8));
    } else if (!line.empty()) {
      auto pos = line.find_last_of(' ');
      row_sum += std::stol(line.substr(pos + 1));
    }
  }
  bool in_budget = total >= 4'500'000 && total <= 5'500'000;
  bool reconciles = row_sum == total && total > 0;
  std::ostringstream os;
  os << "default vocals total " << total << " vs 5.0M +/- 10%"
     << (reconciles ? ", per-layer table sums exactly" : ", TABLE MISMATCH");
  return {in_budget && reconciles, os.str()};
}

// --------------------------------------------------------------------------
// 2. STFT/ISTFT round-trip at the production configs
// --------------------------------------------------------------------------
std::pair<bool, std::string> stft_round_trip() {
  real worst = 0.0;
  for (int crop : {2048, 864}) {
    spectral::SpectralConfig cfg;
    cfg.crop_bins = crop;
    Rng rng(101 + crop);
    Waveform x = testutil::band_limited_noise(2, 264600, cfg.window_size, 1,
                                              crop - crop / 16, 120, rng, 44100, 12288);
    Waveform y = spectral::istft(spectral::stft(x, cfg), cfg);
    worst = std::max(worst, max_abs_diff(y.samples, x.samples));
  }
  std::ostringstream os;
  os << "6 s stereo band-limited, max abs error " << std::scientific << std::setprecision(2)
     << worst << " <= 1e-4 (crops 2048 and 864)";
  return {worst <= 1e-4, os.str()};
}

// --------------------------------------------------------------------------
// 3. IDPM head algebra
// --------------------------------------------------------------------------
std::pair<bool, std::string> head_algebra() {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    int heads = 1 << rng.below(3);  // 1, 2, 4
    long b = 1 + rng.below(3), cper = 1 + rng.below(6);
    long f = 1 + rng.below(12), t = 1 + rng.below(12);
    Tensor x = testutil::random_tensor({b, heads * cper, f, t}, rng);
    if (!(idpm::merge_heads(idpm::split_heads(x, heads), heads) == x))
      return {false, "merge(split(x)) not bitwise identical"};
  }
  for (int heads : {1, 2, 4}) {
    idpm::IdpmConfig cfg;
    cfg.heads = heads;
    cfg.group_norm_channels = 2;
    cfg.latent_channels = 8;
    cfg.validate();
    idpm::Idpm mod(cfg);
    Rng irng(7);
    mod.init(irng);
    mod.time_block.fc.w.zero();
    mod.time_block.fc.b.zero();
    mod.freq_block.fc.w.zero();
    mod.freq_block.fc.b.zero();
    Tensor x = testutil::random_tensor({2, 8, 6, 5}, rng);
    if (!(mod.forward(x, nullptr) == x))
      return {false, "zeroed projections are not the identity at H=" + std::to_string(heads)};
  }
  return {true, "merge/split bitwise identity for H in {1,2,4} x 100 shapes; residual identity"};
}

// --------------------------------------------------------------------------
// 4. End-to-end gradient check on the miniature config
// --------------------------------------------------------------------------
std::pair<bool, std::string> gradient_check() {
  model::ModelConfig cfg = mini_cfg(32);
  model::DttNet m(cfg);
  m.init(17);
  Rng rng(8);
  Tensor x = testutil::random_tensor({1, 2, 32, 16}, rng, 0.5);
  Tensor target = testutil::random_tensor({1, 2, 32, 16}, rng, 0.5);

  auto l1 = [&]() {
    Tensor pred = m.forward(x);
    real s = 0.0;
    for (long i = 0; i < pred.numel(); ++i) s += std::abs(pred[i] - target[i]);
    return s / static_cast<real>(pred.numel());
  };

  model::DttNet::Ctx ctx = m.make_ctx();
  Tensor pred = m.forward(x, &ctx);
  Tensor gy(pred.dims());
  for (long i = 0; i < pred.numel(); ++i) {
    real d = pred[i] - target[i];
    gy[i] = (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)) / static_cast<real>(pred.numel());
  }
  m.params().zero_grads();
  Tensor gx = m.backward(gy, ctx);

  const real h = 1e-5, tol = 1e-3;
  real worst = 0.0;
  long checked = 0;
  auto check_slot = [&](real* slot, real analytic) {
    real save = *slot;
    *slot = save + h;
    real lp = l1();
    *slot = save - h;
    real lm = l1();
    *slot = save;
    real numeric = (lp - lm) / (2 * h);
    real rel = std::abs(analytic - numeric) /
               std::max({1e-4, std::abs(analytic), std::abs(numeric)});
    worst = std::max(worst, rel);
    ++checked;
    return rel <= tol;
  };

  auto& items = m.params().items();
  // Cover every parameter tensor plus random extras.
  for (auto& p : items) {
    long i = rng.below(p.value->numel());
    if (!check_slot(p.value->data() + i, (*p.grad)[i]))
      return {false, "parameter gradient mismatch at " + p.name};
  }
  for (int s = 0; s < 64; ++s) {
    auto& p = items[static_cast<size_t>(rng.below(static_cast<long>(items.size())))];
    long i = rng.below(p.value->numel());
    if (!check_slot(p.value->data() + i, (*p.grad)[i]))
      return {false, "parameter gradient mismatch at " + p.name};
  }
  for (int s = 0; s < 16; ++s) {
    long i = rng.below(x.numel());
    if (!check_slot(x.data() + i, gx[i])) return {false, "input gradient mismatch"};
  }
  std::ostringstream os;
  os << checked << " slots vs central differences, worst relative error " << std::scientific
     << std::setprecision(2) << worst << " <= 1e-3";
  return {true, os.str()};
}

// --------------------------------------------------------------------------
// 5. Head-split wall-clock ordering at the default config
// --------------------------------------------------------------------------
std::pair<bool, std::string> head_performance() {
  Rng rng(9);
  Waveform mix = testutil::band_limited_noise(2, 30 * 44100, 6144, 1, 1800, 60, rng, 44100, 8192);

  auto time_heads = [&](int heads) {
    model::ModelConfig cfg = model::ModelConfig::defaults_for("vocals");
    cfg.heads = heads;
    cfg.validate();
    model::DttNet m(cfg);
    m.init(33);
    auto t0 = Clock::now();
    Waveform out = model::separate(mix, m, 0.0);
    double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    if (out.length() != mix.length()) throw NumericError("separate changed the length");
    return secs;
  };

  double t2 = time_heads(2);
  double t1 = time_heads(1);
  std::ostringstream os;
  os << "30 s input, H=2 " << std::fixed << std::setprecision(1) << t2 << " s vs H=1 " << t1
     << " s (absolute times are hardware-dependent; only the ordering is asserted)";
  return {t2 < t1, os.str()};
}

// --------------------------------------------------------------------------
// 6. Overfit sanity on four fixed synthetic chunks
// --------------------------------------------------------------------------
std::pair<bool, std::string> overfit_sanity() {
  model::ModelConfig cfg = mini_cfg(64);
  model::DttNet m(cfg);
  m.init(11);

  std::vector<std::pair<Waveform, Waveform>> batch;
  for (uint64_t s = 0; s < 4; ++s) {
    Rng rng(200 + s);
    Waveform w = testutil::band_limited_noise(1, cfg.chunk_samples(), cfg.spectral.window_size, 1,
                                              56, 20, rng, 44100, 512);
    batch.push_back({w, w});
  }

  train::TrainConfig tcfg;
  tcfg.learning_rate = 2e-3;
  tcfg.weight_decay = 0.0;
  tcfg.batch_size = 4;
  tcfg.epoch_size = 4;
  train::AdamW opt(m.params(), tcfg);

  real first = train::train_step(m, opt, batch);
  real best = first;
  long steps = 1;
  for (; steps < 2000; ++steps) {
    real loss = train::train_step(m, opt, batch);
    best = std::min(best, loss);
    if (first / best >= 150.0 && steps >= 50) break;  // comfortably past the gate
  }
  bool loss_ok = first / best >= 100.0;

  std::vector<Waveform> ests;
  std::vector<std::pair<const Waveform*, const Waveform*>> pairs;
  for (auto& [mixw, tgt] : batch) {
    ests.push_back(model::separate(mixw, m, 0.5));
    pairs.push_back({&tgt, &ests.back()});
  }
  real train_usdr = metrics::usdr(pairs);
  std::ostringstream os;
  os << "loss " << std::scientific << std::setprecision(2) << first << " -> " << best << " ("
     << std::fixed << std::setprecision(0) << first / best << "x, >= 100x) in " << steps
     << " steps; training-set uSDR " << std::setprecision(1) << train_usdr << " dB > 20 dB";
  return {loss_ok && train_usdr > 20.0, os.str()};
}

// --------------------------------------------------------------------------
// 7. Metric oracles
// --------------------------------------------------------------------------
std::pair<bool, std::string> metric_oracles() {
  Rng rng(13);
  Waveform ref(testutil::random_tensor({2, 44100 * 5}, rng, 0.3), 44100);
  Waveform half(0.5 * ref.samples, 44100);
  real half_db = metrics::sdr(ref, half);
  if (std::abs(half_db - 6.0206) > 1e-3)
    return {false, "sdr(x, 0.5x) = " + std::to_string(half_db)};

  Waveform n(testutil::random_tensor({2, 44100 * 5}, rng, 0.02), 44100);
  Waveform est(ref.samples + n.samples, 44100);
  metrics::CsdrReport rep = metrics::csdr_report(ref, est);
  std::vector<real> col;
  for (const auto& row : rep.table)
    if (!row.silent_ref) col.push_back(row.db);
  if (rep.db != metrics::median(col)) return {false, "cSDR does not reconcile with chunk table"};

  Waveform r2(testutil::random_tensor({1, 44100}, rng, 0.3), 44100);
  Waveform e2(0.25 * r2.samples, 44100);
  real a = metrics::sdr(ref, est), b = metrics::sdr(r2, e2);
  real mean = metrics::usdr({{&ref, &est}, {&r2, &e2}});
  if (mean != (a + b) / 2.0) return {false, "uSDR is not the exact mean"};

  return {true, "sdr(x,0.5x)=6.0206 +/- 1e-3; chunk-table median reconciles exactly; uSDR exact mean"};
}

// --------------------------------------------------------------------------
// 8. Mixture-construction procedures
// --------------------------------------------------------------------------
std::pair<bool, std::string> mixture_procedures() {
  Rng gen(14);
  auto nonzero_noise = [&](long len, uint64_t seed) {
    Rng r(seed);
    Waveform w(Tensor({1, len}), 44100);
    for (long i = 0; i < len; ++i) {
      real mag = r.uniform(0.05, 0.3);
      w.samples[i] = r.uniform() < 0.5 ? -mag : mag;
    }
    return w;
  };

  data::Pattern pat;
  pat.name = "sirens";
  for (int i = 0; i < 16; ++i) {
    data::Segment s;
    s.file = "sirens/s" + std::to_string(i);
    s.audio = nonzero_noise(4 * 44100 + 4410 * (i % 5), 300 + static_cast<uint64_t>(i));
    pat.splits.b_valid.push_back(std::move(s));
  }
  Waveform song = nonzero_noise(20 * 44100, 999);

  real lo = 1.0, hi = 0.0;
  for (uint64_t seed = 0; seed < 1000; ++seed) {
    Rng r(seed);
    Waveform out = data::build_eval_mixture(song, pat, "b-valid", r);
    long zeros = 0;
    for (long i = 0; i < out.samples.numel(); ++i)
      if (out.samples[i] - song.samples[i] == 0.0) ++zeros;
    real frac = static_cast<real>(zeros) / static_cast<real>(song.length());
    lo = std::min(lo, frac);
    hi = std::max(hi, frac);
  }
  bool frac_ok = lo >= 0.53 && hi <= 0.57;

  // Train-chunk constructor: difference supported exactly on the window.
  Waveform chunk = nonzero_noise(264600, 777);
  data::Pattern tp;
  tp.name = "horns";
  data::Segment seg;
  seg.file = "horns/s0";
  seg.audio = nonzero_noise(4 * 44100, 778);
  tp.splits.b_train.push_back(std::move(seg));
  Rng r2(5);
  Waveform mt = data::mix_train_pattern(chunk, tp, r2);
  long first = -1, last = -1;
  bool values_ok = true;
  for (long i = 0; i < 264600; ++i) {
    real d = mt.samples[i] - chunk.samples[i];
    if (d != 0.0) {
      if (first < 0) first = i;
      last = i;
    }
  }
  bool support_ok = first >= 0 && (last - first + 1) == 4 * 44100;
  if (support_ok)
    for (long i = 0; i < 4 * 44100; ++i)
      values_ok = values_ok && std::abs(mt.samples[first + i] - chunk.samples[first + i] -
                                        tp.splits.b_train[0].audio.samples[i]) <= 1e-12;

  // NVC mode provably never samples Vocal Chops.
  data::TrackSet ts;
  ts.split = "train";
  data::Track t;
  t.id = "synth";
  t.mixture = nonzero_noise(60000, 555);
  t.stems["vocals"] = t.mixture;
  ts.tracks.push_back(std::move(t));
  data::PatternBank bank;
  data::Pattern vc;
  vc.name = data::kVocalChops;
  for (int i = 0; i < 5; ++i) {
    data::Segment s;
    s.file = "vc/s" + std::to_string(i);
    s.audio = nonzero_noise(8000, 600 + static_cast<uint64_t>(i));
    vc.splits.b_train.push_back(std::move(s));
  }
  bank.patterns.push_back(std::move(vc));
  bank.patterns.push_back(tp);
  std::ostringstream sink;
  data::ChunkSampler sampler(ts, "vocals", 16384, false, &bank, data::TrainMode::finetune_nvc,
                             sink);
  Rng r3(6);
  for (int i = 0; i < 200; ++i) sampler.draw(r3);
  long vc_draws = 0;
  for (const auto& e : sampler.log())
    if (e.pattern == data::kVocalChops) ++vc_draws;
  bool nvc_ok = vc_draws == 0 && sampler.log().size() == 200;

  std::ostringstream os;
  os << "overlay zero-fraction over 1000 seeds in [" << std::setprecision(4) << lo << ", " << hi
     << "] subset of [0.53, 0.57]; train-mix difference supported exactly on the 4 s window; "
     << "NVC audit log has 0 vocal-chop draws in 200";
  return {frac_ok && support_ok && values_ok && nvc_ok, os.str()};
}

// --------------------------------------------------------------------------
// 9. Desk-scale statement + bitwise training determinism
// --------------------------------------------------------------------------
std::pair<bool, std::string> determinism() {
  std::cout << "[INFO] criterion 9: published cSDR/uSDR tables and absolute inference times are "
               "NOT reproduced here by design: they require full MUSDB18-HQ training "
               "(thousands of epochs, multi-GPU). This suite substitutes criteria 1-8 plus the "
               "determinism check below.\n";

  auto run = [&](const std::string& out_dir) {
    model::ModelConfig cfg = mini_cfg(64);
    model::DttNet m(cfg);
    m.init(42);
    data::TrackSet ts;
    ts.split = "train";
    for (int i = 0; i < 2; ++i) {
      data::Track t;
      t.id = "s" + std::to_string(i);
      Rng rng(70 + static_cast<uint64_t>(i));
      t.mixture = testutil::band_limited_noise(1, 30000, 256, 1, 56, 16, rng, 44100, 512);
      t.stems["vocals"] = t.mixture;
      ts.tracks.push_back(std::move(t));
    }
    train::TrainConfig tcfg;
    tcfg.learning_rate = 1e-3;
    tcfg.epoch_size = 4;
    tcfg.batch_size = 2;
    tcfg.max_epochs = 2;
    tcfg.seed = 99;
    tcfg.augment = true;  // exercise the augmentation path deterministically
    tcfg.out_dir = out_dir;
    std::ostringstream sink;
    return train::fit(m, tcfg, ts, ts, nullptr, sink);
  };
  fs::path base = fs::temp_directory_path() / "dttnet_acceptance";
  std::string a = (base / "det_a").string(), b = (base / "det_b").string();
  fs::remove_all(a);
  fs::remove_all(b);
  train::TrainState sa = run(a), sb = run(b);

  bool losses_equal = sa.loss_history == sb.loss_history && sa.usdr_history == sb.usdr_history;
  std::ifstream fa(fs::path(a) / "last.ckpt", std::ios::binary);
  std::ifstream fb(fs::path(b) / "last.ckpt", std::ios::binary);
  std::string ba((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
  std::string bb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
  bool bytes_equal = !ba.empty() && ba == bb;
  fs::remove_all(a);
  fs::remove_all(b);
  return {losses_equal && bytes_equal,
          "two fixed-seed single-threaded runs: loss/uSDR histories and checkpoint bytes "
          "bitwise identical"};
}

}  // namespace

int main() {
  std::cout << "dttnet acceptance suite\n";
  criterion("criterion 1: parameter budget", parameter_budget);
  criterion("criterion 2: stft/istft round-trip", stft_round_trip);
  criterion("criterion 3: idpm head algebra", head_algebra);
  criterion("criterion 4: gradient correctness", gradient_check);
  criterion("criterion 5: head-split performance", head_performance);
  criterion("criterion 6: overfit sanity", overfit_sanity);
  criterion("criterion 7: metric oracles", metric_oracles);
  criterion("criterion 8: mixture procedures", mixture_procedures);
  criterion("criterion 9: desk-scale determinism", determinism);
  if (g_failures) {
    std::cout << g_failures << " criterion(s) failed\n";
    return 1;
  }
  std::cout << "all criteria passed\n";
  return 0;
}
