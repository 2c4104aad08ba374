#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dttnet/augment.hpp"
#include "dttnet/core.hpp"
#include "dttnet/rng.hpp"
#include "dttnet/wav.hpp"

namespace dttnet {
namespace data {

constexpr const char* kSources[4] = {"vocals", "drums", "bass", "other"};
constexpr const char* kVocalChops = "vocal_chops";

// ---------------------------------------------------------------------------
// Manifest: flat key=value lines; lists are comma-separated; '#' comments.
// ---------------------------------------------------------------------------

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  size_t b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!trim(cur).empty()) out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!trim(cur).empty()) out.push_back(trim(cur));
  return out;
}

// Ordered (key, value) pairs; repeated keys form lists of records.
using Manifest = std::vector<std::pair<std::string, std::string>>;

inline Manifest read_manifest(const std::string& path) {
  std::ifstream f(path);
  check_data(static_cast<bool>(f), "manifest: cannot open " + path);
  Manifest out;
  std::string line;
  while (std::getline(f, line)) {
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

inline void write_manifest(const std::string& path, const Manifest& m) {
  std::ofstream f(path);
  check_data(static_cast<bool>(f), "manifest: cannot write " + path);
  for (const auto& [k, v] : m) f << k << " = " << v << "\n";
  check_data(static_cast<bool>(f), "manifest: write failed " + path);
}

// ---------------------------------------------------------------------------
// Tracks
// ---------------------------------------------------------------------------

// One directory per track: mixture.wav plus stem WAVs named by source.
struct Track {
  std::string id;
  Waveform mixture;
  std::map<std::string, Waveform> stems;
};

struct TrackSet {
  std::string split;  // train | valid | test
  std::vector<Track> tracks;
};

inline Track load_track(const std::string& dir, std::ostream& warnings = std::cerr) {
  namespace fs = std::filesystem;
  Track t;
  t.id = fs::path(dir).filename().string();
  std::string mix_path = (fs::path(dir) / "mixture.wav").string();
  check_data(fs::exists(mix_path), "track: missing mixture.wav in " + dir);
  t.mixture = wav::read(mix_path);
  for (const char* src : kSources) {
    std::string p = (fs::path(dir) / (std::string(src) + ".wav")).string();
    if (fs::exists(p)) t.stems[src] = wav::read(p);
  }
  check_data(!t.stems.empty(), "track: no stem WAVs in " + dir);

  // Consistency: stems share geometry with the mixture; the mixture should
  // roughly equal the stem sum, but unclean data is only warned about.
  for (const auto& [name, stem] : t.stems) {
    check_data(stem.sample_rate == t.mixture.sample_rate,
               "track: sample-rate mismatch for " + name + " in " + dir);
    check_data(stem.length() == t.mixture.length() && stem.channels() == t.mixture.channels(),
               "track: geometry mismatch for " + name + " in " + dir);
  }
  if (t.stems.size() == 4) {
    real worst = 0.0;
    for (long i = 0; i < t.mixture.samples.numel(); ++i) {
      real sum = 0.0;
      for (const char* src : kSources) sum += t.stems.at(src).samples[i];
      worst = std::max(worst, std::abs(sum - t.mixture.samples[i]));
    }
    if (worst > 1e-3)
      warnings << "[data] warning: " << t.id << ": mixture differs from stem sum by " << worst
               << "\n";
  }
  return t;
}

// Splits come from manifest.txt lists when present, else from train/valid/
// test subdirectories, else every track directory belongs to the requested
// split.
inline TrackSet load_track_set(const std::string& root, const std::string& split,
                               std::ostream& warnings = std::cerr) {
  namespace fs = std::filesystem;
  check_data(fs::is_directory(root), "dataset: not a directory: " + root);
  TrackSet ts;
  ts.split = split;
  std::string manifest_path = (fs::path(root) / "manifest.txt").string();
  std::vector<std::string> dirs;
  if (fs::exists(manifest_path)) {
    for (const auto& [k, v] : read_manifest(manifest_path))
      if (k == split)
        for (const auto& name : split_list(v)) dirs.push_back((fs::path(root) / name).string());
    check_data(!dirs.empty(), "dataset: manifest has no '" + split + "' list in " + manifest_path);
  } else if (fs::is_directory(fs::path(root) / split)) {
    for (const auto& e : fs::directory_iterator(fs::path(root) / split))
      if (e.is_directory()) dirs.push_back(e.path().string());
  } else {
    for (const auto& e : fs::directory_iterator(root))
      if (e.is_directory()) dirs.push_back(e.path().string());
  }
  std::sort(dirs.begin(), dirs.end());
  for (const auto& d : dirs) ts.tracks.push_back(load_track(d, warnings));
  check_data(!ts.tracks.empty(), "dataset: no tracks for split '" + split + "' under " + root);
  return ts;
}

// ---------------------------------------------------------------------------
// Pattern bank
// ---------------------------------------------------------------------------

struct Segment {
  std::string file;
  Waveform audio;
};

struct PatternSplits {
  std::vector<Segment> b_train, b_valid, b_test;

  const std::vector<Segment>& of(const std::string& name) const {
    if (name == "b-train") return b_train;
    if (name == "b-valid") return b_valid;
    if (name == "b-test") return b_test;
    throw std::invalid_argument("pattern split must be b-train/b-valid/b-test");
  }
};

struct Pattern {
  std::string name;
  PatternSplits splits;
};

struct PatternBank {
  std::vector<Pattern> patterns;

  const Pattern* find(const std::string& name) const {
    for (const auto& p : patterns)
      if (p.name == name) return &p;
    return nullptr;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& p : patterns) out.push_back(p.name);
    return out;
  }
};

// Disjoint 5:1:4 cover of the segments, shuffled under the seed; sizes are
// within rounding of the ratio.
inline PatternSplits split_patterns(std::vector<Segment> segments, Rng& rng,
                                    std::ostream& warnings = std::cerr,
                                    const std::string& pattern_name = "") {
  if (segments.size() < 10)
    warnings << "[data] warning: pattern " << pattern_name << " has only " << segments.size()
             << " segments; 5:1:4 split is coarse below 10\n";
  rng.shuffle(segments);
  const long n = static_cast<long>(segments.size());
  const long n_train = n * 5 / 10;
  const long n_valid = n * 1 / 10;
  PatternSplits s;
  for (long i = 0; i < n; ++i) {
    if (i < n_train)
      s.b_train.push_back(std::move(segments[static_cast<size_t>(i)]));
    else if (i < n_train + n_valid)
      s.b_valid.push_back(std::move(segments[static_cast<size_t>(i)]));
    else
      s.b_test.push_back(std::move(segments[static_cast<size_t>(i)]));
  }
  return s;
}

// One directory per pattern, WAV segments inside (4-8 s each; out-of-range
// lengths are warned about, not rejected). Split seeds derive from the
// pattern name so bank loading is order-independent.
inline PatternBank load_pattern_bank(const std::string& root, uint64_t seed,
                                     std::ostream& warnings = std::cerr) {
  namespace fs = std::filesystem;
  check_data(fs::is_directory(root), "patterns: not a directory: " + root);
  PatternBank bank;
  std::vector<std::string> dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) dirs.push_back(e.path().string());
  std::sort(dirs.begin(), dirs.end());
  for (const auto& d : dirs) {
    Pattern p;
    p.name = fs::path(d).filename().string();
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(d))
      if (e.is_regular_file() && e.path().extension() == ".wav") files.push_back(e.path().string());
    std::sort(files.begin(), files.end());
    std::vector<Segment> segments;
    for (const auto& f : files) {
      Segment s;
      s.file = f;
      s.audio = wav::read(f);
      real sec = s.audio.seconds();
      if (sec < 4.0 || sec > 8.0)
        warnings << "[data] warning: segment " << f << " is " << sec << " s (expected 4-8 s)\n";
      segments.push_back(std::move(s));
    }
    if (segments.empty()) continue;
    Rng prng = Rng(seed).derive(Rng::hash_name(p.name));
    p.splits = split_patterns(std::move(segments), prng, warnings, p.name);
    bank.patterns.push_back(std::move(p));
  }
  return bank;
}

// ---------------------------------------------------------------------------
// Chunk sampling and mixture construction
// ---------------------------------------------------------------------------

// Aligned random crop from the mixture and the target stem.
inline std::pair<Waveform, Waveform> sample_chunk(const Track& track, const std::string& source,
                                                  long chunk_samples, Rng& rng) {
  check_data(track.stems.count(source) == 1, "sample_chunk: track " + track.id + " lacks stem " + source);
  const Waveform& mix = track.mixture;
  const Waveform& stem = track.stems.at(source);
  check_data(mix.length() > chunk_samples, "sample_chunk: track " + track.id + " shorter than chunk");
  long offset = rng.below(mix.length() - chunk_samples + 1);
  const long ch = mix.channels();
  Waveform m(Tensor({ch, chunk_samples}), mix.sample_rate);
  Waveform s(Tensor({ch, chunk_samples}), mix.sample_rate);
  for (long c = 0; c < ch; ++c)
    for (long i = 0; i < chunk_samples; ++i) {
      m.samples.at(c, i) = mix.samples.at(c, offset + i);
      s.samples.at(c, i) = stem.samples.at(c, offset + i);
    }
  return {std::move(m), std::move(s)};
}

struct Placement {
  std::string pattern;
  std::string file;
  long dest_offset = 0;
  long seg_offset = 0;
  long length = 0;
};

// Entry per segment draw; the NVC audit inspects this.
struct SamplerLogEntry {
  std::string pattern;
  std::string file;
};
using SamplerLog = std::vector<SamplerLogEntry>;

// Copies a segment window into dst (added), broadcasting mono to stereo.
inline void add_segment(Tensor& dst, const Waveform& seg, long dest_offset, long seg_offset,
                        long length, real gain = 1.0) {
  const long ch = dst.dim(0);
  for (long c = 0; c < ch; ++c) {
    long sc = seg.channels() == 1 ? 0 : c % seg.channels();
    for (long i = 0; i < length; ++i)
      dst.at(c, dest_offset + i) += gain * seg.samples.at(sc, seg_offset + i);
  }
}

// Draws one b-train segment of the pattern, truncates it to the chunk length
// or zero-pads it at a uniform random position, and adds it to the chunk.
// The overlay alone is returned through *overlay_out so callers can also add
// it to the target (Vocal Chops in VC mode). Purely additive otherwise.
inline Waveform mix_train_pattern(const Waveform& chunk, const Pattern& pattern, Rng& rng,
                                  SamplerLog* log = nullptr, Waveform* overlay_out = nullptr,
                                  real gain = 1.0) {
  const auto& segs = pattern.splits.b_train;
  check_data(!segs.empty(), "mix_train_pattern: pattern " + pattern.name + " has empty b-train");
  const Segment& seg = segs[static_cast<size_t>(rng.below(static_cast<long>(segs.size())))];
  check_data(seg.audio.sample_rate == chunk.sample_rate,
             "mix_train_pattern: segment sample-rate mismatch for " + seg.file);
  if (log) log->push_back({pattern.name, seg.file});

  const long L = chunk.length(), seg_len = seg.audio.length();
  Waveform overlay(Tensor({chunk.channels(), L}), chunk.sample_rate);
  if (seg_len >= L) {
    add_segment(overlay.samples, seg.audio, 0, 0, L, gain);
  } else {
    long pos = rng.below(L - seg_len + 1);
    add_segment(overlay.samples, seg.audio, pos, 0, seg_len, gain);
  }
  Waveform out(chunk.samples + overlay.samples, chunk.sample_rate);
  if (overlay_out) *overlay_out = std::move(overlay);
  return out;
}

// Builds the evaluation overlay: segments concatenated with zero gaps such
// that 55% of the constructed signal is zero, then added to the song. The
// non-zero budget is filled exactly (the last segment is truncated to fit),
// and gap lengths are drawn uniform then rescaled to consume the remainder.
constexpr real kOverlayZeroFraction = 0.55;

inline Waveform build_eval_mixture(const Waveform& song, const Pattern& pattern,
                                   const std::string& split, Rng& rng,
                                   std::vector<Placement>* placements_out = nullptr,
                                   real gain = 1.0,
                                   real zero_fraction = kOverlayZeroFraction) {
  check(zero_fraction > 0.0 && zero_fraction < 1.0, "build_eval_mixture: zero fraction in (0,1)");
  const auto& segs = pattern.splits.of(split);
  Waveform out = song;
  if (segs.empty()) {
    if (placements_out) placements_out->clear();
    return out;
  }
  const long L = song.length();
  const long budget = std::lround(static_cast<real>(L) * (1.0 - zero_fraction));

  // Pick segment windows until the non-zero budget is exactly consumed.
  struct Piece {
    const Segment* seg;
    long len;
  };
  std::vector<Piece> pieces;
  long used = 0;
  while (used < budget) {
    const Segment& seg = segs[static_cast<size_t>(rng.below(static_cast<long>(segs.size())))];
    check_data(seg.audio.sample_rate == song.sample_rate,
               "build_eval_mixture: segment sample-rate mismatch for " + seg.file);
    long len = std::min(seg.audio.length(), budget - used);
    pieces.push_back({&seg, len});
    used += len;
  }

  // Uniform gap draws, rescaled to the remaining zeros (largest-remainder
  // apportionment keeps the total exact).
  const long n_gaps = static_cast<long>(pieces.size()) + 1;
  const long total_gap = L - budget;
  std::vector<real> draws(static_cast<size_t>(n_gaps));
  real sum = 0.0;
  for (auto& d : draws) {
    d = rng.uniform();
    sum += d;
  }
  std::vector<long> gaps(static_cast<size_t>(n_gaps));
  std::vector<std::pair<real, long>> rema;
  long assigned = 0;
  for (long i = 0; i < n_gaps; ++i) {
    real exact = sum > 0 ? draws[static_cast<size_t>(i)] / sum * static_cast<real>(total_gap)
                         : static_cast<real>(total_gap) / n_gaps;
    gaps[static_cast<size_t>(i)] = static_cast<long>(std::floor(exact));
    assigned += gaps[static_cast<size_t>(i)];
    rema.push_back({exact - std::floor(exact), i});
  }
  std::stable_sort(rema.begin(), rema.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (long k = 0; k < total_gap - assigned; ++k)
    ++gaps[static_cast<size_t>(rema[static_cast<size_t>(k % n_gaps)].second)];

  std::vector<Placement> placements;
  long pos = 0;
  for (size_t i = 0; i < pieces.size(); ++i) {
    pos += gaps[i];
    add_segment(out.samples, pieces[i].seg->audio, pos, 0, pieces[i].len, gain);
    placements.push_back({pattern.name, pieces[i].seg->file, pos, 0, pieces[i].len});
    pos += pieces[i].len;
  }
  if (placements_out) *placements_out = std::move(placements);
  return out;
}

// Per-(pattern, track) RNG stream: overlaying "all" patterns composes the
// exact overlays each single-pattern run would produce under the same seed.
inline Rng overlay_rng(uint64_t seed, const std::string& pattern, const std::string& track_id) {
  return Rng(seed).derive(Rng::hash_name(pattern)).derive(Rng::hash_name(track_id));
}

// Applies the chosen pattern overlays in bank order. vc_overlay_out, when
// given, accumulates only the Vocal Chops overlay (target-positive scoring).
inline Waveform apply_overlays(const Waveform& mixture,
                               const std::vector<const Pattern*>& chosen,
                               const std::string& bank_split, uint64_t seed,
                               const std::string& track_id,
                               std::vector<Placement>* placements_out = nullptr,
                               Tensor* vc_overlay_out = nullptr) {
  Waveform out = mixture;
  if (placements_out) placements_out->clear();
  for (const Pattern* p : chosen) {
    Rng rng = overlay_rng(seed, p->name, track_id);
    std::vector<Placement> placements;
    Waveform before = out;
    out = build_eval_mixture(out, *p, bank_split, rng, &placements);
    if (vc_overlay_out && p->name == kVocalChops) {
      if (vc_overlay_out->empty()) *vc_overlay_out = Tensor(out.samples.dims());
      *vc_overlay_out += out.samples - before.samples;
    }
    if (placements_out)
      for (auto& pl : placements) placements_out->push_back(std::move(pl));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training-facing chunk producer
// ---------------------------------------------------------------------------

enum class TrainMode { base, finetune_vc, finetune_nvc };

inline TrainMode parse_mode(const std::string& s) {
  if (s == "base") return TrainMode::base;
  if (s == "vc" || s == "finetune_vc") return TrainMode::finetune_vc;
  if (s == "nvc" || s == "finetune_nvc") return TrainMode::finetune_nvc;
  throw ConfigError("mode must be base|vc|nvc, got '" + s + "'");
}

// Draws aligned (mixture, target) chunks: random track, random offset,
// optional on-the-fly augmentation, and in fine-tune modes one pattern
// segment mixed into the chunk. All randomness flows from the Rng handed in;
// a worker would own its own derived generator.
class ChunkSampler {
 public:
  ChunkSampler(const TrackSet& tracks, std::string source, long chunk_samples,
               bool augment_enabled, const PatternBank* bank, TrainMode mode,
               std::ostream& warnings = std::cerr)
      : tracks_(tracks), source_(std::move(source)), chunk_(chunk_samples),
        augment_(augment_enabled), bank_(bank), mode_(mode), warnings_(warnings) {
    if (mode_ != TrainMode::base) {
      check_data(bank_ != nullptr && !bank_->patterns.empty(),
                 "sampler: fine-tune mode requires a pattern bank");
      for (const auto& p : bank_->patterns) {
        if (mode_ == TrainMode::finetune_nvc && p.name == kVocalChops) continue;
        eligible_.push_back(&p);
      }
      check_data(!eligible_.empty(), "sampler: no eligible patterns for this mode");
    }
  }

  const SamplerLog& log() const { return log_; }

  std::pair<Waveform, Waveform> draw(Rng& rng) {
    for (int attempt = 0; attempt < 64; ++attempt) {
      const Track& track =
          tracks_.tracks[static_cast<size_t>(rng.below(static_cast<long>(tracks_.tracks.size())))];
      AugmentSpec spec = augment_ ? AugmentSpec::draw(rng) : AugmentSpec{};
      const real out_scale = 1.0 + static_cast<real>(spec.stretch_percent) / 100.0;
      // Source window long enough that the augmented result covers a chunk.
      long need = spec.is_identity()
                      ? chunk_
                      : static_cast<long>(std::ceil(static_cast<real>(chunk_) / out_scale)) + 4096;
      if (track.mixture.length() <= need) {
        warnings_ << "[data] warning: skipping short track " << track.id << "\n";
        continue;
      }
      auto [mix, target] = sample_chunk(track, source_, need, rng);
      if (!spec.is_identity()) {
        mix = augment(mix, spec);
        target = augment(target, spec);
      }
      Waveform m = exact_length(mix), t = exact_length(target);
      if (mode_ != TrainMode::base) {
        const Pattern& p =
            *eligible_[static_cast<size_t>(rng.below(static_cast<long>(eligible_.size())))];
        Waveform overlay;
        m = mix_train_pattern(m, p, rng, &log_, &overlay);
        // Vocal Chops join the target only in VC mode.
        if (mode_ == TrainMode::finetune_vc && p.name == kVocalChops) t.samples += overlay.samples;
      }
      return {std::move(m), std::move(t)};
    }
    throw DataError("sampler: no usable track after 64 attempts (all too short?)");
  }

 private:
  Waveform exact_length(const Waveform& w) const {
    if (w.length() == chunk_) return w;
    Waveform out(Tensor({w.channels(), chunk_}), w.sample_rate);
    long n = std::min(chunk_, w.length());
    for (long c = 0; c < w.channels(); ++c)
      for (long i = 0; i < n; ++i) out.samples.at(c, i) = w.samples.at(c, i);
    return out;
  }

  const TrackSet& tracks_;
  std::string source_;
  long chunk_;
  bool augment_;
  const PatternBank* bank_;
  TrainMode mode_;
  std::ostream& warnings_;
  std::vector<const Pattern*> eligible_;
  SamplerLog log_;
};

}  // namespace data
}  // namespace dttnet
