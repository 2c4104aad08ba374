#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "dttnet/core.hpp"
#include "dttnet/wav.hpp"

namespace dttnet {
namespace metrics {

// Energy-ratio SDR. The error energy is floored at kEnergyFloorRel times the
// reference energy, capping the score at +100 dB; references below
// kSilentRefEnergy are flagged silent and excluded from aggregates.
constexpr real kEnergyFloorRel = 1e-10;
constexpr real kSilentRefEnergy = 1e-12;
constexpr real kSdrCapDb = 100.0;

struct SdrDetail {
  real db = 0.0;
  bool silent_ref = false;
  bool capped = false;
};

inline SdrDetail sdr_detail(const Waveform& ref, const Waveform& est) {
  check(ref.channels() == est.channels() && ref.length() == est.length(),
        "sdr: length/channel mismatch");
  SdrDetail out;
  real ref_energy = ref.samples.sq_norm();  // summed over all channels
  if (ref_energy < kSilentRefEnergy) {
    out.silent_ref = true;
    out.db = 0.0;
    return out;
  }
  real err = 0.0;
  for (long i = 0; i < ref.samples.numel(); ++i) {
    real d = ref.samples[i] - est.samples[i];
    err += d * d;
  }
  real floor = kEnergyFloorRel * ref_energy;
  if (err < floor) {
    err = floor;
    out.capped = true;
  }
  out.db = 10.0 * std::log10(ref_energy / err);
  return out;
}

inline real sdr(const Waveform& ref, const Waveform& est) {
  SdrDetail d = sdr_detail(ref, est);
  check(!d.silent_ref, "sdr: silent reference");
  return d.db;
}

// Mean of per-track SDR over non-silent tracks.
inline real usdr(const std::vector<std::pair<const Waveform*, const Waveform*>>& tracks) {
  check(!tracks.empty(), "usdr: no tracks");
  real sum = 0.0;
  long n = 0;
  for (const auto& [ref, est] : tracks) {
    SdrDetail d = sdr_detail(*ref, *est);
    if (d.silent_ref) continue;
    sum += d.db;
    ++n;
  }
  check(n > 0, "usdr: all tracks silent");
  return sum / static_cast<real>(n);
}

inline real usdr(const Waveform& ref, const Waveform& est) {
  return usdr({{&ref, &est}});
}

inline real median(std::vector<real> v) {
  check(!v.empty(), "median: empty");
  std::sort(v.begin(), v.end());
  size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct ChunkRow {
  long index = 0;
  real db = 0.0;
  bool silent_ref = false;
  bool capped = false;
};

struct CsdrReport {
  real db = 0.0;
  long valid_chunks = 0;
  std::vector<ChunkRow> table;  // one row per chunk, silent ones flagged
};

// SDR on non-overlapping 1 s chunks (final partial chunk dropped), median of
// the non-silent chunk scores; even counts average the two middles.
inline CsdrReport csdr_report(const Waveform& ref, const Waveform& est) {
  check(ref.channels() == est.channels() && ref.length() == est.length(),
        "csdr: length/channel mismatch");
  const long chunk = ref.sample_rate;
  check_data(ref.length() >= chunk, "csdr: signal shorter than one second");
  const long n_chunks = ref.length() / chunk;
  const long ch = ref.channels();

  CsdrReport rep;
  std::vector<real> valid;
  for (long k = 0; k < n_chunks; ++k) {
    Waveform r(Tensor({ch, chunk}), ref.sample_rate);
    Waveform e(Tensor({ch, chunk}), ref.sample_rate);
    for (long c = 0; c < ch; ++c)
      for (long i = 0; i < chunk; ++i) {
        r.samples.at(c, i) = ref.samples.at(c, k * chunk + i);
        e.samples.at(c, i) = est.samples.at(c, k * chunk + i);
      }
    SdrDetail d = sdr_detail(r, e);
    rep.table.push_back({k, d.db, d.silent_ref, d.capped});
    if (!d.silent_ref) valid.push_back(d.db);
  }
  check_data(!valid.empty(), "csdr: no valid chunks");
  rep.valid_chunks = static_cast<long>(valid.size());
  rep.db = median(valid);
  return rep;
}

inline real csdr(const Waveform& ref, const Waveform& est) { return csdr_report(ref, est).db; }

// Per-track and aggregate results; the chunk tables are retained for audit.
struct TrackScore {
  std::string id;
  real usdr_db = 0.0;
  real csdr_db = 0.0;
  CsdrReport chunks;
};

struct SdrReport {
  std::vector<TrackScore> tracks;
  real usdr_mean = 0.0;
  real csdr_pooled_median = 0.0;     // headline: median over all chunks pooled
  real csdr_track_median = 0.0;      // median of per-track cSDR values
};

inline SdrReport aggregate(std::vector<TrackScore> tracks) {
  check(!tracks.empty(), "report: no tracks");
  SdrReport rep;
  rep.tracks = std::move(tracks);
  real sum = 0.0;
  std::vector<real> pooled, per_track;
  for (const auto& t : rep.tracks) {
    sum += t.usdr_db;
    per_track.push_back(t.csdr_db);
    for (const auto& row : t.chunks.table)
      if (!row.silent_ref) pooled.push_back(row.db);
  }
  rep.usdr_mean = sum / static_cast<real>(rep.tracks.size());
  rep.csdr_pooled_median = median(pooled);
  rep.csdr_track_median = median(per_track);
  return rep;
}

}  // namespace metrics
}  // namespace dttnet
