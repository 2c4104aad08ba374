// dttnet command-line front end: train / separate / evaluate / inspect /
// mixgen. Exit codes: 0 success, 2 config error, 3 data error, 4 numerical
// failure. Diagnostics go to stderr; machine-readable results go to files.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "dttnet/checkpoint.hpp"
#include "dttnet/config.hpp"
#include "dttnet/data.hpp"
#include "dttnet/metrics.hpp"
#include "dttnet/model.hpp"
#include "dttnet/training.hpp"

namespace fs = std::filesystem;
using namespace dttnet;

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;
};

config::RunConfig load_run_config(const CommonOpts& opts) {
  config::RunConfig cfg;
  if (!opts.config_path.empty()) cfg.load_file(opts.config_path);
  for (const auto& o : opts.overrides) cfg.apply_override(o);
  cfg.validate();
  return cfg;
}

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "run configuration file (key = value with sections)");
  cmd->add_option("--set", opts.overrides, "override, e.g. --set model.depth=2")->take_all();
}

std::string shape_string(const std::vector<long>& dims) {
  std::string s = "[";
  for (size_t i = 0; i < dims.size(); ++i) s += (i ? "x" : "") + std::to_string(dims[i]);
  return s + "]";
}

std::vector<const data::Pattern*> select_patterns(const data::PatternBank& bank,
                                                  const std::string& overlay) {
  std::vector<const data::Pattern*> out;
  if (overlay == "all") {
    for (const auto& p : bank.patterns) out.push_back(&p);
  } else {
    const data::Pattern* p = bank.find(overlay);
    check_data(p != nullptr, "unknown pattern '" + overlay + "'");
    out.push_back(p);
  }
  return out;
}

std::string bank_split_for(const std::string& dataset_split, const std::string& requested) {
  if (requested != "auto") return requested;
  if (dataset_split == "valid") return "b-valid";
  if (dataset_split == "train") return "b-train";
  return "b-test";
}

int run_inspect(const CommonOpts& common, const std::string& out_dir) {
  config::RunConfig cfg = load_run_config(common);
  model::DttNet m(cfg.model);
  std::ostringstream table;
  long total = 0;
  for (const auto& row : m.param_table()) {
    table << std::left << std::setw(44) << row.name << std::setw(18)
          << shape_string(row.shape) << std::right << std::setw(10) << row.count << "\n";
    total += row.count;
  }
  table << "total = " << total << "\n";
  std::cout << table.str();
  if (m.param_count() != total) throw NumericError("inspect: table does not sum to the total");
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    std::ofstream f(fs::path(out_dir) / "parameters.txt");
    f << table.str();
    cfg.write_effective(out_dir);
  }
  return 0;
}

int run_separate(const std::string& model_path, const std::string& input,
                 const std::string& output, real overlap) {
  checkpoint::Checkpoint ck = checkpoint::Checkpoint::load(model_path);
  model::DttNet m(ck.config);
  checkpoint::restore(m, ck);
  Waveform mix = wav::read(input);
  std::cerr << "[separate] " << input << ": " << mix.seconds() << " s, " << mix.channels()
            << " ch -> " << output << "\n";
  Waveform est = model::separate(mix, m, overlap);
  wav::write(output, est, wav::probe_format(input));

  config::RunConfig cfg;
  cfg.model = ck.config;
  cfg.overlap = overlap;
  std::string dir = fs::path(output).has_parent_path() ? fs::path(output).parent_path().string()
                                                       : std::string(".");
  cfg.write_effective(dir);
  return 0;
}

int run_evaluate(const CommonOpts& common, const std::string& model_path,
                 const std::string& data_dir, const std::string& split,
                 const std::string& patterns_dir, const std::string& overlay, bool vc_target,
                 const std::string& bank_split_opt, uint64_t seed, real overlap,
                 const std::string& out_dir) {
  checkpoint::Checkpoint ck = checkpoint::Checkpoint::load(model_path);
  model::DttNet m(ck.config);
  checkpoint::restore(m, ck);
  const std::string source = m.config().source;

  data::TrackSet ts = data::load_track_set(data_dir, split);
  data::PatternBank bank;
  std::vector<const data::Pattern*> chosen;
  std::string bank_split = bank_split_for(split, bank_split_opt);
  if (!overlay.empty()) {
    check_config(!patterns_dir.empty(), "evaluate: --overlay requires --patterns");
    bank = data::load_pattern_bank(patterns_dir, seed);
    chosen = select_patterns(bank, overlay);
  }

  fs::create_directories(out_dir);
  std::ofstream records(fs::path(out_dir) / "records.txt");
  std::ofstream chunk_tables(fs::path(out_dir) / "chunk_tables.txt");
  records << std::setprecision(10);
  chunk_tables << std::setprecision(10);

  std::vector<metrics::TrackScore> scores;
  for (const auto& track : ts.tracks) {
    check_data(track.stems.count(source) == 1,
               "evaluate: track " + track.id + " lacks stem " + source);
    Waveform ref = track.stems.at(source);
    Tensor vc_overlay;
    Waveform mixture =
        data::apply_overlays(track.mixture, chosen, bank_split, seed, track.id, nullptr,
                             vc_target ? &vc_overlay : nullptr);
    if (vc_target && !vc_overlay.empty()) ref.samples += vc_overlay;
    Waveform est = model::separate(mixture, m, overlap);
    metrics::TrackScore s;
    s.id = track.id;
    s.usdr_db = metrics::sdr(ref, est);
    s.chunks = metrics::csdr_report(ref, est);
    s.csdr_db = s.chunks.db;
    records << "track=" << s.id << " usdr=" << s.usdr_db << " csdr=" << s.csdr_db
            << " chunks=" << s.chunks.valid_chunks << "\n";
    for (const auto& row : s.chunks.table)
      chunk_tables << "track=" << s.id << " chunk=" << row.index << " sdr=" << row.db
                   << " silent=" << (row.silent_ref ? 1 : 0) << " capped=" << (row.capped ? 1 : 0)
                   << "\n";
    std::cerr << "[evaluate] " << s.id << ": uSDR " << s.usdr_db << " dB, cSDR " << s.csdr_db
              << " dB\n";
    scores.push_back(std::move(s));
  }
  metrics::SdrReport rep = metrics::aggregate(std::move(scores));
  records << "aggregate tracks=" << rep.tracks.size() << " usdr_mean=" << rep.usdr_mean
          << " csdr_pooled_median=" << rep.csdr_pooled_median
          << " csdr_track_median=" << rep.csdr_track_median << "\n";

  std::cout << std::left << std::setw(28) << "track" << std::right << std::setw(12) << "uSDR dB"
            << std::setw(12) << "cSDR dB" << "\n";
  for (const auto& t : rep.tracks)
    std::cout << std::left << std::setw(28) << t.id << std::right << std::setw(12) << std::fixed
              << std::setprecision(3) << t.usdr_db << std::setw(12) << t.csdr_db << "\n";
  std::cout << std::left << std::setw(28) << "mean/pooled-median" << std::right << std::setw(12)
            << rep.usdr_mean << std::setw(12) << rep.csdr_pooled_median << "\n";

  config::RunConfig cfg = load_run_config(common);
  cfg.model = ck.config;
  cfg.seed = seed;
  cfg.overlap = overlap;
  cfg.dataset_dir = data_dir;
  cfg.patterns_dir = patterns_dir;
  cfg.write_effective(out_dir);
  return 0;
}

int run_train(const CommonOpts& common, const std::string& data_dir,
              const std::string& patterns_dir, const std::string& mode,
              const std::string& resume, const std::string& out_dir, int64_t seed_opt) {
  config::RunConfig cfg = load_run_config(common);
  if (!data_dir.empty()) cfg.dataset_dir = data_dir;
  if (!patterns_dir.empty()) cfg.patterns_dir = patterns_dir;
  if (!mode.empty()) cfg.train.mode = data::parse_mode(mode);
  if (!out_dir.empty()) cfg.train.out_dir = out_dir;
  if (seed_opt >= 0) cfg.seed = static_cast<uint64_t>(seed_opt);
  cfg.train.seed = cfg.seed;
  check_config(!cfg.dataset_dir.empty(), "train: --data (or run.dataset) is required");

  data::TrackSet train_set = data::load_track_set(cfg.dataset_dir, "train");
  data::TrackSet valid_set = data::load_track_set(cfg.dataset_dir, "valid");

  data::PatternBank bank;
  const data::PatternBank* bank_ptr = nullptr;
  if (cfg.train.mode != data::TrainMode::base) {
    check_config(!cfg.patterns_dir.empty(), "train: fine-tune modes require --patterns");
    bank = data::load_pattern_bank(cfg.patterns_dir, cfg.seed);
    bank_ptr = &bank;
  }

  model::DttNet m(cfg.model);
  m.init(cfg.seed);
  cfg.write_effective(cfg.train.out_dir);

  train::TrainState st = train::fit(m, cfg.train, train_set, valid_set, bank_ptr, std::cerr, resume);
  std::cerr << "[train] done: best epoch " << st.best_epoch + 1 << ", best uSDR " << st.best_usdr
            << " dB, checkpoint " << st.best_path << "\n";
  return 0;
}

int run_mixgen(const std::string& patterns_dir, const std::string& data_dir,
               const std::string& out_dir, uint64_t seed, const std::string& split,
               const std::string& overlay, const std::string& bank_split_opt) {
  data::TrackSet ts = data::load_track_set(data_dir, split);
  data::PatternBank bank = data::load_pattern_bank(patterns_dir, seed);
  std::vector<const data::Pattern*> chosen;
  if (!bank.patterns.empty()) chosen = select_patterns(bank, overlay);
  std::string bank_split = bank_split_for(split, bank_split_opt);

  fs::create_directories(out_dir);
  data::Manifest manifest;
  manifest.emplace_back("seed", std::to_string(seed));
  manifest.emplace_back("split", split);
  manifest.emplace_back("bank_split", bank_split);
  manifest.emplace_back("overlay", overlay);

  for (const auto& track : ts.tracks) {
    std::vector<data::Placement> placements;
    Waveform audio = data::apply_overlays(track.mixture, chosen, bank_split, seed, track.id,
                                          &placements);
    for (const auto& pl : placements) {
      std::ostringstream v;
      v << track.id << ", " << pl.pattern << ", " << pl.file << ", " << pl.dest_offset << ", "
        << pl.seg_offset << ", " << pl.length;
      manifest.emplace_back("placement", v.str());
    }
    std::string src_path = (fs::path(data_dir) / track.id / "mixture.wav").string();
    wav::SampleFormat fmt = fs::exists(src_path) ? wav::probe_format(src_path)
                                                 : wav::SampleFormat::pcm16;
    wav::write((fs::path(out_dir) / (track.id + ".wav")).string(), audio, fmt);
    std::cerr << "[mixgen] wrote " << track.id << ".wav\n";
  }
  data::write_manifest((fs::path(out_dir) / "mixgen-manifest.txt").string(), manifest);

  config::RunConfig cfg;
  cfg.seed = seed;
  cfg.dataset_dir = data_dir;
  cfg.patterns_dir = patterns_dir;
  cfg.write_effective(out_dir);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dttnet: dual-path TFC-TDF UNet source separation"};
  app.require_subcommand(1);

  CommonOpts inspect_common;
  std::string inspect_out;
  CLI::App* inspect = app.add_subcommand("inspect", "print the per-layer parameter table");
  add_common(inspect, inspect_common);
  inspect->add_option("--out-dir", inspect_out, "also write the table and effective config here");

  std::string sep_model, sep_in, sep_out;
  real sep_overlap = 0.5;
  CLI::App* separate = app.add_subcommand("separate", "separate one mixture WAV");
  separate->add_option("--model", sep_model, "checkpoint path")->required();
  separate->add_option("--input", sep_in, "input mixture WAV")->required();
  separate->add_option("--output", sep_out, "output estimate WAV")->required();
  separate->add_option("--overlap", sep_overlap, "chunk overlap fraction in [0, 0.95]");

  CommonOpts eval_common;
  std::string eval_model, eval_data, eval_split = "test", eval_patterns, eval_overlay;
  std::string eval_bank_split = "auto", eval_out = "eval_out";
  bool eval_vc_target = false;
  uint64_t eval_seed = 0;
  real eval_overlap = 0.5;
  CLI::App* evaluate = app.add_subcommand("evaluate", "score a checkpoint on a dataset split");
  add_common(evaluate, eval_common);
  evaluate->add_option("--model", eval_model, "checkpoint path")->required();
  evaluate->add_option("--data", eval_data, "dataset directory")->required();
  evaluate->add_option("--split", eval_split, "dataset split (train|valid|test)");
  evaluate->add_option("--patterns", eval_patterns, "pattern bank directory");
  evaluate->add_option("--overlay", eval_overlay, "pattern name or 'all' to overlay before scoring");
  evaluate->add_flag("--vc-target", eval_vc_target,
                     "add vocal-chop overlays to the reference target as well");
  evaluate->add_option("--bank-split", eval_bank_split, "b-train|b-valid|b-test (default auto)");
  evaluate->add_option("--seed", eval_seed, "overlay seed");
  evaluate->add_option("--overlap", eval_overlap, "chunk overlap fraction");
  evaluate->add_option("--out-dir", eval_out, "report directory");

  CommonOpts train_common;
  std::string train_data, train_patterns, train_mode, train_resume, train_out;
  int64_t train_seed = -1;
  CLI::App* train_cmd = app.add_subcommand("train", "train or fine-tune a model");
  add_common(train_cmd, train_common);
  train_cmd->add_option("--data", train_data, "dataset directory");
  train_cmd->add_option("--patterns", train_patterns, "pattern bank directory");
  train_cmd->add_option("--mode", train_mode, "base|vc|nvc");
  train_cmd->add_option("--resume", train_resume, "resume from a periodic snapshot");
  train_cmd->add_option("--out-dir", train_out, "output directory");
  train_cmd->add_option("--seed", train_seed, "run seed");

  std::string mix_patterns, mix_data, mix_out, mix_split = "test", mix_overlay = "all";
  std::string mix_bank_split = "auto";
  uint64_t mix_seed = 0;
  CLI::App* mixgen = app.add_subcommand("mixgen", "materialize overlaid evaluation mixtures");
  mixgen->add_option("--patterns", mix_patterns, "pattern bank directory")->required();
  mixgen->add_option("--data", mix_data, "dataset directory")->required();
  mixgen->add_option("--out", mix_out, "output directory")->required();
  mixgen->add_option("--seed", mix_seed, "seed");
  mixgen->add_option("--split", mix_split, "dataset split");
  mixgen->add_option("--overlay", mix_overlay, "pattern name or 'all'");
  mixgen->add_option("--bank-split", mix_bank_split, "b-train|b-valid|b-test (default auto)");

  try {
    app.parse(argc, argv);
    if (inspect->parsed()) return run_inspect(inspect_common, inspect_out);
    if (separate->parsed()) return run_separate(sep_model, sep_in, sep_out, sep_overlap);
    if (evaluate->parsed())
      return run_evaluate(eval_common, eval_model, eval_data, eval_split, eval_patterns,
                          eval_overlay, eval_vc_target, eval_bank_split, eval_seed, eval_overlap,
                          eval_out);
    if (train_cmd->parsed())
      return run_train(train_common, train_data, train_patterns, train_mode, train_resume,
                       train_out, train_seed);
    if (mixgen->parsed())
      return run_mixgen(mix_patterns, mix_data, mix_out, mix_seed, mix_split, mix_overlay,
                        mix_bank_split);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
