#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include "dttnet/data.hpp"
#include "dttnet/model.hpp"
#include "dttnet/training.hpp"

namespace dttnet {
namespace config {

// Merged run configuration: model + training + paths + seed. Loaded from a
// flat key=value file with [model] / [train] / [run] sections; command-line
// overrides use the same section.key names. Unknown keys are errors.
struct RunConfig {
  model::ModelConfig model;
  train::TrainConfig train;
  std::string dataset_dir;
  std::string patterns_dir;
  uint64_t seed = 0;
  real overlap = 0.5;  // chunk overlap for inference/evaluation

  void apply(const std::string& section, const std::string& key, const std::string& value) {
    auto to_u64 = [&](const std::string& v) {
      try {
        return static_cast<uint64_t>(std::stoull(v));
      } catch (const std::exception&) {
        throw ConfigError("config: bad integer for " + key + ": '" + v + "'");
      }
    };
    auto to_real = [&](const std::string& v) {
      try {
        return std::stod(v);
      } catch (const std::exception&) {
        throw ConfigError("config: bad number for " + key + ": '" + v + "'");
      }
    };
    auto to_bool = [&](const std::string& v) {
      if (v == "true" || v == "1") return true;
      if (v == "false" || v == "0") return false;
      throw ConfigError("config: bad boolean for " + key + ": '" + v + "'");
    };
    if (section == "model") {
      model.apply_kv(key, value);
    } else if (section == "train") {
      if (key == "learning_rate") train.learning_rate = to_real(value);
      else if (key == "beta1") train.beta1 = to_real(value);
      else if (key == "beta2") train.beta2 = to_real(value);
      else if (key == "weight_decay") train.weight_decay = to_real(value);
      else if (key == "adam_eps") train.adam_eps = to_real(value);
      else if (key == "clip_norm") train.clip_norm = to_real(value);
      else if (key == "epoch_size") train.epoch_size = static_cast<long>(to_u64(value));
      else if (key == "max_epochs") train.max_epochs = static_cast<long>(to_u64(value));
      else if (key == "batch_size") train.batch_size = static_cast<long>(to_u64(value));
      else if (key == "mode") train.mode = data::parse_mode(value);
      else if (key == "augment") train.augment = to_bool(value);
      else if (key == "valid_overlap") train.valid_overlap = to_real(value);
      else if (key == "out_dir") train.out_dir = value;
      else throw ConfigError("config: unknown train key '" + key + "'");
    } else if (section == "run") {
      if (key == "seed") seed = to_u64(value);
      else if (key == "overlap") overlap = to_real(value);
      else if (key == "dataset") dataset_dir = value;
      else if (key == "patterns") patterns_dir = value;
      else throw ConfigError("config: unknown run key '" + key + "'");
    } else {
      throw ConfigError("config: unknown section '" + section + "'");
    }
  }

  // "section.key=value" override, e.g. from the command line.
  void apply_override(const std::string& expr) {
    auto eq = expr.find('=');
    check_config(eq != std::string::npos, "config: override must be section.key=value: " + expr);
    std::string path = data::trim(expr.substr(0, eq));
    std::string value = data::trim(expr.substr(eq + 1));
    auto dot = path.find('.');
    check_config(dot != std::string::npos, "config: override needs section.key: " + expr);
    apply(path.substr(0, dot), path.substr(dot + 1), value);
  }

  void load_file(const std::string& path) {
    std::ifstream f(path);
    check_config(static_cast<bool>(f), "config: cannot open " + path);
    std::string line, section = "run";
    long line_no = 0;
    while (std::getline(f, line)) {
      ++line_no;
      auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      std::string t = data::trim(line);
      if (t.empty()) continue;
      if (t.front() == '[' && t.back() == ']') {
        section = data::trim(t.substr(1, t.size() - 2));
        continue;
      }
      auto eq = t.find('=');
      check_config(eq != std::string::npos,
                   "config: " + path + ":" + std::to_string(line_no) + ": expected key = value");
      apply(section, data::trim(t.substr(0, eq)), data::trim(t.substr(eq + 1)));
    }
    validate();
  }

  void validate() const {
    model.validate();
    train.validate();
    check_config(overlap >= 0.0 && overlap <= 0.95, "config: overlap must be in [0, 0.95]");
  }

  // Effective-config snapshot; reloading it reproduces identical behavior.
  std::string dump() const {
    std::ostringstream os;
    os << "[model]\n" << model.to_kv();
    os << "[train]\n";
    os << "learning_rate = " << train.learning_rate << "\n";
    os << "beta1 = " << train.beta1 << "\n";
    os << "beta2 = " << train.beta2 << "\n";
    os << "weight_decay = " << train.weight_decay << "\n";
    os << "adam_eps = " << train.adam_eps << "\n";
    os << "clip_norm = " << train.clip_norm << "\n";
    os << "epoch_size = " << train.epoch_size << "\n";
    os << "max_epochs = " << train.max_epochs << "\n";
    os << "batch_size = " << train.batch_size << "\n";
    os << "mode = "
       << (train.mode == data::TrainMode::base
               ? "base"
               : train.mode == data::TrainMode::finetune_vc ? "vc" : "nvc")
       << "\n";
    os << "augment = " << (train.augment ? "true" : "false") << "\n";
    os << "valid_overlap = " << train.valid_overlap << "\n";
    os << "out_dir = " << train.out_dir << "\n";
    os << "[run]\n";
    os << "seed = " << seed << "\n";
    os << "overlap = " << overlap << "\n";
    os << "dataset = " << dataset_dir << "\n";
    os << "patterns = " << patterns_dir << "\n";
    return os.str();
  }

  void write_effective(const std::string& dir) const {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::ofstream f(fs::path(dir) / "effective-config.txt");
    check_data(static_cast<bool>(f), "config: cannot write effective-config in " + dir);
    f << dump();
  }
};

}  // namespace config
}  // namespace dttnet
