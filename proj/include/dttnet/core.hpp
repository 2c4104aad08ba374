#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace dttnet {

using real = double;

// Error taxonomy mirrored by the CLI exit codes (2/3/4).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

inline void check_config(bool cond, const std::string& msg) {
  if (!cond) throw ConfigError(msg);
}

inline void check_data(bool cond, const std::string& msg) {
  if (!cond) throw DataError(msg);
}

}  // namespace dttnet
