#pragma once

#include <cstring>
#include <fstream>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "dttnet/model.hpp"

namespace dttnet {
namespace checkpoint {

inline uint32_t crc32(const unsigned char* data, size_t len) {
  static uint32_t table[256];
  static bool ready = false;
  if (!ready) {
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int j = 0; j < 8; ++j) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      table[i] = c;
    }
    ready = true;
  }
  uint32_t crc = 0xffffffffu;
  for (size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xffu] ^ (crc >> 8);
  return crc ^ 0xffffffffu;
}

// Checkpoint container: named parameter arrays with shapes, a config echo,
// and training metadata, all behind a CRC32. Serialization is byte-exact
// deterministic: load followed by save reproduces the file.
struct Checkpoint {
  model::ModelConfig config;
  long epoch = 0;
  real best_usdr = -std::numeric_limits<real>::infinity();
  std::string rng_state;
  std::vector<std::pair<std::string, Tensor>> params;
  long opt_step = 0;  // optimizer state, present only in resumable snapshots
  std::vector<std::pair<std::string, Tensor>> opt_state;

  static constexpr char kMagic[8] = {'D', 'T', 'T', 'C', 'K', 'P', 'T', '1'};

  void save(const std::string& path) const {
    std::string payload;
    auto put_u64 = [&](uint64_t v) {
      for (int i = 0; i < 8; ++i) payload.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    };
    auto put_bytes = [&](const void* p, size_t n) {
      payload.append(static_cast<const char*>(p), n);
    };
    auto put_str = [&](const std::string& s) {
      put_u64(s.size());
      payload.append(s);
    };
    auto put_f64 = [&](real v) {
      uint64_t bits;
      std::memcpy(&bits, &v, 8);
      put_u64(bits);
    };

    auto put_tensors = [&](const std::vector<std::pair<std::string, Tensor>>& list) {
      put_u64(list.size());
      for (const auto& [name, t] : list) {
        put_str(name);
        put_u64(static_cast<uint64_t>(t.rank()));
        for (int i = 0; i < t.rank(); ++i) put_u64(static_cast<uint64_t>(t.dim(i)));
        put_bytes(t.data(), static_cast<size_t>(t.numel()) * sizeof(real));
      }
    };
    put_str(config.to_kv());
    put_u64(static_cast<uint64_t>(epoch));
    put_f64(best_usdr);
    put_str(rng_state);
    put_tensors(params);
    put_u64(static_cast<uint64_t>(opt_step));
    put_tensors(opt_state);

    std::ofstream f(path, std::ios::binary);
    check_data(static_cast<bool>(f), "checkpoint: cannot write " + path);
    f.write(kMagic, 8);
    uint64_t len = payload.size();
    f.write(reinterpret_cast<const char*>(&len), 8);
    uint32_t crc = crc32(reinterpret_cast<const unsigned char*>(payload.data()), payload.size());
    f.write(reinterpret_cast<const char*>(&crc), 4);
    f.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    check_data(static_cast<bool>(f), "checkpoint: write failed for " + path);
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    check_data(static_cast<bool>(f), "checkpoint: cannot open " + path);
    char magic[8];
    f.read(magic, 8);
    check_data(f.gcount() == 8 && std::memcmp(magic, kMagic, 8) == 0,
               "checkpoint: bad magic in " + path);
    uint64_t len = 0;
    uint32_t crc = 0;
    f.read(reinterpret_cast<char*>(&len), 8);
    f.read(reinterpret_cast<char*>(&crc), 4);
    std::string payload(len, '\0');
    f.read(payload.data(), static_cast<std::streamsize>(len));
    check_data(f.gcount() == static_cast<std::streamsize>(len),
               "checkpoint: truncated file " + path);
    check_data(crc32(reinterpret_cast<const unsigned char*>(payload.data()), payload.size()) == crc,
               "checkpoint: checksum mismatch (corrupt file) " + path);

    size_t pos = 0;
    auto get_u64 = [&]() {
      check_data(pos + 8 <= payload.size(), "checkpoint: truncated payload");
      uint64_t v = 0;
      for (int i = 0; i < 8; ++i)
        v |= static_cast<uint64_t>(static_cast<unsigned char>(payload[pos + i])) << (8 * i);
      pos += 8;
      return v;
    };
    auto get_str = [&]() {
      uint64_t n = get_u64();
      check_data(pos + n <= payload.size(), "checkpoint: truncated payload");
      std::string s = payload.substr(pos, n);
      pos += n;
      return s;
    };
    auto get_f64 = [&]() {
      uint64_t bits = get_u64();
      real v;
      std::memcpy(&v, &bits, 8);
      return v;
    };

    auto get_tensors = [&](std::vector<std::pair<std::string, Tensor>>& list) {
      uint64_t n = get_u64();
      list.reserve(n);
      for (uint64_t i = 0; i < n; ++i) {
        std::string name = get_str();
        uint64_t rank = get_u64();
        std::vector<long> dims;
        for (uint64_t d = 0; d < rank; ++d) dims.push_back(static_cast<long>(get_u64()));
        Tensor t(dims);
        size_t bytes = static_cast<size_t>(t.numel()) * sizeof(real);
        check_data(pos + bytes <= payload.size(), "checkpoint: truncated payload");
        std::memcpy(t.data(), payload.data() + pos, bytes);
        pos += bytes;
        list.emplace_back(std::move(name), std::move(t));
      }
    };
    Checkpoint ck;
    ck.config = model::ModelConfig::from_kv(get_str());
    ck.epoch = static_cast<long>(get_u64());
    ck.best_usdr = get_f64();
    ck.rng_state = get_str();
    get_tensors(ck.params);
    ck.opt_step = static_cast<long>(get_u64());
    get_tensors(ck.opt_state);
    return ck;
  }
};

inline Checkpoint snapshot(const model::DttNet& m, long epoch = 0,
                           real best_usdr = -std::numeric_limits<real>::infinity(),
                           std::string rng_state = {}) {
  Checkpoint ck;
  ck.config = m.config();
  ck.epoch = epoch;
  ck.best_usdr = best_usdr;
  ck.rng_state = std::move(rng_state);
  for (const auto& p : m.params().items()) ck.params.emplace_back(p.name, *p.value);
  return ck;
}

// Keys that must match for a checkpoint to be loadable into a model.
inline void restore(model::DttNet& m, const Checkpoint& ck) {
  const std::string want = m.config().to_kv(), got = ck.config.to_kv();
  check_data(want == got, "checkpoint: model config mismatch\n-- model --\n" + want +
                              "-- checkpoint --\n" + got);
  auto& items = m.params().items();
  check_data(items.size() == ck.params.size(), "checkpoint: parameter count mismatch");
  for (size_t i = 0; i < items.size(); ++i) {
    check_data(items[i].name == ck.params[i].first,
               "checkpoint: parameter name mismatch at " + items[i].name);
    check_data(items[i].value->dims() == ck.params[i].second.dims(),
               "checkpoint: parameter shape mismatch at " + items[i].name);
    *items[i].value = ck.params[i].second;
  }
}

}  // namespace checkpoint
}  // namespace dttnet
