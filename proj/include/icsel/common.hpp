#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace icsel {

using json = nlohmann::json;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad user-supplied configuration (descriptors, config files, CLI arguments).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent on-disk data (corpora, pools, stores).
class LoadError : public Error {
 public:
  using Error::Error;
};

// Replay store has no entry for a request.
class CacheMissError : public Error {
 public:
  using Error::Error;
};

// Prompt does not fit into the backend context window.
class ContextOverflowError : public Error {
 public:
  using Error::Error;
};

// Remote call failed after exhausting retries.
class TransportError : public Error {
 public:
  using Error::Error;
};

// Backend does not implement the requested capability.
class UnsupportedError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Hashing and seeding.
//
// All randomness in the library flows from a caller-supplied base seed through
// mix_seed, so independent substreams (pool sampling, oracle noise, eval
// prompt draws, ...) never share state and results are reproducible across
// thread counts.

inline constexpr uint64_t kFnvOffset = 1469598103934665603ull;
inline constexpr uint64_t kFnvPrime = 1099511628211ull;

inline uint64_t fnv1a(std::string_view s, uint64_t h = kFnvOffset) {
  for (unsigned char c : s) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

inline uint64_t fnv1a_u64(uint64_t v, uint64_t h = kFnvOffset) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xffu;
    h *= kFnvPrime;
  }
  return h;
}

// splitmix64 finalizer; breaks up correlated inputs before they seed a PRNG.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline uint64_t mix_seed(uint64_t base, uint64_t stream) {
  return mix64(base ^ mix64(stream));
}

inline std::string hash_hex(uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

using Rng = std::mt19937_64;

// ---------------------------------------------------------------------------
// Small statistics helpers.

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) throw Error("mean of empty vector");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double population_stddev(const std::vector<double>& v) {
  double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

// Returns nullopt when either input has zero variance.
inline std::optional<double> pearson(const std::vector<double>& a,
                                     const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty())
    throw Error("pearson: size mismatch or empty input");
  double ma = mean_of(a), mb = mean_of(b);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) return std::nullopt;
  return sab / std::sqrt(saa * sbb);
}

// Linear-interpolation quantile (the default scheme in numpy/R) on a sorted
// vector, p in [0, 1].
inline double quantile_sorted(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) throw Error("quantile of empty vector");
  if (p <= 0.0) return sorted.front();
  if (p >= 1.0) return sorted.back();
  double pos = p * static_cast<double>(sorted.size() - 1);
  size_t lo = static_cast<size_t>(pos);
  double frac = pos - static_cast<double>(lo);
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac;
}

// Indices ordered by descending value; ties broken by ascending index so
// rankings are total and reproducible.
inline std::vector<int> argsort_desc(const std::vector<double>& v) {
  std::vector<int> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (v[a] != v[b]) return v[a] > v[b];
    return a < b;
  });
  return idx;
}

// ---------------------------------------------------------------------------
// File helpers.

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Write via a temp file plus rename so readers never observe a partial file.
inline void write_text_file(const std::filesystem::path& path,
                            const std::string& content) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write file: " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw Error("short write: " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline json read_json_file(const std::filesystem::path& path) {
  json j = json::parse(read_text_file(path), nullptr, false);
  if (j.is_discarded()) throw LoadError("invalid JSON in " + path.string());
  return j;
}

inline void write_json_file(const std::filesystem::path& path, const json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

// Calls fn(record, line_number) for every non-empty line; line numbers are
// 1-based so they can be quoted in error messages.
inline void for_each_jsonl(const std::filesystem::path& path,
                           const std::function<void(const json&, size_t)>& fn) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open file: " + path.string());
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw LoadError(path.string() + ":" + std::to_string(lineno) +
                      ": invalid JSON line");
    fn(j, lineno);
  }
}

inline std::vector<std::string> split_ws(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream ss(text);
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

inline std::string join(const std::vector<std::string>& parts,
                        const std::string& sep) {
  std::string out;
  for (size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

}  // namespace icsel
