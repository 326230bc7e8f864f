// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace raggym {

using json = nlohmann::json;

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);

/// Hex SHA-256 of `data`.
std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::filesystem::path& path);

/// 64-bit FNV-1a. Stable across platforms, used for feature hashing.
std::uint64_t fnv1a64(std::string_view data, std::uint64_t basis = 0xcbf29ce484222325ULL);

/// Named sub-stream of a root seed: the first 8 bytes of
/// SHA-256("<root>/<name>"), so derived seeds do not depend on call order.
std::uint64_t derive_seed(std::uint64_t root, std::string_view name);

/// Portable RNG helpers. The standard distributions are implementation
/// defined, so sampling goes through these instead.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);
  std::uint64_t next();
  /// Uniform integer in [0, bound).
  std::uint64_t below(std::uint64_t bound);
  /// Uniform double in [0, 1).
  double uniform();
  template <class T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

std::vector<json> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, const std::vector<json>& rows);
/// Canonical one-line JSON (sorted keys, no whitespace).
std::string dump_line(const json& value);

/// Builds an output directory under a sibling temp path and renames it into
/// place on commit. Destroying an uncommitted builder removes the temp tree.
class AtomicDir {
 public:
  AtomicDir(std::filesystem::path target, bool force);
  ~AtomicDir();
  AtomicDir(const AtomicDir&) = delete;
  AtomicDir& operator=(const AtomicDir&) = delete;

  const std::filesystem::path& staging() const { return staging_; }
  const std::filesystem::path& target() const { return target_; }
  std::filesystem::path path(std::string_view name) const { return staging_ / name; }
  void commit();

 private:
  std::filesystem::path target_;
  std::filesystem::path staging_;
  bool force_;
  bool committed_ = false;
};

std::string utc_timestamp();

/// Calls fn(i) for i in [0, count) on up to `jobs` threads. Callers write
/// results into per-index slots so output order never depends on
/// scheduling. The first exception is rethrown after all workers finish.
void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn);

}  // namespace raggym
