// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "raggym/util.hpp"

namespace raggym {

struct InputRef {
  std::string path;
  std::string sha256;
  bool operator==(const InputRef&) const = default;
};

/// One per artifact directory, written last as manifest.json.
struct RunManifest {
  std::string run_id;
  std::string command;
  json config;  // full snapshot, enough to re-run
  std::uint64_t seed = 0;
  std::map<std::string, std::string> schema_versions;
  std::map<std::string, InputRef> inputs;
  std::string started_at;
  std::string finished_at;
  std::map<std::string, std::int64_t> counts;
  std::map<std::string, std::string> outputs;  // relative path -> sha256
};

inline constexpr std::string_view kManifestSchema = "raggym.manifest.v1";
inline constexpr std::string_view kManifestFile = "manifest.json";

void to_json(json& j, const RunManifest& m);
void from_json(const json& j, RunManifest& m);

InputRef input_ref(const std::filesystem::path& path);

/// Digest of command, canonical config, seed and input digests; stable
/// across reruns and replays of the same experiment.
std::string compute_run_id(std::string_view command, const json& config, std::uint64_t seed,
                           const std::map<std::string, InputRef>& inputs);

/// Lists every regular file under `dir` except the manifest itself.
std::map<std::string, std::string> digest_outputs(const std::filesystem::path& dir);

/// Fills outputs and finished_at, then writes manifest.json into the
/// staging directory.
void write_manifest(const AtomicDir& dir, RunManifest& manifest);
RunManifest load_manifest(const std::filesystem::path& dir);

/// Files whose digest differs from the manifest, or that are missing or
/// unlisted.
std::vector<std::string> verify_outputs(const std::filesystem::path& dir, const RunManifest& manifest);

}  // namespace raggym
