// SPDX-License-Identifier: Apache-2.0
#include "raggym/manifest.hpp"

#include "raggym/error.hpp"

namespace raggym {

void to_json(json& j, const RunManifest& m) {
  json inputs = json::object();
  for (const auto& [k, v] : m.inputs) inputs[k] = {{"path", v.path}, {"sha256", v.sha256}};
  j = json{{"schema", kManifestSchema},
           {"run_id", m.run_id},
           {"command", m.command},
           {"config", m.config},
           {"seed", m.seed},
           {"schema_versions", m.schema_versions},
           {"inputs", inputs},
           {"started_at", m.started_at},
           {"finished_at", m.finished_at},
           {"counts", m.counts},
           {"outputs", m.outputs}};
}

void from_json(const json& j, RunManifest& m) {
  if (j.value("schema", std::string()) != kManifestSchema) {
    throw Error(ErrorKind::io, "not a " + std::string(kManifestSchema) + " document");
  }
  m.run_id = j.at("run_id").get<std::string>();
  m.command = j.at("command").get<std::string>();
  m.config = j.at("config");
  m.seed = j.at("seed").get<std::uint64_t>();
  m.schema_versions = j.at("schema_versions").get<std::map<std::string, std::string>>();
  m.inputs.clear();
  for (const auto& [k, v] : j.at("inputs").items()) {
    m.inputs[k] = InputRef{v.at("path").get<std::string>(), v.at("sha256").get<std::string>()};
  }
  m.started_at = j.at("started_at").get<std::string>();
  m.finished_at = j.at("finished_at").get<std::string>();
  m.counts = j.at("counts").get<std::map<std::string, std::int64_t>>();
  m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
}

InputRef input_ref(const std::filesystem::path& path) { return InputRef{path.string(), sha256_file(path)}; }

std::string compute_run_id(std::string_view command, const json& config, std::uint64_t seed,
                           const std::map<std::string, InputRef>& inputs) {
  json digests = json::object();
  for (const auto& [k, v] : inputs) digests[k] = v.sha256;
  const json key{{"command", command}, {"config", config}, {"seed", seed}, {"inputs", digests}};
  return sha256_hex(dump_line(key)).substr(0, 16);
}

std::map<std::string, std::string> digest_outputs(const std::filesystem::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(entry.path(), dir).generic_string();
    if (rel == kManifestFile) continue;
    out[rel] = sha256_file(entry.path());
  }
  return out;
}

void write_manifest(const AtomicDir& dir, RunManifest& manifest) {
  manifest.outputs = digest_outputs(dir.staging());
  manifest.finished_at = utc_timestamp();
  write_file(dir.path(kManifestFile), json(manifest).dump(2) + "\n");
}

RunManifest load_manifest(const std::filesystem::path& dir) {
  const auto file = dir / kManifestFile;
  if (!std::filesystem::exists(file)) throw Error(ErrorKind::io, "no manifest in directory", dir.string());
  try {
    return json::parse(read_file(file)).get<RunManifest>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::io, std::string("malformed manifest: ") + e.what(), file.string());
  }
}

std::vector<std::string> verify_outputs(const std::filesystem::path& dir, const RunManifest& manifest) {
  std::vector<std::string> problems;
  const auto actual = digest_outputs(dir);
  for (const auto& [name, digest] : manifest.outputs) {
    const auto it = actual.find(name);
    if (it == actual.end()) problems.push_back(name + ": missing");
    else if (it->second != digest) problems.push_back(name + ": digest mismatch");
  }
  for (const auto& [name, _] : actual) {
    if (!manifest.outputs.count(name)) problems.push_back(name + ": not listed in manifest");
  }
  return problems;
}

}  // namespace raggym
