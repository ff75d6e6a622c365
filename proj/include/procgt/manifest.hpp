#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace procgt {

inline constexpr const char* kToolVersion = "0.1.0";

// Provenance record written next to every produced artifact. The hash covers
// command, config, input hashes, seed, and tool version; timestamps are
// excluded so same-seed reruns hash identically.
struct RunManifest {
    std::string command;
    std::string config_hash;
    std::vector<std::pair<std::string, std::string>> input_hashes; // path -> content hash
    std::uint64_t seed = 0;
    std::string tool_version = kToolVersion;
    std::string created_at; // ISO 8601, informational only

    std::string hash() const;
};

std::string fnv1a_hex(const std::string& data);
std::string hash_file(const std::string& path); // throws Io

void save_manifest(const RunManifest& manifest, const std::string& path);
RunManifest load_manifest(const std::string& path);

} // namespace procgt
