#include "procgt/manifest.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "procgt/errors.hpp"
#include "procgt/rng.hpp"

namespace procgt {

namespace {

using Json = nlohmann::json;

std::string to_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace

std::string fnv1a_hex(const std::string& data) { return to_hex(fnv1a64(data)); }

std::string hash_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return fnv1a_hex(buf.str());
}

// Input paths are deliberately left out: the same content computed from a
// different location is the same computation.
std::string RunManifest::hash() const {
    std::string blob = command;
    blob += '\n';
    blob += config_hash;
    blob += '\n';
    for (const auto& [path, h] : input_hashes) {
        blob += h;
        blob += '\n';
    }
    blob += std::to_string(seed);
    blob += '\n';
    blob += tool_version;
    return fnv1a_hex(blob);
}

void save_manifest(const RunManifest& m, const std::string& path) {
    Json j;
    j["command"] = m.command;
    j["config_hash"] = m.config_hash;
    Json inputs = Json::array();
    for (const auto& [p, h] : m.input_hashes) inputs.push_back({{"path", p}, {"hash", h}});
    j["input_hashes"] = std::move(inputs);
    j["seed"] = m.seed;
    j["tool_version"] = m.tool_version;
    j["created_at"] = m.created_at;
    j["manifest_hash"] = m.hash();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
    out << j.dump(2) << '\n';
}

RunManifest load_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
    Json j;
    try {
        in >> j;
    } catch (const Json::exception& e) {
        throw Error(ErrorKind::Io, std::string("bad manifest: ") + e.what());
    }
    RunManifest m;
    m.command = j.value("command", "");
    m.config_hash = j.value("config_hash", "");
    for (const auto& e : j.value("input_hashes", Json::array()))
        m.input_hashes.emplace_back(e.value("path", ""), e.value("hash", ""));
    m.seed = j.value("seed", std::uint64_t{0});
    m.tool_version = j.value("tool_version", "");
    m.created_at = j.value("created_at", "");
    return m;
}

} // namespace procgt
