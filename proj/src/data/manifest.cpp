#include "disro/data/manifest.hpp"

#include "disro/data/dataset.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>

namespace disro::data {

std::string now_iso8601() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string make_run_id(const std::string& command, uint64_t seed) {
    const auto now = std::chrono::system_clock::now().time_since_epoch();
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now).count();
    char buf[64];
    snprintf(buf, sizeof(buf), "%s-%lld-seed%llu", command.c_str(), static_cast<long long>(ms),
             static_cast<unsigned long long>(seed));
    return buf;
}

void append_manifest(const std::string& out_dir, const RunManifest& m) {
    std::filesystem::create_directories(out_dir);
    nlohmann::json j;
    j["run_id"] = m.run_id;
    j["command"] = m.command;
    j["config"] = m.config_snapshot;
    j["config_hash"] = m.config_hash;
    j["build"] = m.build;
    j["seed"] = m.seed;
    j["started_at"] = m.started_at;
    j["finished_at"] = m.finished_at;
    j["artifacts"] = m.artifacts;
    std::ofstream os(out_dir + "/manifests.ndjson", std::ios::app);
    if (!os) throw DataError("cannot append manifest in " + out_dir);
    os << j.dump() << "\n";
}

}  // namespace disro::data
