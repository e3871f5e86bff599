#pragma once

#include <json.hpp>

#include <string>
#include <vector>

namespace disro::data {

/// One record per training or evaluation run, appended to
/// <out_dir>/manifests.ndjson (append-only).
struct RunManifest {
    std::string run_id;
    std::string command;
    nlohmann::json config_snapshot;
    std::string config_hash;
    std::string build;
    uint64_t seed = 0;
    std::string started_at;
    std::string finished_at;
    std::vector<std::string> artifacts;
};

std::string now_iso8601();
std::string make_run_id(const std::string& command, uint64_t seed);
void append_manifest(const std::string& out_dir, const RunManifest& m);

}  // namespace disro::data
