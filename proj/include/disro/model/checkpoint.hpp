#pragma once

#include "disro/model/model.hpp"

#include <json.hpp>

#include <string>

namespace disro::model {

/// Version string recorded in checkpoints, manifests and reports.
constexpr const char* kBuildVersion = "disro-0.1.0";

struct CheckpointMeta {
    int64_t epoch = 0;
    uint64_t seed = 0;
    std::string config_hash;
    std::string variant;
};

nlohmann::json backbone_to_json(const BackboneConfig& cfg);
BackboneConfig backbone_from_json(const nlohmann::json& j);

/// Versioned container: magic "DISRO1", metadata block, named parameter blobs.
/// Round-trip load is bit-exact.
void save_checkpoint(const std::string& path, ModelBundle& bundle, const CheckpointMeta& meta);

struct LoadedCheckpoint {
    ModelBundle bundle;
    CheckpointMeta meta;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

/// FNV-1a hash of a canonical JSON dump, hex-encoded; used as config hash.
std::string json_hash(const nlohmann::json& j);

}  // namespace disro::model
