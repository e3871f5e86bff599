#pragma once

#include "disro/attacks/attacks.hpp"
#include "disro/data/dataset.hpp"
#include "disro/model/model.hpp"
#include "disro/train/config.hpp"

#include <json.hpp>

#include <stdexcept>
#include <string>

namespace disro::data {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

constexpr int64_t kSchemaVersion = 1;

/// One config file drives dataset, architecture, training and the default
/// evaluation attack. Budgets given in integer 8-bit pixel units (values > 1)
/// are normalized to fractions of the dynamic range on read; the original
/// units are preserved under metadata.original_units.
struct RunConfig {
    int64_t schema_version = kSchemaVersion;
    uint64_t seed = 1;
    DatasetSpec dataset;
    model::BackboneConfig model;
    train::TrainConfig train;
    attacks::AttackSpec attack;
    nlohmann::json metadata = nlohmann::json::object();
};

RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const RunConfig& cfg);

/// Round-trip stable; unknown keys are rejected with their full key path.
RunConfig read_config(const std::string& path);
void write_config(const std::string& path, const RunConfig& cfg);

std::string config_hash(const RunConfig& cfg);

/// Normalize a budget that may be given in 8-bit pixel units (> 1 means px).
double normalize_budget(double v);

nlohmann::json attack_to_json(const attacks::AttackSpec& a);
attacks::AttackSpec attack_from_json(const nlohmann::json& j, nlohmann::json* metadata,
                                     const std::string& path);

}  // namespace disro::data
