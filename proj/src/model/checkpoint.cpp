#include "disro/model/checkpoint.hpp"

#include "disro/core/serialize.hpp"

#include <fstream>
#include <map>

namespace disro::model {

using nlohmann::json;

namespace {
constexpr char kMagic[6] = {'D', 'I', 'S', 'R', 'O', '1'};
constexpr uint32_t kContainerVersion = 1;
}  // namespace

json backbone_to_json(const BackboneConfig& cfg) {
    json j;
    j["in_channels"] = cfg.in_channels;
    j["in_height"] = cfg.in_height;
    j["in_width"] = cfg.in_width;
    j["extractor_blocks"] = cfg.extractor_blocks;
    j["base_channels"] = cfg.base_channels;
    j["latent_dim"] = cfg.latent_dim;
    j["num_classes"] = cfg.num_classes;
    j["grl_lambda"] = cfg.grl_lambda;
    j["disc_hidden"] = cfg.disc_hidden;
    j["recon_hidden"] = cfg.recon_hidden;
    j["norm_groups"] = cfg.norm_groups;
    j["norm_mean"] = cfg.norm_mean;
    j["norm_std"] = cfg.norm_std;
    return j;
}

BackboneConfig backbone_from_json(const json& j) {
    BackboneConfig cfg;
    cfg.in_channels = j.value("in_channels", cfg.in_channels);
    cfg.in_height = j.value("in_height", cfg.in_height);
    cfg.in_width = j.value("in_width", cfg.in_width);
    cfg.extractor_blocks = j.value("extractor_blocks", cfg.extractor_blocks);
    cfg.base_channels = j.value("base_channels", cfg.base_channels);
    cfg.latent_dim = j.value("latent_dim", cfg.latent_dim);
    cfg.num_classes = j.value("num_classes", cfg.num_classes);
    cfg.grl_lambda = j.value("grl_lambda", cfg.grl_lambda);
    cfg.disc_hidden = j.value("disc_hidden", cfg.disc_hidden);
    cfg.recon_hidden = j.value("recon_hidden", cfg.recon_hidden);
    cfg.norm_groups = j.value("norm_groups", cfg.norm_groups);
    cfg.norm_mean = j.value("norm_mean", cfg.norm_mean);
    cfg.norm_std = j.value("norm_std", cfg.norm_std);
    return cfg;
}

std::string json_hash(const json& j) {
    const std::string s = j.dump();
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void save_checkpoint(const std::string& path, ModelBundle& bundle, const CheckpointMeta& meta) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ModelError("cannot open checkpoint for writing: " + path);
    os.write(kMagic, sizeof(kMagic));
    io::write_u32(os, kContainerVersion);

    json m;
    m["format_version"] = bundle.format_version;
    m["variant"] = bundle.variant.empty() ? meta.variant : bundle.variant;
    m["epoch"] = meta.epoch;
    m["seed"] = meta.seed;
    m["config_hash"] = meta.config_hash;
    m["build"] = kBuildVersion;
    m["backbone"] = backbone_to_json(bundle.config);
    io::write_string(os, m.dump());

    uint32_t count = 0;
    bundle.visit_all([&](Component, const std::string&, nn::Param&) { ++count; });
    io::write_u32(os, count);
    bundle.visit_all([&](Component c, const std::string& name, nn::Param& p) {
        io::write_string(os, std::string(to_string(c)) + "/" + name);
        io::write_tensor(os, p.value);
    });
    if (!os) throw ModelError("checkpoint write failed: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ModelError("cannot open checkpoint: " + path);
    char magic[6];
    if (!is.read(magic, 6) || std::memcmp(magic, kMagic, 6) != 0)
        throw ModelError("not a DISRO1 checkpoint: " + path);
    const uint32_t ver = io::read_u32(is);
    if (ver != kContainerVersion)
        throw ModelError("unsupported checkpoint container version " + std::to_string(ver));

    json m = json::parse(io::read_string(is));
    BackboneConfig cfg = backbone_from_json(m.at("backbone"));

    LoadedCheckpoint out{ModelBundle::init(cfg, 0), CheckpointMeta{}};
    out.bundle.format_version = m.value("format_version", 1u);
    out.bundle.variant = m.value("variant", "");
    out.meta.epoch = m.value("epoch", int64_t{0});
    out.meta.seed = m.value("seed", uint64_t{0});
    out.meta.config_hash = m.value("config_hash", "");
    out.meta.variant = out.bundle.variant;

    std::map<std::string, nn::Param*> by_name;
    out.bundle.visit_all([&](Component c, const std::string& name, nn::Param& p) {
        by_name[std::string(to_string(c)) + "/" + name] = &p;
    });

    const uint32_t count = io::read_u32(is);
    if (count != by_name.size())
        throw ModelError("checkpoint blob count mismatch: " + std::to_string(count) + " vs " +
                         std::to_string(by_name.size()));
    for (uint32_t i = 0; i < count; ++i) {
        const std::string name = io::read_string(is);
        Tensor t = io::read_tensor(is);
        auto it = by_name.find(name);
        if (it == by_name.end()) throw ModelError("unknown parameter blob: " + name);
        if (!it->second->value.same_shape(t))
            throw ModelError("parameter shape mismatch for " + name);
        it->second->value = std::move(t);
    }
    return out;
}

}  // namespace disro::model
