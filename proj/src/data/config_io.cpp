#include "disro/data/config_io.hpp"

#include "disro/model/checkpoint.hpp"

#include <fstream>
#include <set>

namespace disro::data {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& path) {
    if (!j.is_object()) throw ConfigError("expected object at " + (path.empty() ? "<root>" : path));
    for (const auto& [key, _] : j.items())
        if (!allowed.count(key))
            throw ConfigError("unknown key: " + (path.empty() ? key : path + "." + key));
}

}  // namespace

double normalize_budget(double v) { return v > 1.0 ? v / 255.0 : v; }

namespace {

double read_budget(const json& j, const char* key, double fallback, json* metadata,
                   const std::string& path) {
    if (!j.contains(key)) return fallback;
    const double raw = j.at(key).get<double>();
    if (raw > 1.0 && metadata)
        (*metadata)["original_units"][path + "." + key] = raw;
    return normalize_budget(raw);
}

}  // namespace

json attack_to_json(const attacks::AttackSpec& a) {
    json j;
    j["kind"] = attacks::to_string(a.kind);
    j["inner_loss"] = attacks::to_string(a.inner_loss);
    j["epsilon"] = a.epsilon;
    j["step_size"] = a.step_size;
    j["num_steps"] = a.num_steps;
    j["random_start"] = a.random_start;
    j["norm"] = attacks::to_string(a.norm);
    j["seed"] = a.seed;
    j["cw_kappa"] = a.cw_kappa;
    return j;
}

attacks::AttackSpec attack_from_json(const json& j, json* metadata, const std::string& path) {
    check_keys(j, {"kind", "inner_loss", "epsilon", "step_size", "num_steps", "random_start", "norm",
                   "seed", "cw_kappa"},
               path);
    attacks::AttackSpec a;
    if (j.contains("kind")) a.kind = attacks::attack_kind_from_string(j.at("kind").get<std::string>());
    if (j.contains("inner_loss"))
        a.inner_loss = attacks::inner_loss_from_string(j.at("inner_loss").get<std::string>());
    a.epsilon = read_budget(j, "epsilon", a.epsilon, metadata, path);
    a.step_size = read_budget(j, "step_size", a.step_size, metadata, path);
    a.num_steps = j.value("num_steps", a.num_steps);
    if (a.kind == attacks::AttackKind::fgsm && !j.contains("num_steps")) a.num_steps = 1;
    a.random_start = j.value("random_start", a.random_start);
    if (j.contains("norm")) a.norm = attacks::norm_from_string(j.at("norm").get<std::string>());
    a.seed = j.value("seed", a.seed);
    a.cw_kappa = j.value("cw_kappa", a.cw_kappa);
    a.validate();
    return a;
}

namespace {

json diversify_to_json(const attacks::DiversifySpec& d) {
    json j;
    j["epsilon_range"] = {d.epsilon_lo, d.epsilon_hi};
    j["steps_choices"] = d.steps_choices;
    j["step_size_range"] = {d.step_size_lo, d.step_size_hi};
    return j;
}

attacks::DiversifySpec diversify_from_json(const json& j, json* metadata, const std::string& path) {
    check_keys(j, {"epsilon_range", "steps_choices", "step_size_range"}, path);
    attacks::DiversifySpec d;
    if (j.contains("epsilon_range")) {
        auto v = j.at("epsilon_range").get<std::vector<double>>();
        if (v.size() != 2) throw ConfigError(path + ".epsilon_range must have two entries");
        if ((v[0] > 1.0 || v[1] > 1.0) && metadata)
            (*metadata)["original_units"][path + ".epsilon_range"] = v;
        d.epsilon_lo = normalize_budget(v[0]);
        d.epsilon_hi = normalize_budget(v[1]);
    }
    if (j.contains("steps_choices")) d.steps_choices = j.at("steps_choices").get<std::vector<int64_t>>();
    if (j.contains("step_size_range")) {
        auto v = j.at("step_size_range").get<std::vector<double>>();
        if (v.size() != 2) throw ConfigError(path + ".step_size_range must have two entries");
        if ((v[0] > 1.0 || v[1] > 1.0) && metadata)
            (*metadata)["original_units"][path + ".step_size_range"] = v;
        d.step_size_lo = normalize_budget(v[0]);
        d.step_size_hi = normalize_budget(v[1]);
    }
    d.validate();
    return d;
}

json weights_to_json(const losses::LossWeights& w) {
    return json{{"dist", w.dist}, {"ce", w.ce}, {"bce", w.bce},
                {"adv", w.adv},   {"res", w.res}, {"kl", w.kl}};
}

losses::LossWeights weights_from_json(const json& j, const std::string& path) {
    check_keys(j, {"dist", "ce", "bce", "adv", "res", "kl"}, path);
    losses::LossWeights w;
    w.dist = j.value("dist", w.dist);
    w.ce = j.value("ce", w.ce);
    w.bce = j.value("bce", w.bce);
    w.adv = j.value("adv", w.adv);
    w.res = j.value("res", w.res);
    w.kl = j.value("kl", w.kl);
    w.validate();
    return w;
}

json synthetic_to_json(const SyntheticSpec& s) {
    json j;
    j["num_classes"] = s.num_classes;
    j["samples_per_class"] = s.samples_per_class;
    j["channels"] = s.channels;
    j["height"] = s.height;
    j["width"] = s.width;
    j["robust_amplitude"] = s.robust_amplitude;
    j["robust_strength_mean"] = s.robust_strength_mean;
    j["robust_strength_spread"] = s.robust_strength_spread;
    j["fragile_amplitude"] = s.fragile_amplitude;
    j["noise_sigma"] = s.noise_sigma;
    return j;
}

SyntheticSpec synthetic_from_json(const json& j, const std::string& path) {
    check_keys(j,
               {"num_classes", "samples_per_class", "channels", "height", "width", "robust_amplitude",
                "robust_strength_mean", "robust_strength_spread", "fragile_amplitude", "noise_sigma"},
               path);
    SyntheticSpec s;
    s.num_classes = j.value("num_classes", s.num_classes);
    s.samples_per_class = j.value("samples_per_class", s.samples_per_class);
    s.channels = j.value("channels", s.channels);
    s.height = j.value("height", s.height);
    s.width = j.value("width", s.width);
    s.robust_amplitude = j.value("robust_amplitude", s.robust_amplitude);
    s.robust_strength_mean = j.value("robust_strength_mean", s.robust_strength_mean);
    s.robust_strength_spread = j.value("robust_strength_spread", s.robust_strength_spread);
    s.fragile_amplitude = j.value("fragile_amplitude", s.fragile_amplitude);
    s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
    return s;
}

json dataset_to_json(const DatasetSpec& d) {
    json j;
    j["source"] = to_string(d.source);
    j["root"] = d.root;
    j["class_filter"] = d.class_filter;
    j["per_class_limit"] = d.per_class_limit;
    j["split"] = {{"train", d.split_train}, {"val", d.split_val}, {"test", d.split_test}};
    j["normalization"] = to_string(d.normalization);
    j["seed"] = d.seed;
    j["synthetic"] = synthetic_to_json(d.synthetic);
    return j;
}

DatasetSpec dataset_from_json(const json& j, const std::string& path) {
    check_keys(j,
               {"source", "root", "class_filter", "per_class_limit", "split", "normalization", "seed",
                "synthetic"},
               path);
    DatasetSpec d;
    if (j.contains("source")) d.source = source_from_string(j.at("source").get<std::string>());
    d.root = j.value("root", d.root);
    d.class_filter = j.value("class_filter", d.class_filter);
    d.per_class_limit = j.value("per_class_limit", d.per_class_limit);
    if (j.contains("split")) {
        check_keys(j.at("split"), {"train", "val", "test"}, path + ".split");
        d.split_train = j.at("split").value("train", d.split_train);
        d.split_val = j.at("split").value("val", d.split_val);
        d.split_test = j.at("split").value("test", d.split_test);
    }
    if (j.contains("normalization"))
        d.normalization = normalization_from_string(j.at("normalization").get<std::string>());
    d.seed = j.value("seed", d.seed);
    if (j.contains("synthetic")) d.synthetic = synthetic_from_json(j.at("synthetic"), path + ".synthetic");
    d.validate();
    return d;
}

json model_to_json_checked(const model::BackboneConfig& m) { return model::backbone_to_json(m); }

model::BackboneConfig model_from_json(const json& j, const std::string& path) {
    check_keys(j,
               {"in_channels", "in_height", "in_width", "extractor_blocks", "base_channels",
                "latent_dim", "num_classes", "grl_lambda", "disc_hidden", "recon_hidden",
                "norm_groups", "norm_mean", "norm_std"},
               path);
    auto cfg = model::backbone_from_json(j);
    cfg.validate();
    return cfg;
}

json train_to_json(const train::TrainConfig& t) {
    json j;
    j["epochs"] = t.epochs;
    j["batch_size"] = t.batch_size;
    j["learning_rate"] = t.learning_rate;
    j["lr_decay_epochs"] = t.lr_decay_epochs;
    j["lr_decay_factor"] = t.lr_decay_factor;
    j["momentum"] = t.momentum;
    j["weight_decay"] = t.weight_decay;
    j["component_lr_scale"] = t.component_lr_scale;
    j["diversify"] = diversify_to_json(t.diversify);
    j["at_attack"] = attack_to_json(t.at_attack);
    j["loss_weights"] = weights_to_json(t.loss_weights);
    j["seed"] = t.seed;
    j["early_stopping"] = {{"metric", t.early_stopping.metric},
                           {"eval_attack", attack_to_json(t.early_stopping.eval_attack)},
                           {"patience", t.early_stopping.patience}};
    j["checkpoint_every"] = t.checkpoint_every;
    j["ce_updates_extractor"] = t.ce_updates_extractor;
    j["accumulate_substeps"] = t.accumulate_substeps;
    j["kl_plain_minimization"] = t.kl_plain_minimization;
    j["train_inner_loss"] = attacks::to_string(t.train_inner_loss);
    return j;
}

train::TrainConfig train_from_json(const json& j, json* metadata, const std::string& path) {
    check_keys(j,
               {"epochs", "batch_size", "learning_rate", "lr_decay_epochs", "lr_decay_factor",
                "momentum", "weight_decay", "component_lr_scale", "diversify", "at_attack",
                "loss_weights", "seed", "early_stopping", "checkpoint_every", "ce_updates_extractor",
                "accumulate_substeps", "kl_plain_minimization", "train_inner_loss"},
               path);
    train::TrainConfig t;
    t.epochs = j.value("epochs", t.epochs);
    t.batch_size = j.value("batch_size", t.batch_size);
    t.learning_rate = j.value("learning_rate", t.learning_rate);
    t.lr_decay_epochs = j.value("lr_decay_epochs", t.lr_decay_epochs);
    t.lr_decay_factor = j.value("lr_decay_factor", t.lr_decay_factor);
    t.momentum = j.value("momentum", t.momentum);
    t.weight_decay = j.value("weight_decay", t.weight_decay);
    if (j.contains("component_lr_scale"))
        t.component_lr_scale = j.at("component_lr_scale").get<std::map<std::string, double>>();
    if (j.contains("diversify"))
        t.diversify = diversify_from_json(j.at("diversify"), metadata, path + ".diversify");
    if (j.contains("at_attack")) t.at_attack = attack_from_json(j.at("at_attack"), metadata, path + ".at_attack");
    if (j.contains("loss_weights")) t.loss_weights = weights_from_json(j.at("loss_weights"), path + ".loss_weights");
    t.seed = j.value("seed", t.seed);
    if (j.contains("early_stopping")) {
        const auto& e = j.at("early_stopping");
        check_keys(e, {"metric", "eval_attack", "patience"}, path + ".early_stopping");
        t.early_stopping.metric = e.value("metric", t.early_stopping.metric);
        if (e.contains("eval_attack"))
            t.early_stopping.eval_attack =
                attack_from_json(e.at("eval_attack"), metadata, path + ".early_stopping.eval_attack");
        t.early_stopping.patience = e.value("patience", t.early_stopping.patience);
    }
    t.checkpoint_every = j.value("checkpoint_every", t.checkpoint_every);
    t.ce_updates_extractor = j.value("ce_updates_extractor", t.ce_updates_extractor);
    t.accumulate_substeps = j.value("accumulate_substeps", t.accumulate_substeps);
    t.kl_plain_minimization = j.value("kl_plain_minimization", t.kl_plain_minimization);
    if (j.contains("train_inner_loss"))
        t.train_inner_loss = attacks::inner_loss_from_string(j.at("train_inner_loss").get<std::string>());
    t.validate();
    return t;
}

}  // namespace

RunConfig config_from_json(const json& j) {
    check_keys(j, {"schema_version", "seed", "dataset", "model", "train", "attack", "metadata"}, "");
    RunConfig cfg;
    cfg.schema_version = j.value("schema_version", kSchemaVersion);
    if (cfg.schema_version != kSchemaVersion)
        throw ConfigError("unsupported schema_version " + std::to_string(cfg.schema_version));
    cfg.seed = j.value("seed", cfg.seed);
    if (j.contains("metadata")) cfg.metadata = j.at("metadata");
    if (j.contains("dataset")) cfg.dataset = dataset_from_json(j.at("dataset"), "dataset");
    if (j.contains("model")) cfg.model = model_from_json(j.at("model"), "model");
    if (j.contains("train")) cfg.train = train_from_json(j.at("train"), &cfg.metadata, "train");
    if (j.contains("attack")) cfg.attack = attack_from_json(j.at("attack"), &cfg.metadata, "attack");
    return cfg;
}

json config_to_json(const RunConfig& cfg) {
    json j;
    j["schema_version"] = cfg.schema_version;
    j["seed"] = cfg.seed;
    j["dataset"] = dataset_to_json(cfg.dataset);
    j["model"] = model_to_json_checked(cfg.model);
    j["train"] = train_to_json(cfg.train);
    j["attack"] = attack_to_json(cfg.attack);
    j["metadata"] = cfg.metadata;
    return j;
}

RunConfig read_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config: " + path);
    json j;
    try {
        j = json::parse(is);
    } catch (const json::exception& e) {
        throw ConfigError("config parse error in " + path + ": " + e.what());
    }
    return config_from_json(j);
}

void write_config(const std::string& path, const RunConfig& cfg) {
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot write config: " + path);
    os << config_to_json(cfg).dump(2) << "\n";
}

std::string config_hash(const RunConfig& cfg) { return model::json_hash(config_to_json(cfg)); }

}  // namespace disro::data
