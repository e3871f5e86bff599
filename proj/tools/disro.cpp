#include "disro/data/config_io.hpp"
#include "disro/data/manifest.hpp"
#include "disro/data/ppm.hpp"
#include "disro/eval/evaluator.hpp"
#include "disro/eval/plot.hpp"
#include "disro/train/trainer.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using namespace disro;

namespace {

struct GlobalArgs {
    std::string config_path;
    std::string out_dir = "out";
    int64_t seed = -1;  // -1 = keep config seeds
};

data::RunConfig load_config(const GlobalArgs& g) {
    data::RunConfig cfg = g.config_path.empty() ? data::RunConfig{} : data::read_config(g.config_path);
    if (g.seed >= 0) {
        cfg.seed = static_cast<uint64_t>(g.seed);
        cfg.train.seed = static_cast<uint64_t>(g.seed);
        cfg.dataset.seed = static_cast<uint64_t>(g.seed);
    }
    return cfg;
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

attacks::AttackSpec spec_for(const std::string& name, const attacks::AttackSpec& base) {
    attacks::AttackSpec s = base;
    s.inner_loss = attacks::InnerLoss::cross_entropy;
    if (name == "pgd") {
        s.kind = attacks::AttackKind::pgd;
    } else if (name == "fgsm") {
        s.kind = attacks::AttackKind::fgsm;
        s.num_steps = 1;
        s.random_start = false;
    } else if (name == "cw") {
        s.kind = attacks::AttackKind::pgd;
        s.inner_loss = attacks::InnerLoss::cw_margin;
        s.cw_kappa = 50.0;
    } else if (name == "dlr") {
        s.kind = attacks::AttackKind::pgd;
        s.inner_loss = attacks::InnerLoss::dlr;
    } else if (name == "spsa") {
        s.kind = attacks::AttackKind::spsa;
    } else {
        throw attacks::AttackError("unknown attack name: " + name);
    }
    return s;
}

void apply_attack_flags(attacks::AttackSpec& s, double eps, double alpha, int64_t steps) {
    if (eps >= 0) s.epsilon = data::normalize_budget(eps);
    if (alpha > 0) s.step_size = data::normalize_budget(alpha);
    if (steps > 0) s.num_steps = steps;
}

data::RunManifest start_manifest(const std::string& command, const data::RunConfig& cfg) {
    data::RunManifest m;
    m.run_id = data::make_run_id(command, cfg.seed);
    m.command = command;
    m.config_snapshot = data::config_to_json(cfg);
    m.config_hash = data::config_hash(cfg);
    m.build = model::kBuildVersion;
    m.seed = cfg.seed;
    m.started_at = data::now_iso8601();
    return m;
}

model::BackboneConfig arch_with_stats(const data::RunConfig& cfg, const data::SplitDataset& split) {
    model::BackboneConfig arch = cfg.model;
    if (!split.norm_mean.empty()) {
        arch.norm_mean = split.norm_mean;
        arch.norm_std = split.norm_std;
    }
    return arch;
}

int cmd_train(const GlobalArgs& g, const std::string& variant_name, const std::string& resume_path) {
    auto cfg = load_config(g);
    auto manifest = start_manifest("train", cfg);
    auto split = data::load_dataset(cfg.dataset);
    auto arch = arch_with_stats(cfg, split);
    arch.num_classes = split.num_classes;

    const auto variant = train::variant_from_string(variant_name);
    const std::string run_dir = g.out_dir + "/" + variant_name;
    train::Trainer trainer(variant, cfg.train, arch, &split, run_dir);
    trainer.set_config_hash(data::config_hash(cfg));
    if (!resume_path.empty()) trainer.resume(resume_path);
    auto result = trainer.run();

    printf("trained %s for %lld epochs; best %s = %.2f at epoch %lld\n", variant_name.c_str(),
           static_cast<long long>(result.epochs_run), cfg.train.early_stopping.metric.c_str(),
           result.best_metric, static_cast<long long>(result.best_epoch));
    printf("checkpoints: %s/best.ckpt, %s/last.ckpt\n", run_dir.c_str(), run_dir.c_str());

    manifest.finished_at = data::now_iso8601();
    manifest.artifacts = {run_dir + "/best.ckpt", run_dir + "/last.ckpt", run_dir + "/losses.ndjson"};
    data::append_manifest(g.out_dir, manifest);
    return 0;
}

int cmd_eval(const GlobalArgs& g, const std::string& ckpt, const std::string& attack_list, double eps,
             double alpha, int64_t steps, const std::string& surrogate_path,
             const std::string& natural_path, bool detect_flag, int64_t knn_k,
             const std::string& report_path, int64_t spsa_samples) {
    auto cfg = load_config(g);
    auto manifest = start_manifest("eval", cfg);
    auto split = data::load_dataset(cfg.dataset);
    auto loaded = model::load_checkpoint(ckpt);
    auto& m = loaded.bundle;

    attacks::AttackSpec base = cfg.attack;
    base.seed = cfg.seed;
    apply_attack_flags(base, eps, alpha, steps);
    attacks::SpsaParams spsa_params;
    if (spsa_samples > 0) spsa_params.samples_per_step = spsa_samples;

    eval::EvalReport report;
    report.model_path = ckpt;
    report.model_hash = eval::model_hash(m);
    report.seed = cfg.seed;
    report.clean = eval::clean_accuracy(m, split.test);
    printf("clean accuracy: %.2f%%\n", report.clean);

    for (const auto& name : split_csv(attack_list)) {
        auto spec = spec_for(name, base);
        const double acc = eval::robust_accuracy(m, split.test, spec, spsa_params);
        report.attacks.push_back({spec, acc});
        printf("%s accuracy: %.2f%%  (eps=%.5f steps=%lld)\n", name.c_str(), acc, spec.epsilon,
               static_cast<long long>(spec.num_steps));
    }

    if (!surrogate_path.empty()) {
        auto surrogate = model::load_checkpoint(surrogate_path);
        auto spec = spec_for("pgd", base);
        const double acc = eval::black_box_accuracy(m, surrogate.bundle, split.test, spec);
        report.black_box = eval::AttackResult{spec, acc};
        printf("black-box pgd accuracy (surrogate %s): %.2f%%\n", surrogate_path.c_str(), acc);
    }

    if (detect_flag) {
        auto spec = spec_for("pgd", base);
        report.detection = eval::detection_report(m, split.test, spec, 0.5);
        printf("detection: TPR=%.4f TNR=%.4f AUC=%.4f at threshold %.2f\n", report.detection->tpr,
               report.detection->tnr, report.detection->auc, report.detection->threshold);
    }

    if (!natural_path.empty()) {
        auto natural = model::load_checkpoint(natural_path);
        auto spec = spec_for("pgd", base);
        report.two_path_clean = eval::two_path_accuracy(m, natural.bundle, split.test, nullptr);
        report.two_path_robust = eval::two_path_accuracy(m, natural.bundle, split.test, &spec);
        printf("two-path clean: %.2f%%, two-path robust: %.2f%%\n", *report.two_path_clean,
               *report.two_path_robust);
    }

    if (knn_k > 0) {
        auto spec = spec_for("pgd", base);
        report.knn_clean = eval::knn_accuracy(m, split.train, split.test, knn_k, false);
        report.knn_robust = eval::knn_accuracy(m, split.train, split.test, knn_k, true, &spec);
        report.softmax_clean = report.clean;
        report.softmax_robust = eval::robust_accuracy(m, split.test, spec);
        printf("knn(k=%lld) clean: %.2f%%, robust: %.2f%% (softmax %.2f%% / %.2f%%)\n",
               static_cast<long long>(knn_k), *report.knn_clean, *report.knn_robust,
               *report.softmax_clean, *report.softmax_robust);
    }

    std::string out_report = report_path;
    if (out_report.empty()) {
        fs::create_directories(g.out_dir);
        out_report = g.out_dir + "/eval_report.json";
    }
    eval::write_report(report, out_report);
    printf("report written to %s\n", out_report.c_str());

    manifest.finished_at = data::now_iso8601();
    manifest.artifacts = {out_report};
    data::append_manifest(g.out_dir, manifest);
    return 0;
}

int cmd_detect(const std::string& ckpt, const std::string& in_dir, double threshold) {
    auto loaded = model::load_checkpoint(ckpt);
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(in_dir))
        if (e.is_regular_file() && e.path().extension() == ".ppm") files.push_back(e.path().string());
    std::sort(files.begin(), files.end());
    if (files.empty()) {
        fprintf(stderr, "no .ppm files under %s\n", in_dir.c_str());
        return 1;
    }
    int64_t flagged = 0;
    for (const auto& f : files) {
        Tensor img = data::read_ppm(f);
        auto d = eval::detect(loaded.bundle, img, threshold);
        printf("%s score=%.6f %s\n", f.c_str(), d.score, d.is_adversarial ? "ADVERSARIAL" : "natural");
        flagged += d.is_adversarial ? 1 : 0;
    }
    printf("%lld/%zu flagged adversarial at threshold %.2f\n", static_cast<long long>(flagged),
           files.size(), threshold);
    return 0;
}

int cmd_sweep(const GlobalArgs& g, const std::string& ckpt, const std::string& iters, double eps,
              double alpha, const std::string& report_path) {
    auto cfg = load_config(g);
    auto manifest = start_manifest("sweep-iters", cfg);
    auto split = data::load_dataset(cfg.dataset);
    auto loaded = model::load_checkpoint(ckpt);
    attacks::AttackSpec base = cfg.attack;
    base.seed = cfg.seed;
    apply_attack_flags(base, eps, alpha, 0);
    std::vector<int64_t> iterations;
    for (const auto& s : split_csv(iters)) iterations.push_back(std::stoll(s));
    auto curve = eval::iteration_sweep(loaded.bundle, split.test, iterations, base);
    nlohmann::json j;
    for (size_t i = 0; i < iterations.size(); ++i) {
        printf("iters=%lld accuracy=%.2f%%\n", static_cast<long long>(iterations[i]), curve[i]);
        j["iteration_sweep"]["iterations"].push_back(iterations[i]);
        j["iteration_sweep"]["accuracies"].push_back(curve[i]);
    }
    std::string out = report_path;
    if (out.empty()) {
        fs::create_directories(g.out_dir);
        out = g.out_dir + "/sweep.json";
    }
    std::ofstream os(out);
    os << j.dump(2) << "\n";
    printf("sweep written to %s\n", out.c_str());
    manifest.finished_at = data::now_iso8601();
    manifest.artifacts = {out};
    data::append_manifest(g.out_dir, manifest);
    return 0;
}

int cmd_export(const GlobalArgs& g, const std::string& ckpt, const std::string& branches_csv,
               bool attacked, double eps, double alpha, int64_t steps, const std::string& out_path) {
    auto cfg = load_config(g);
    auto manifest = start_manifest("export-embeddings", cfg);
    auto split = data::load_dataset(cfg.dataset);
    auto loaded = model::load_checkpoint(ckpt);
    std::vector<eval::Branch> branches;
    for (const auto& b : split_csv(branches_csv)) {
        if (b == "r") branches.push_back(eval::Branch::robust);
        else if (b == "nr") branches.push_back(eval::Branch::non_robust);
        else if (b == "ds") branches.push_back(eval::Branch::domain);
        else throw eval::EvalError("unknown branch: " + b + " (expected r, nr, ds)");
    }
    attacks::AttackSpec spec = cfg.attack;
    spec.seed = cfg.seed;
    apply_attack_flags(spec, eps, alpha, steps);
    std::string out = out_path;
    if (out.empty()) {
        fs::create_directories(g.out_dir);
        out = g.out_dir + "/embeddings.csv";
    }
    eval::export_embeddings(loaded.bundle, split.test, branches, attacked, &spec, out);
    printf("embeddings written to %s\n", out.c_str());
    manifest.finished_at = data::now_iso8601();
    manifest.artifacts = {out};
    data::append_manifest(g.out_dir, manifest);
    return 0;
}

int cmd_plot(const GlobalArgs& g, const std::string& from) {
    auto written = eval::plot_file(from, g.out_dir);
    for (const auto& p : written) printf("figure written to %s\n", p.c_str());
    if (written.empty()) {
        fprintf(stderr, "nothing recognizable to plot in %s\n", from.c_str());
        return 1;
    }
    return 0;
}

int cmd_gen_data(const GlobalArgs& g, const std::string& out_dir) {
    auto cfg = load_config(g);
    auto split = data::load_dataset(cfg.dataset);
    auto dump = [&](const data::Dataset& ds, const std::string& name) {
        for (int64_t i = 0; i < ds.size(); ++i) {
            const auto dir = fs::path(out_dir) / name /
                             ("class_" + std::to_string(ds.labels[static_cast<size_t>(i)]));
            fs::create_directories(dir);
            char fname[32];
            snprintf(fname, sizeof(fname), "%06lld.ppm", static_cast<long long>(i));
            data::write_ppm((dir / fname).string(), ds.image(i));
        }
        printf("%s: %lld images\n", (fs::path(out_dir) / name).c_str(),
               static_cast<long long>(ds.size()));
    };
    dump(split.train, "train");
    dump(split.val, "val");
    dump(split.test, "test");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"robust feature disentanglement toolkit"};
    app.require_subcommand(1);

    GlobalArgs g;
    app.add_option("--config", g.config_path, "config file (JSON)");
    app.add_option("--out-dir", g.out_dir, "output directory");
    app.add_option("--seed", g.seed, "override all seeds");

    auto* train_cmd = app.add_subcommand("train", "train a model variant");
    std::string variant = "disentangle", resume;
    train_cmd->add_option("--variant", variant, "disentangle|natural|at");
    train_cmd->add_option("--resume", resume, "resume from last.ckpt");

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string ckpt, attack_list = "pgd,fgsm", surrogate, natural_ckpt, report;
    double eps = -1, alpha = -1;
    int64_t steps = -1, knn_k = 0, spsa_samples = 0;
    bool detect_flag = false;
    eval_cmd->add_option("--ckpt", ckpt, "checkpoint to evaluate")->required();
    eval_cmd->add_option("--attacks,--attack", attack_list, "comma list: pgd,fgsm,cw,dlr,spsa");
    eval_cmd->add_option("--eps", eps, "attack budget (8-bit px units if > 1)");
    eval_cmd->add_option("--alpha", alpha, "attack step size (px units if > 1)");
    eval_cmd->add_option("--steps", steps, "attack iterations");
    eval_cmd->add_option("--surrogate", surrogate, "surrogate checkpoint for black-box transfer");
    eval_cmd->add_option("--natural-ckpt", natural_ckpt, "natural model for two-path inference");
    eval_cmd->add_flag("--detect", detect_flag, "report adversarial-example detection rates");
    eval_cmd->add_option("--knn", knn_k, "k-NN classifier evaluation with this k");
    eval_cmd->add_option("--spsa-samples", spsa_samples, "SPSA directions per step");
    eval_cmd->add_option("--report", report, "report JSON path");

    auto* detect_cmd = app.add_subcommand("detect", "flag adversarial examples in a folder");
    std::string det_ckpt, det_in;
    double det_threshold = 0.5;
    detect_cmd->add_option("--ckpt", det_ckpt, "checkpoint")->required();
    detect_cmd->add_option("--in", det_in, "folder of .ppm images")->required();
    detect_cmd->add_option("--threshold", det_threshold, "detection threshold on D(z_ds)");

    auto* sweep_cmd = app.add_subcommand("sweep-iters", "accuracy across attack iteration counts");
    std::string sweep_ckpt, sweep_iters = "10,20,50,100", sweep_report;
    double sweep_eps = -1, sweep_alpha = -1;
    sweep_cmd->add_option("--ckpt", sweep_ckpt, "checkpoint")->required();
    sweep_cmd->add_option("--iters", sweep_iters, "comma list of iteration counts");
    sweep_cmd->add_option("--eps", sweep_eps, "attack budget");
    sweep_cmd->add_option("--alpha", sweep_alpha, "attack step size");
    sweep_cmd->add_option("--report", sweep_report, "sweep JSON path");

    auto* export_cmd = app.add_subcommand("export-embeddings", "columnar latent export");
    std::string exp_ckpt, exp_branches = "r,nr,ds", exp_out;
    bool exp_attacked = false;
    double exp_eps = -1, exp_alpha = -1;
    int64_t exp_steps = -1;
    export_cmd->add_option("--ckpt", exp_ckpt, "checkpoint")->required();
    export_cmd->add_option("--branches", exp_branches, "subset of r,nr,ds");
    export_cmd->add_flag("--attacked", exp_attacked, "also export adversarial-domain rows");
    export_cmd->add_option("--eps", exp_eps, "attack budget");
    export_cmd->add_option("--alpha", exp_alpha, "attack step size");
    export_cmd->add_option("--steps", exp_steps, "attack iterations");
    export_cmd->add_option("--out", exp_out, "output CSV path");

    auto* plot_cmd = app.add_subcommand("plot", "render figures from logs, reports or exports");
    std::string plot_from;
    plot_cmd->add_option("--from", plot_from, "loss NDJSON, embeddings CSV or report JSON")->required();

    auto* gen_cmd = app.add_subcommand("gen-data", "materialize the configured dataset as PPM folders");
    std::string gen_out = "data_out";
    gen_cmd->add_option("--out", gen_out, "destination folder");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train_cmd->parsed()) return cmd_train(g, variant, resume);
        if (eval_cmd->parsed())
            return cmd_eval(g, ckpt, attack_list, eps, alpha, steps, surrogate, natural_ckpt,
                            detect_flag, knn_k, report, spsa_samples);
        if (detect_cmd->parsed()) return cmd_detect(det_ckpt, det_in, det_threshold);
        if (sweep_cmd->parsed())
            return cmd_sweep(g, sweep_ckpt, sweep_iters, sweep_eps, sweep_alpha, sweep_report);
        if (export_cmd->parsed())
            return cmd_export(g, exp_ckpt, exp_branches, exp_attacked, exp_eps, exp_alpha, exp_steps,
                              exp_out);
        if (plot_cmd->parsed()) return cmd_plot(g, plot_from);
        if (gen_cmd->parsed()) return cmd_gen_data(g, gen_out);
    } catch (const std::exception& e) {
        fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
