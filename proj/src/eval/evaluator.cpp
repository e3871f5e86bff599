#include "disro/eval/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace disro::eval {

namespace {

constexpr int64_t kEvalBatch = 64;

std::vector<std::vector<int64_t>> eval_batches(int64_t n) {
    std::vector<std::vector<int64_t>> out;
    for (int64_t start = 0; start < n; start += kEvalBatch) {
        std::vector<int64_t> idx;
        for (int64_t i = start; i < std::min(n, start + kEvalBatch); ++i) idx.push_back(i);
        out.push_back(std::move(idx));
    }
    return out;
}

/// Derive a per-batch attack seed so evaluation is deterministic but batches
/// are not perturbed identically.
attacks::AttackSpec batch_spec(const attacks::AttackSpec& spec, int64_t batch_index) {
    attacks::AttackSpec s = spec;
    uint64_t x = spec.seed ^ (0x9e3779b97f4a7c15ull * static_cast<uint64_t>(batch_index + 1));
    s.seed = Rng::splitmix64(x);
    return s;
}

}  // namespace

double clean_accuracy(const model::ModelBundle& m, const data::Dataset& ds) {
    if (ds.size() == 0) throw EvalError("clean_accuracy: empty dataset");
    int64_t ok = 0;
    for (const auto& idx : eval_batches(ds.size())) {
        auto b = ds.batch(idx);
        auto preds = model::predict_labels(m, b.pixels);
        for (size_t i = 0; i < preds.size(); ++i)
            if (preds[i] == b.labels[i]) ++ok;
    }
    return 100.0 * static_cast<double>(ok) / static_cast<double>(ds.size());
}

namespace {

double attacked_accuracy(const model::ModelBundle& scored, const model::ModelBundle& attacked_model,
                         const data::Dataset& ds, const attacks::AttackSpec& spec,
                         const attacks::SpsaParams& spsa) {
    if (ds.size() == 0) throw EvalError("robust_accuracy: empty dataset");
    int64_t ok = 0, batch_index = 0;
    for (const auto& idx : eval_batches(ds.size())) {
        auto b = ds.batch(idx);
        auto adv = attacks::run_attack(attacked_model, b, batch_spec(spec, batch_index++), spsa);
        attacks::assert_ball(b, adv, spec);
        auto preds = model::predict_labels(scored, adv.pixels);
        for (size_t i = 0; i < preds.size(); ++i)
            if (preds[i] == adv.labels[i]) ++ok;
    }
    return 100.0 * static_cast<double>(ok) / static_cast<double>(ds.size());
}

}  // namespace

double robust_accuracy(const model::ModelBundle& m, const data::Dataset& ds,
                       const attacks::AttackSpec& spec, const attacks::SpsaParams& spsa) {
    return attacked_accuracy(m, m, ds, spec, spsa);
}

double black_box_accuracy(const model::ModelBundle& target, const model::ModelBundle& surrogate,
                          const data::Dataset& ds, const attacks::AttackSpec& spec,
                          const attacks::SpsaParams& spsa) {
    return attacked_accuracy(target, surrogate, ds, spec, spsa);
}

namespace {

Tensor attacked_pixels(const model::ModelBundle& m, const data::Dataset& ds,
                       const attacks::AttackSpec& spec) {
    Tensor out(ds.images.shape());
    const int64_t per = ds.images.numel() / std::max<int64_t>(ds.size(), 1);
    int64_t batch_index = 0;
    for (const auto& idx : eval_batches(ds.size())) {
        auto b = ds.batch(idx);
        auto adv = attacks::run_attack(m, b, batch_spec(spec, batch_index++));
        attacks::assert_ball(b, adv, spec);
        for (size_t k = 0; k < idx.size(); ++k)
            std::copy(adv.pixels.data() + static_cast<int64_t>(k) * per,
                      adv.pixels.data() + static_cast<int64_t>(k + 1) * per,
                      out.data() + idx[k] * per);
    }
    return out;
}

}  // namespace

double knn_accuracy(const model::ModelBundle& m, const data::Dataset& train_subset,
                    const data::Dataset& test, int64_t k, bool attacked,
                    const attacks::AttackSpec* spec) {
    if (k < 1) throw EvalError("knn_accuracy: k must be >= 1");
    if (k > train_subset.size()) throw EvalError("knn_accuracy: k exceeds reference set size");
    if (test.size() == 0) throw EvalError("knn_accuracy: empty test set");

    Tensor ref = model::robust_latents(m, train_subset.images);
    Tensor query_images = test.images;
    if (attacked) {
        if (!spec) throw EvalError("knn_accuracy: attacked evaluation needs an attack spec");
        query_images = attacked_pixels(m, test, *spec);
    }
    Tensor query = model::robust_latents(m, query_images);

    const int64_t n_ref = ref.dim(0), d = ref.dim(1), n_q = query.dim(0);
    const int64_t num_classes = train_subset.num_classes;
    int64_t ok = 0;
    std::vector<std::pair<double, int64_t>> dist(static_cast<size_t>(n_ref));
    for (int64_t q = 0; q < n_q; ++q) {
        for (int64_t r = 0; r < n_ref; ++r) {
            double s = 0.0;
            for (int64_t j = 0; j < d; ++j) {
                const double diff = query.at(q, j) - ref.at(r, j);
                s += diff * diff;
            }
            dist[static_cast<size_t>(r)] = {s, r};
        }
        std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
        std::vector<int64_t> votes(static_cast<size_t>(num_classes), 0);
        std::vector<double> dist_sum(static_cast<size_t>(num_classes), 0.0);
        for (int64_t i = 0; i < k; ++i) {
            const int lab = train_subset.labels[static_cast<size_t>(dist[static_cast<size_t>(i)].second)];
            ++votes[static_cast<size_t>(lab)];
            dist_sum[static_cast<size_t>(lab)] += std::sqrt(dist[static_cast<size_t>(i)].first);
        }
        int best = -1;
        for (int c = 0; c < static_cast<int>(num_classes); ++c) {
            if (votes[static_cast<size_t>(c)] == 0) continue;
            if (best < 0) {
                best = c;
                continue;
            }
            const auto vb = votes[static_cast<size_t>(best)], vc = votes[static_cast<size_t>(c)];
            const double mb = dist_sum[static_cast<size_t>(best)] / static_cast<double>(vb);
            const double mc = dist_sum[static_cast<size_t>(c)] / static_cast<double>(vc);
            if (vc > vb || (vc == vb && mc < mb)) best = c;
        }
        if (best == test.labels[static_cast<size_t>(q)]) ++ok;
    }
    return 100.0 * static_cast<double>(ok) / static_cast<double>(n_q);
}

Detection detect(const model::ModelBundle& m, const Tensor& image, double threshold) {
    Tensor img = image;
    if (img.ndim() == 3) img = img.reshaped({1, img.dim(0), img.dim(1), img.dim(2)});
    const double score = model::domain_scores(m, img)[0];
    return {score < threshold, score};
}

DetectionReport detection_report(const model::ModelBundle& m, const data::Dataset& ds,
                                 const attacks::AttackSpec& spec, double threshold) {
    if (ds.size() == 0) throw EvalError("detection_report: empty dataset");
    Tensor adv = attacked_pixels(m, ds, spec);
    Tensor s_nat = model::domain_scores(m, ds.images);
    Tensor s_adv = model::domain_scores(m, adv);

    const int64_t n = ds.size();
    int64_t tp = 0, tn = 0;
    for (int64_t i = 0; i < n; ++i) {
        if (s_adv[i] < threshold) ++tp;  // attacked flagged adversarial
        if (!(s_nat[i] < threshold)) ++tn;
    }
    // Rank statistic: probability a random attacked sample scores below a
    // random natural one (ties at half weight).
    double wins = 0.0;
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < n; ++j) {
            if (s_adv[i] < s_nat[j]) wins += 1.0;
            else if (s_adv[i] == s_nat[j]) wins += 0.5;
        }
    DetectionReport r;
    r.tpr = static_cast<double>(tp) / static_cast<double>(n);
    r.tnr = static_cast<double>(tn) / static_cast<double>(n);
    r.auc = wins / static_cast<double>(n * n);
    r.threshold = threshold;
    return r;
}

int two_path_classify(const model::ModelBundle& robust_bundle, const model::ModelBundle& natural_bundle,
                      const Tensor& image, double threshold) {
    Tensor img = image;
    if (img.ndim() == 3) img = img.reshaped({1, img.dim(0), img.dim(1), img.dim(2)});
    const auto det = detect(robust_bundle, img, threshold);
    const auto& chosen = det.is_adversarial ? robust_bundle : natural_bundle;
    return model::predict_labels(chosen, img)[0];
}

double two_path_accuracy(const model::ModelBundle& robust_bundle,
                         const model::ModelBundle& natural_bundle, const data::Dataset& ds,
                         const attacks::AttackSpec* spec, double threshold) {
    if (ds.size() == 0) throw EvalError("two_path_accuracy: empty dataset");
    Tensor pixels = spec ? attacked_pixels(robust_bundle, ds, *spec) : ds.images;
    Tensor scores = model::domain_scores(robust_bundle, pixels);
    auto preds_robust = model::predict_labels(robust_bundle, pixels);
    auto preds_natural = model::predict_labels(natural_bundle, pixels);
    int64_t ok = 0;
    for (int64_t i = 0; i < ds.size(); ++i) {
        const bool adversarial = scores[i] < threshold;
        const int pred = adversarial ? preds_robust[static_cast<size_t>(i)]
                                     : preds_natural[static_cast<size_t>(i)];
        if (pred == ds.labels[static_cast<size_t>(i)]) ++ok;
    }
    return 100.0 * static_cast<double>(ok) / static_cast<double>(ds.size());
}

std::vector<double> iteration_sweep(const model::ModelBundle& m, const data::Dataset& ds,
                                    const std::vector<int64_t>& iterations,
                                    const attacks::AttackSpec& base_spec) {
    std::vector<double> out;
    for (int64_t it : iterations) {
        attacks::AttackSpec s = base_spec;
        s.num_steps = it;
        out.push_back(robust_accuracy(m, ds, s));
    }
    return out;
}

const char* to_string(Branch b) {
    switch (b) {
        case Branch::robust: return "r";
        case Branch::non_robust: return "nr";
        case Branch::domain: return "ds";
    }
    return "?";
}

void export_embeddings(const model::ModelBundle& m, const data::Dataset& ds,
                       const std::vector<Branch>& branches, bool attacked,
                       const attacks::AttackSpec* spec, const std::string& path) {
    if (branches.empty()) throw EvalError("export_embeddings: empty branch set");
    std::ofstream os(path);
    if (!os) throw EvalError("export_embeddings: cannot write " + path);
    const int64_t d = m.config.latent_dim;
    os << "id,label,domain,branch";
    for (int64_t j = 0; j < d; ++j) os << ",dim_" << j;
    os << "\n";

    auto emit = [&](const model::DisentangledTriple& t, const char* domain) {
        for (Branch b : branches) {
            const Tensor& z = b == Branch::robust ? t.robust
                              : b == Branch::non_robust ? t.non_robust
                                                        : t.domain;
            for (int64_t i = 0; i < z.dim(0); ++i) {
                os << i << "," << ds.labels[static_cast<size_t>(i)] << "," << domain << ","
                   << to_string(b);
                char buf[32];
                for (int64_t j = 0; j < d; ++j) {
                    snprintf(buf, sizeof(buf), "%.17g", z.at(i, j));
                    os << "," << buf;
                }
                os << "\n";
            }
        }
    };

    emit(model::encode_values(m, ds.images), "nat");
    if (attacked) {
        if (!spec) throw EvalError("export_embeddings: attacked export needs an attack spec");
        Tensor adv = attacked_pixels(m, ds, *spec);
        emit(model::encode_values(m, adv), "adv");
    }
}

Tensor feature_histogram(const model::ModelBundle& m, const Tensor& images) {
    Tensor imgs = images;
    if (imgs.ndim() == 3) imgs = imgs.reshaped({1, imgs.dim(0), imgs.dim(1), imgs.dim(2)});
    nn::Tape t(false);
    auto f = model::extract(t, m, t.leaf(imgs));
    return model::encode_one(t, m.enc_domain, f)->value;
}

nlohmann::json EvalReport::to_json() const {
    nlohmann::json j;
    j["model_path"] = model_path;
    j["model_hash"] = model_hash;
    j["seed"] = seed;
    j["clean_accuracy"] = clean;
    j["attacks"] = nlohmann::json::array();
    for (const auto& a : attacks) {
        nlohmann::json e;
        e["kind"] = attacks::to_string(a.spec.kind);
        e["inner_loss"] = attacks::to_string(a.spec.inner_loss);
        e["epsilon"] = a.spec.epsilon;
        e["step_size"] = a.spec.step_size;
        e["num_steps"] = a.spec.num_steps;
        e["random_start"] = a.spec.random_start;
        e["accuracy"] = a.accuracy;
        j["attacks"].push_back(e);
    }
    if (black_box) {
        j["black_box"] = {{"kind", attacks::to_string(black_box->spec.kind)},
                          {"epsilon", black_box->spec.epsilon},
                          {"num_steps", black_box->spec.num_steps},
                          {"accuracy", black_box->accuracy}};
    }
    if (detection) {
        j["detection"] = {{"tpr", detection->tpr},
                          {"tnr", detection->tnr},
                          {"auc", detection->auc},
                          {"threshold", detection->threshold}};
    }
    if (two_path_clean) j["two_path"]["clean_accuracy"] = *two_path_clean;
    if (two_path_robust) j["two_path"]["robust_accuracy"] = *two_path_robust;
    if (knn_clean) j["knn"]["clean_accuracy"] = *knn_clean;
    if (knn_robust) j["knn"]["robust_accuracy"] = *knn_robust;
    if (softmax_clean) j["knn"]["softmax_clean_accuracy"] = *softmax_clean;
    if (softmax_robust) j["knn"]["softmax_robust_accuracy"] = *softmax_robust;
    if (!sweep_iterations.empty()) {
        j["iteration_sweep"]["iterations"] = sweep_iterations;
        j["iteration_sweep"]["accuracies"] = sweep_accuracies;
    }
    return j;
}

std::string EvalReport::to_csv() const {
    std::string out = "model,attack,epsilon,steps,accuracy\n";
    char buf[256];
    snprintf(buf, sizeof(buf), "%s,clean,0,0,%.4f\n", model_hash.c_str(), clean);
    out += buf;
    for (const auto& a : attacks) {
        snprintf(buf, sizeof(buf), "%s,%s,%.9g,%lld,%.4f\n", model_hash.c_str(),
                 attacks::to_string(a.spec.kind), a.spec.epsilon,
                 static_cast<long long>(a.spec.num_steps), a.accuracy);
        out += buf;
    }
    if (black_box) {
        snprintf(buf, sizeof(buf), "%s,pgd_black_box,%.9g,%lld,%.4f\n", model_hash.c_str(),
                 black_box->spec.epsilon, static_cast<long long>(black_box->spec.num_steps),
                 black_box->accuracy);
        out += buf;
    }
    return out;
}

void write_report(const EvalReport& report, const std::string& json_path) {
    std::ofstream os(json_path);
    if (!os) throw EvalError("cannot write report: " + json_path);
    os << report.to_json().dump(2) << "\n";
    std::string csv_path = json_path;
    const auto dot = csv_path.rfind('.');
    csv_path = (dot == std::string::npos ? csv_path : csv_path.substr(0, dot)) + ".csv";
    std::ofstream cs(csv_path);
    cs << report.to_csv();
}

std::string model_hash(model::ModelBundle& m) {
    uint64_t h = 1469598103934665603ull;
    m.visit_all([&](model::Component, const std::string&, nn::Param& p) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(p.value.data());
        for (int64_t i = 0; i < p.value.numel() * 8; ++i) {
            h ^= bytes[i];
            h *= 1099511628211ull;
        }
    });
    char buf[17];
    snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace disro::eval
