#pragma once

#include "disro/attacks/attacks.hpp"
#include "disro/data/dataset.hpp"
#include "disro/model/model.hpp"

#include <json.hpp>

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace disro::eval {

struct EvalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Robust-branch accuracy (%) on clean images.
double clean_accuracy(const model::ModelBundle& m, const data::Dataset& ds);

/// White-box attacked accuracy (%): the attack targets the robust head of the
/// scored model. Ball and range constraints are asserted on every output.
double robust_accuracy(const model::ModelBundle& m, const data::Dataset& ds,
                       const attacks::AttackSpec& spec, const attacks::SpsaParams& spsa = {});

/// Attacks crafted against the surrogate, scored on the target.
double black_box_accuracy(const model::ModelBundle& target, const model::ModelBundle& surrogate,
                          const data::Dataset& ds, const attacks::AttackSpec& spec,
                          const attacks::SpsaParams& spsa = {});

/// Majority vote among the k nearest clean-training penultimate features
/// (Euclidean); vote ties broken by smallest mean distance. Returns %.
double knn_accuracy(const model::ModelBundle& m, const data::Dataset& train_subset,
                    const data::Dataset& test, int64_t k, bool attacked,
                    const attacks::AttackSpec* spec = nullptr);

struct Detection {
    bool is_adversarial = false;
    double score = 0.0;  // D(z_ds); natural inputs score high
};

/// Single-image adversarial-example detection via the domain discriminator.
Detection detect(const model::ModelBundle& m, const Tensor& image, double threshold = 0.5);

struct DetectionReport {
    double tpr = 0.0;  // attacked samples flagged adversarial
    double tnr = 0.0;  // clean samples passed as natural
    double auc = 0.0;
    double threshold = 0.5;
};

/// Clean-vs-attacked detection rates over a dataset; the attack targets the
/// robust head of the same bundle.
DetectionReport detection_report(const model::ModelBundle& m, const data::Dataset& ds,
                                 const attacks::AttackSpec& spec, double threshold = 0.5);

/// Detected-natural inputs go to the natural model's classifier, the rest to
/// the robust bundle's robust branch.
int two_path_classify(const model::ModelBundle& robust_bundle, const model::ModelBundle& natural_bundle,
                      const Tensor& image, double threshold = 0.5);

/// Accuracy (%) of two-path inference; when spec is set the dataset is
/// attacked (white-box on the robust bundle) before routing.
double two_path_accuracy(const model::ModelBundle& robust_bundle,
                         const model::ModelBundle& natural_bundle, const data::Dataset& ds,
                         const attacks::AttackSpec* spec, double threshold = 0.5);

/// robust_accuracy per iteration count, all else fixed.
std::vector<double> iteration_sweep(const model::ModelBundle& m, const data::Dataset& ds,
                                    const std::vector<int64_t>& iterations,
                                    const attacks::AttackSpec& base_spec);

enum class Branch { robust, non_robust, domain };
const char* to_string(Branch b);

/// Columnar export: id,label,domain,branch,dim_0..dim_{D-1}. One row per
/// (sample, branch) and, when attacked, one extra adversarial row each.
void export_embeddings(const model::ModelBundle& m, const data::Dataset& ds,
                       const std::vector<Branch>& branches, bool attacked,
                       const attacks::AttackSpec* spec, const std::string& path);

/// Domain-specific latent per image (one value per latent channel), the
/// histogram data for intensity-distribution figures.
Tensor feature_histogram(const model::ModelBundle& m, const Tensor& images);

struct AttackResult {
    attacks::AttackSpec spec;
    double accuracy = 0.0;
};

struct EvalReport {
    std::string model_path;
    std::string model_hash;
    uint64_t seed = 0;
    double clean = 0.0;
    std::vector<AttackResult> attacks;                // per-attack breakdown
    std::optional<AttackResult> black_box;
    std::optional<DetectionReport> detection;
    std::optional<double> two_path_clean, two_path_robust;
    std::optional<double> knn_clean, knn_robust, softmax_clean, softmax_robust;
    std::vector<int64_t> sweep_iterations;
    std::vector<double> sweep_accuracies;

    nlohmann::json to_json() const;
    /// One CSV summary row per (model, attack).
    std::string to_csv() const;
};

void write_report(const EvalReport& report, const std::string& json_path);

/// FNV-1a over all parameter bytes; identifies the evaluated snapshot.
std::string model_hash(model::ModelBundle& m);

}  // namespace disro::eval
