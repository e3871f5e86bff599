#pragma once

#include "disro/core/ops.hpp"
#include "disro/core/rng.hpp"
#include "disro/model/model.hpp"

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace disro::attacks {

struct AttackError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class AttackKind { fgsm, pgd, spsa };
enum class InnerLoss { cross_entropy, cw_margin, dlr };
enum class NormKind { inf, l2 };

const char* to_string(AttackKind k);
const char* to_string(InnerLoss l);
const char* to_string(NormKind n);
AttackKind attack_kind_from_string(const std::string& s);
InnerLoss inner_loss_from_string(const std::string& s);
NormKind norm_from_string(const std::string& s);

/// Fully determines an attack. epsilon and step_size are fractions of the
/// dynamic range (the usual 8-bit budgets divided by 255).
struct AttackSpec {
    AttackKind kind = AttackKind::pgd;
    InnerLoss inner_loss = InnerLoss::cross_entropy;
    double epsilon = 8.0 / 255.0;
    double step_size = 2.0 / 255.0;
    int64_t num_steps = 20;
    bool random_start = true;
    NormKind norm = NormKind::inf;
    uint64_t seed = 0;
    double cw_kappa = 0.0;

    void validate() const;

    static AttackSpec fgsm_spec(double eps);
    static AttackSpec pgd_spec(double eps, double alpha, int64_t steps, uint64_t seed = 0,
                               bool random_start = true);
};

/// Training-time attack diversification ranges.
struct DiversifySpec {
    double epsilon_lo = 8.0 / 255.0;
    double epsilon_hi = 12.0 / 255.0;
    std::vector<int64_t> steps_choices = {8, 16, 24, 32};
    double step_size_lo = 2.0 / 255.0;
    double step_size_hi = 4.0 / 255.0;

    void validate() const;
};

struct ImageBatch {
    Tensor pixels;            // [B,C,H,W], values in [0,1]
    std::vector<int> labels;  // class indices

    int64_t size() const { return pixels.empty() ? 0 : pixels.dim(0); }
    void validate(int64_t num_classes = -1) const;
};

/// Builds the per-sample loss column [B,1] for given input images on a tape.
using LossGraphFn =
    std::function<nn::NodeRef(nn::Tape&, const nn::NodeRef& images, const std::vector<int>& labels)>;

/// Forward-only per-sample losses (black-box evaluator for SPSA).
using LossValueFn =
    std::function<Eigen::ArrayXd(const Tensor& images, const std::vector<int>& labels)>;

struct SpsaParams {
    double perturbation_scale = 0.01;
    int64_t samples_per_step = 128;
};

// One-step signed-gradient attack.
ImageBatch fgsm(const LossGraphFn& loss_fn, const ImageBatch& batch, const AttackSpec& spec);

// Iterative signed-gradient ascent with projection after every step.
ImageBatch pgd(const LossGraphFn& loss_fn, const ImageBatch& batch, const AttackSpec& spec);

// Gradient-free simultaneous-perturbation ascent; only forward evaluations.
ImageBatch spsa(const LossValueFn& loss_fn, const ImageBatch& batch, const AttackSpec& spec,
                const SpsaParams& params);

/// Draw a randomized PGD configuration for training-time domain diversification.
AttackSpec sample_attack(const DiversifySpec& diversify, Rng& rng);

// Scalar inner-loss values for a single logit row.
double cw_margin_loss(const std::vector<double>& logits, int label, double kappa);
double dlr_loss(const std::vector<double>& logits, int label);

/// Per-sample inner loss on the model's robust classification head.
LossGraphFn robust_head_loss(const model::ModelBundle& m, InnerLoss kind, double cw_kappa = 0.0);
LossValueFn robust_head_loss_values(const model::ModelBundle& m, InnerLoss kind,
                                    double cw_kappa = 0.0);

/// Run the attack described by spec against a model's robust head.
ImageBatch run_attack(const model::ModelBundle& m, const ImageBatch& batch, const AttackSpec& spec,
                      const SpsaParams& spsa_params = {});

/// Throws unless 100% of attacked samples satisfy the norm-ball and [0,1]
/// range constraints (tolerance 1e-8).
void assert_ball(const ImageBatch& original, const ImageBatch& attacked, const AttackSpec& spec,
                 double tol = 1e-8);

}  // namespace disro::attacks
