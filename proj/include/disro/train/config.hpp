#pragma once

#include "disro/attacks/attacks.hpp"
#include "disro/losses/losses.hpp"

#include <map>
#include <string>
#include <vector>

namespace disro::train {

struct TrainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct EarlyStopping {
    std::string metric = "robust_acc";  // robust_acc | clean_acc
    attacks::AttackSpec eval_attack = attacks::AttackSpec::pgd_spec(8.0 / 255.0, 2.0 / 255.0, 10);
    int64_t patience = 10;
};

struct TrainConfig {
    int64_t epochs = 120;
    int64_t batch_size = 128;
    double learning_rate = 0.1;
    std::vector<int64_t> lr_decay_epochs = {100, 105, 110};
    double lr_decay_factor = 0.1;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    // Per-component learning-rate multipliers; unset components default to 1.0
    // for extractor / enc_robust / classifier and 0.1 for the rest.
    std::map<std::string, double> component_lr_scale;
    attacks::DiversifySpec diversify;
    // Fixed inner attack for the standard-AT baseline.
    attacks::AttackSpec at_attack = attacks::AttackSpec::pgd_spec(8.0 / 255.0, 2.0 / 255.0, 10);
    losses::LossWeights loss_weights;
    uint64_t seed = 0;
    EarlyStopping early_stopping;
    int64_t checkpoint_every = 0;  // emit epoch checkpoints every K epochs; 0 = best/last only
    // Whether the four-branch classification loss also updates the extractor.
    bool ce_updates_extractor = true;
    // Ablation: run one accumulated optimizer step instead of sequential sub-steps.
    bool accumulate_substeps = false;
    // Ablation: minimize the raw symmetric KL instead of exp(-symKL).
    bool kl_plain_minimization = false;
    // Inner loss driving training-time attack generation (CW / DLR variants).
    attacks::InnerLoss train_inner_loss = attacks::InnerLoss::cross_entropy;

    void validate() const;
    double component_scale(const std::string& component) const;
};

/// Stepwise decay: learning_rate * factor^(number of decay epochs passed).
double step_lr(int64_t epoch, const TrainConfig& config);

}  // namespace disro::train
