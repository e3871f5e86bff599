#pragma once

#include "disro/core/ops.hpp"

#include <stdexcept>
#include <string>
#include <vector>

namespace disro::losses {

struct LossError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Combination weights for the six objectives. The weighted total drives
/// nothing by itself; the trainer applies each objective to its own
/// parameter groups. Defaults are 1.0 each.
struct LossWeights {
    double dist = 1.0;
    double ce = 1.0;
    double bce = 1.0;
    double adv = 1.0;
    double res = 1.0;
    double kl = 1.0;

    void validate() const;
};

/// Per-step values of the named losses (unweighted) plus the weighted total.
struct LossReport {
    double dist = 0.0;
    double ce = 0.0;
    double bce = 0.0;
    double adv = 0.0;
    double res = 0.0;
    double kl = 0.0;
    double total = 0.0;
    std::vector<std::string> flags;
};

/// Mean over the batch of 1 - |z . z'| / (|z| |z'|); in [0,1], zero for
/// collinear latents of either sign. Norms below 1e-12 are floored and the
/// batch is flagged.
nn::NodeRef angular_distance(const nn::NodeRef& z, const nn::NodeRef& z_prime,
                             std::vector<std::string>* flags = nullptr);

double angular_distance_value(const std::vector<double>& z, const std::vector<double>& z_prime);

struct BranchLogits {
    nn::NodeRef robust_nat;      // classifier on z_r
    nn::NodeRef nonrobust_nat;   // classifier on z_nr
    nn::NodeRef robust_adv;      // classifier on z'_r
    nn::NodeRef nonrobust_adv;   // classifier on z'_nr (reversal built upstream)
};

/// Mean cross-entropy over the four classification branches.
nn::NodeRef branch_cross_entropy(const BranchLogits& logits, const std::vector<int>& labels);

/// -E[log D(z)] over natural-feature families - E[log(1 - D(z'))] over
/// adversarial families; each expectation is the mean over families and batch.
/// Callers detach the latents so only the discriminator receives gradient.
nn::NodeRef discriminator_bce(const std::vector<nn::NodeRef>& nat_probs,
                              const std::vector<nn::NodeRef>& adv_probs);

struct EncoderAdvLosses {
    nn::NodeRef r_nr;  // pushes robust/non-robust features toward domain-indistinguishability
    nn::NodeRef ds;    // pushes domain-specific features toward domain-identifiability
};

/// Adversarial objectives against a frozen discriminator (callers evaluate the
/// discriminator with detached parameters).
EncoderAdvLosses encoder_adversarial_losses(const nn::NodeRef& d_r, const nn::NodeRef& d_nr,
                                            const nn::NodeRef& d_r_adv, const nn::NodeRef& d_nr_adv,
                                            const nn::NodeRef& d_ds, const nn::NodeRef& d_ds_adv);

/// Mean absolute elementwise difference.
nn::NodeRef reconstruction_l1(const nn::NodeRef& reconstructed, const nn::NodeRef& target);

/// Each latent row is normalized to a categorical distribution via
/// exponential normalization; for each of the three pairs the symmetric KL
/// s = KL(p||q) + KL(q||p) is computed and the loss is the mean over pairs
/// and batch of exp(-s). Bounded in (0,1]; minimizing it increases pairwise
/// divergence.
nn::NodeRef pairwise_kl(const nn::NodeRef& z_r, const nn::NodeRef& z_nr, const nn::NodeRef& z_ds);

/// Ablation variant: mean over pairs and batch of the raw symmetric KL
/// (plain minimization pulls the distributions together).
nn::NodeRef pairwise_kl_raw(const nn::NodeRef& z_r, const nn::NodeRef& z_nr, const nn::NodeRef& z_ds);

/// Fill in the weighted total; component values stay unweighted. Throws
/// LossError naming the first non-finite component.
LossReport compose(LossReport components, const LossWeights& weights);

}  // namespace disro::losses
