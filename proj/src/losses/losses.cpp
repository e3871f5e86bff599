#include "disro/losses/losses.hpp"

#include <cmath>

namespace disro::losses {

using namespace disro::nn;

void LossWeights::validate() const {
    for (double w : {dist, ce, bce, adv, res, kl})
        if (!(std::isfinite(w) && w >= 0.0)) throw LossError("LossWeights: weights must be finite and >= 0");
}

NodeRef angular_distance(const NodeRef& z, const NodeRef& z_prime, std::vector<std::string>* flags) {
    if (!z->value.same_shape(z_prime->value))
        throw LossError("angular_distance: latent shape mismatch");
    auto dot = row_sum(hadamard(z, z_prime));
    auto na = sqrt_op(row_sum(hadamard(z, z)));
    auto nb = sqrt_op(row_sum(hadamard(z_prime, z_prime)));
    if (flags) {
        for (int64_t i = 0; i < na->value.numel(); ++i)
            if (na->value[i] < 1e-12 || nb->value[i] < 1e-12) {
                flags->push_back("angular_distance: degenerate latent norm, denominator floored");
                break;
            }
    }
    auto denom = clamp_min(hadamard(na, nb), 1e-12);
    auto cos_abs = divide(abs_op(dot), denom);
    return mean_all(add_scalar(neg(cos_abs), 1.0));
}

double angular_distance_value(const std::vector<double>& z, const std::vector<double>& z_prime) {
    Tape t(false);
    auto a = t.leaf(Tensor::from_vector({1, static_cast<int64_t>(z.size())}, z));
    auto b = t.leaf(Tensor::from_vector({1, static_cast<int64_t>(z_prime.size())}, z_prime));
    return angular_distance(a, b)->value[0];
}

NodeRef branch_cross_entropy(const BranchLogits& logits, const std::vector<int>& labels) {
    auto l1 = mean_all(softmax_ce(logits.robust_nat, labels));
    auto l2 = mean_all(softmax_ce(logits.nonrobust_nat, labels));
    auto l3 = mean_all(softmax_ce(logits.robust_adv, labels));
    auto l4 = mean_all(softmax_ce(logits.nonrobust_adv, labels));
    return scale(add(add(l1, l2), add(l3, l4)), 0.25);
}

namespace {

NodeRef mean_log(const std::vector<NodeRef>& probs) {
    NodeRef acc;
    for (const auto& p : probs) {
        auto term = mean_all(log_op(p));
        acc = acc ? add(acc, term) : term;
    }
    return scale(acc, 1.0 / static_cast<double>(probs.size()));
}

NodeRef mean_log_one_minus(const std::vector<NodeRef>& probs) {
    NodeRef acc;
    for (const auto& p : probs) {
        auto term = mean_all(log_op(add_scalar(neg(p), 1.0)));
        acc = acc ? add(acc, term) : term;
    }
    return scale(acc, 1.0 / static_cast<double>(probs.size()));
}

void check_probs(const std::vector<NodeRef>& probs, const char* who) {
    if (probs.empty()) throw LossError(std::string(who) + ": empty probability set");
    for (const auto& p : probs)
        for (int64_t i = 0; i < p->value.numel(); ++i)
            if (!(p->value[i] > 0.0 && p->value[i] < 1.0))
                throw LossError(std::string(who) + ": probability outside (0,1)");
}

}  // namespace

NodeRef discriminator_bce(const std::vector<NodeRef>& nat_probs, const std::vector<NodeRef>& adv_probs) {
    check_probs(nat_probs, "discriminator_bce");
    check_probs(adv_probs, "discriminator_bce");
    return sub(neg(mean_log(nat_probs)), mean_log_one_minus(adv_probs));
}

EncoderAdvLosses encoder_adversarial_losses(const NodeRef& d_r, const NodeRef& d_nr,
                                            const NodeRef& d_r_adv, const NodeRef& d_nr_adv,
                                            const NodeRef& d_ds, const NodeRef& d_ds_adv) {
    check_probs({d_r, d_nr, d_r_adv, d_nr_adv, d_ds, d_ds_adv}, "encoder_adversarial_losses");
    auto r_nr = add(mean_log({d_r, d_nr}), mean_log_one_minus({d_r_adv, d_nr_adv}));
    auto ds = sub(neg(mean_log({d_ds})), mean_log_one_minus({d_ds_adv}));
    return {r_nr, ds};
}

NodeRef reconstruction_l1(const NodeRef& reconstructed, const NodeRef& target) {
    if (!reconstructed->value.same_shape(target->value))
        throw LossError("reconstruction_l1: shape mismatch " + shape_str(reconstructed->value.shape()) +
                        " vs " + shape_str(target->value.shape()));
    return mean_all(abs_op(sub(reconstructed, target)));
}

namespace {

NodeRef sym_kl_rows(const NodeRef& a, const NodeRef& b) {
    auto la = log_softmax(a);
    auto lb = log_softmax(b);
    auto pa = exp_op(la);
    auto pb = exp_op(lb);
    return row_sum(hadamard(sub(pa, pb), sub(la, lb)));  // KL(p||q) + KL(q||p), per row
}

NodeRef sym_kl_term(const NodeRef& a, const NodeRef& b) {
    return mean_all(exp_op(neg(sym_kl_rows(a, b))));
}

}  // namespace

NodeRef pairwise_kl(const NodeRef& z_r, const NodeRef& z_nr, const NodeRef& z_ds) {
    auto t1 = sym_kl_term(z_r, z_nr);
    auto t2 = sym_kl_term(z_r, z_ds);
    auto t3 = sym_kl_term(z_nr, z_ds);
    return scale(add(add(t1, t2), t3), 1.0 / 3.0);
}

NodeRef pairwise_kl_raw(const NodeRef& z_r, const NodeRef& z_nr, const NodeRef& z_ds) {
    auto t1 = mean_all(sym_kl_rows(z_r, z_nr));
    auto t2 = mean_all(sym_kl_rows(z_r, z_ds));
    auto t3 = mean_all(sym_kl_rows(z_nr, z_ds));
    return scale(add(add(t1, t2), t3), 1.0 / 3.0);
}

LossReport compose(LossReport components, const LossWeights& weights) {
    weights.validate();
    const std::pair<const char*, double> named[] = {
        {"angular_distance", components.dist}, {"branch_cross_entropy", components.ce},
        {"discriminator_bce", components.bce}, {"encoder_adversarial", components.adv},
        {"reconstruction_l1", components.res}, {"pairwise_kl", components.kl},
    };
    for (const auto& [name, v] : named)
        if (!std::isfinite(v)) throw LossError(std::string("compose: component ") + name + " is non-finite");
    components.total = weights.dist * components.dist + weights.ce * components.ce +
                       weights.bce * components.bce + weights.adv * components.adv +
                       weights.res * components.res + weights.kl * components.kl;
    return components;
}

}  // namespace disro::losses
