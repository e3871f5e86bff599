#include "disro/attacks/attacks.hpp"

#include <algorithm>
#include <cmath>

namespace disro::attacks {

using namespace disro::nn;

const char* to_string(AttackKind k) {
    switch (k) {
        case AttackKind::fgsm: return "fgsm";
        case AttackKind::pgd: return "pgd";
        case AttackKind::spsa: return "spsa";
    }
    return "?";
}

const char* to_string(InnerLoss l) {
    switch (l) {
        case InnerLoss::cross_entropy: return "cross_entropy";
        case InnerLoss::cw_margin: return "cw_margin";
        case InnerLoss::dlr: return "dlr";
    }
    return "?";
}

const char* to_string(NormKind n) { return n == NormKind::inf ? "inf" : "l2"; }

AttackKind attack_kind_from_string(const std::string& s) {
    if (s == "fgsm") return AttackKind::fgsm;
    if (s == "pgd") return AttackKind::pgd;
    if (s == "spsa") return AttackKind::spsa;
    throw AttackError("unknown attack kind: " + s);
}

InnerLoss inner_loss_from_string(const std::string& s) {
    if (s == "cross_entropy" || s == "ce") return InnerLoss::cross_entropy;
    if (s == "cw_margin" || s == "cw") return InnerLoss::cw_margin;
    if (s == "dlr") return InnerLoss::dlr;
    throw AttackError("unknown inner loss: " + s);
}

NormKind norm_from_string(const std::string& s) {
    if (s == "inf") return NormKind::inf;
    if (s == "l2") return NormKind::l2;
    throw AttackError("unknown norm: " + s);
}

void AttackSpec::validate() const {
    if (epsilon < 0.0) throw AttackError("AttackSpec: epsilon must be >= 0");
    if (kind != AttackKind::fgsm && step_size <= 0.0)
        throw AttackError("AttackSpec: step_size must be > 0");
    if (num_steps < 1) throw AttackError("AttackSpec: num_steps must be >= 1");
    if (kind == AttackKind::fgsm && num_steps != 1)
        throw AttackError("AttackSpec: fgsm implies num_steps == 1");
    if (cw_kappa < 0.0) throw AttackError("AttackSpec: cw_kappa must be >= 0");
}

AttackSpec AttackSpec::fgsm_spec(double eps) {
    AttackSpec s;
    s.kind = AttackKind::fgsm;
    s.epsilon = eps;
    s.step_size = eps > 0.0 ? eps : 1.0;
    s.num_steps = 1;
    s.random_start = false;
    return s;
}

AttackSpec AttackSpec::pgd_spec(double eps, double alpha, int64_t steps, uint64_t seed,
                                bool random_start) {
    AttackSpec s;
    s.kind = AttackKind::pgd;
    s.epsilon = eps;
    s.step_size = alpha;
    s.num_steps = steps;
    s.seed = seed;
    s.random_start = random_start;
    return s;
}

void DiversifySpec::validate() const {
    if (epsilon_lo <= 0.0 || epsilon_hi < epsilon_lo)
        throw AttackError("DiversifySpec: bad epsilon range");
    if (steps_choices.empty()) throw AttackError("DiversifySpec: steps_choices empty");
    for (int64_t s : steps_choices)
        if (s < 1) throw AttackError("DiversifySpec: step counts must be positive");
    if (step_size_lo <= 0.0 || step_size_hi < step_size_lo)
        throw AttackError("DiversifySpec: bad step_size range");
}

void ImageBatch::validate(int64_t num_classes) const {
    if (pixels.ndim() != 4) throw AttackError("ImageBatch: pixels must be rank 4");
    if (pixels.dim(0) != static_cast<int64_t>(labels.size()))
        throw AttackError("ImageBatch: batch/label count mismatch");
    for (int64_t i = 0; i < pixels.numel(); ++i)
        if (!(pixels[i] >= 0.0 && pixels[i] <= 1.0))
            throw AttackError("ImageBatch: pixel outside [0,1]");
    if (num_classes > 0)
        for (int y : labels)
            if (y < 0 || y >= num_classes) throw AttackError("ImageBatch: label out of range");
}

namespace {

double sign0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

/// Input gradient of the summed per-sample loss; model parameters are
/// constants, so only the images receive gradient.
Tensor input_gradient(const LossGraphFn& loss_fn, const Tensor& x, const std::vector<int>& labels,
                      const char* who) {
    Tape tape;
    auto xn = tape.leaf(x, true);
    auto per_sample = loss_fn(tape, xn, labels);
    tape.backward(sum_all(per_sample));
    xn->ensure_grad();
    if (!xn->grad.all_finite())
        throw AttackError(std::string(who) + ": non-finite input gradient; batch rejected");
    return xn->grad;
}

void clip01(Tensor& x) {
    for (int64_t i = 0; i < x.numel(); ++i) x[i] = std::clamp(x[i], 0.0, 1.0);
}

/// Project x onto the spec's norm ball around x0, then onto [0,1].
void project(Tensor& x, const Tensor& x0, const AttackSpec& spec) {
    if (spec.norm == NormKind::inf) {
        for (int64_t i = 0; i < x.numel(); ++i) {
            const double lo = x0[i] - spec.epsilon, hi = x0[i] + spec.epsilon;
            x[i] = std::min(std::max(x[i], lo), hi);
        }
    } else {
        const int64_t bs = x.dim(0), per = x.numel() / bs;
        for (int64_t n = 0; n < bs; ++n) {
            double nrm2 = 0.0;
            for (int64_t i = 0; i < per; ++i) {
                const double d = x[n * per + i] - x0[n * per + i];
                nrm2 += d * d;
            }
            const double nrm = std::sqrt(nrm2);
            if (nrm > spec.epsilon && nrm > 0.0) {
                const double f = spec.epsilon / nrm;
                for (int64_t i = 0; i < per; ++i)
                    x[n * per + i] = x0[n * per + i] + f * (x[n * per + i] - x0[n * per + i]);
            }
        }
    }
    clip01(x);
}

/// One ascent step in the gradient direction (signed for inf, normalized for l2).
void ascend(Tensor& x, const Tensor& g, double step, NormKind norm) {
    if (norm == NormKind::inf) {
        for (int64_t i = 0; i < x.numel(); ++i) x[i] += step * sign0(g[i]);
    } else {
        const int64_t bs = x.dim(0), per = x.numel() / bs;
        for (int64_t n = 0; n < bs; ++n) {
            double nrm2 = 0.0;
            for (int64_t i = 0; i < per; ++i) nrm2 += g[n * per + i] * g[n * per + i];
            const double nrm = std::sqrt(nrm2);
            if (nrm <= 0.0) continue;
            for (int64_t i = 0; i < per; ++i) x[n * per + i] += step * g[n * per + i] / nrm;
        }
    }
}

}  // namespace

ImageBatch fgsm(const LossGraphFn& loss_fn, const ImageBatch& batch, const AttackSpec& spec) {
    spec.validate();
    if (spec.kind != AttackKind::fgsm) throw AttackError("fgsm: spec.kind mismatch");
    Tensor g = input_gradient(loss_fn, batch.pixels, batch.labels, "fgsm");
    Tensor x = batch.pixels;
    if (spec.norm == NormKind::inf) {
        for (int64_t i = 0; i < x.numel(); ++i) x[i] += spec.epsilon * sign0(g[i]);
    } else {
        ascend(x, g, spec.epsilon, NormKind::l2);
    }
    clip01(x);
    return {std::move(x), batch.labels};
}

ImageBatch pgd(const LossGraphFn& loss_fn, const ImageBatch& batch, const AttackSpec& spec) {
    spec.validate();
    if (spec.kind != AttackKind::pgd) throw AttackError("pgd: spec.kind mismatch");
    const Tensor& x0 = batch.pixels;
    Tensor x = x0;
    Rng rng(spec.seed);
    if (spec.random_start) {
        for (int64_t i = 0; i < x.numel(); ++i)
            x[i] += rng.uniform(-spec.epsilon, spec.epsilon);
        project(x, x0, spec);
    }
    for (int64_t step = 0; step < spec.num_steps; ++step) {
        Tensor g = input_gradient(loss_fn, x, batch.labels, "pgd");
        ascend(x, g, spec.step_size, spec.norm);
        project(x, x0, spec);
    }
    return {std::move(x), batch.labels};
}

ImageBatch spsa(const LossValueFn& loss_fn, const ImageBatch& batch, const AttackSpec& spec,
                const SpsaParams& params) {
    spec.validate();
    if (spec.kind != AttackKind::spsa) throw AttackError("spsa: spec.kind mismatch");
    if (params.samples_per_step < 1) throw AttackError("spsa: samples_per_step must be >= 1");
    if (params.perturbation_scale <= 0.0) throw AttackError("spsa: perturbation_scale must be > 0");
    const Tensor& x0 = batch.pixels;
    const int64_t bs = batch.size(), per = x0.numel() / std::max<int64_t>(bs, 1);
    Tensor x = x0;
    Rng rng(spec.seed);
    if (spec.random_start) {
        for (int64_t i = 0; i < x.numel(); ++i)
            x[i] += rng.uniform(-spec.epsilon, spec.epsilon);
        project(x, x0, spec);
    }
    const double c = params.perturbation_scale;
    Tensor delta(x0.shape()), xp(x0.shape()), xm(x0.shape()), ghat(x0.shape());
    for (int64_t step = 0; step < spec.num_steps; ++step) {
        ghat.array().setZero();
        for (int64_t k = 0; k < params.samples_per_step; ++k) {
            for (int64_t i = 0; i < delta.numel(); ++i)
                delta[i] = (rng.next_u64() & 1u) ? 1.0 : -1.0;
            xp.array() = x.array() + c * delta.array();
            xm.array() = x.array() - c * delta.array();
            Eigen::ArrayXd lp = loss_fn(xp, batch.labels);
            Eigen::ArrayXd lm = loss_fn(xm, batch.labels);
            for (int64_t n = 0; n < bs; ++n) {
                const double d = (lp[n] - lm[n]) / (2.0 * c);
                for (int64_t i = 0; i < per; ++i) ghat[n * per + i] += d * delta[n * per + i];
            }
        }
        ghat.array() /= static_cast<double>(params.samples_per_step);
        if (!ghat.all_finite()) throw AttackError("spsa: non-finite loss difference; batch rejected");
        ascend(x, ghat, spec.step_size, spec.norm);
        project(x, x0, spec);
    }
    return {std::move(x), batch.labels};
}

AttackSpec sample_attack(const DiversifySpec& diversify, Rng& rng) {
    diversify.validate();
    AttackSpec s;
    s.kind = AttackKind::pgd;
    s.inner_loss = InnerLoss::cross_entropy;
    s.epsilon = rng.uniform(diversify.epsilon_lo, diversify.epsilon_hi);
    s.num_steps = diversify.steps_choices[rng.next_below(diversify.steps_choices.size())];
    s.step_size = rng.uniform(diversify.step_size_lo, diversify.step_size_hi);
    s.random_start = true;
    s.seed = rng.derive_seed();
    return s;
}

double cw_margin_loss(const std::vector<double>& logits, int label, double kappa) {
    if (logits.size() < 2) throw AttackError("cw_margin_loss: need at least 2 classes");
    Tape t(false);
    auto z = t.leaf(Tensor::from_vector({1, static_cast<int64_t>(logits.size())}, logits));
    return cw_margin(z, {label}, kappa)->value[0];
}

double dlr_loss(const std::vector<double>& logits, int label) {
    if (logits.size() < 3) throw AttackError("dlr_loss: need at least 3 classes");
    Tape t(false);
    auto z = t.leaf(Tensor::from_vector({1, static_cast<int64_t>(logits.size())}, logits));
    return dlr(z, {label})->value[0];
}

LossGraphFn robust_head_loss(const model::ModelBundle& m, InnerLoss kind, double cw_kappa) {
    const model::ModelBundle* mp = &m;
    return [mp, kind, cw_kappa](Tape& t, const NodeRef& images, const std::vector<int>& labels) {
        auto f = model::extract(t, *mp, images, /*detach_params=*/true);
        auto z = model::encode_one(t, mp->enc_robust, f, true);
        auto logits = model::classify(t, *mp, z, true);
        switch (kind) {
            case InnerLoss::cross_entropy: return softmax_ce(logits, labels);
            case InnerLoss::cw_margin: return cw_margin(logits, labels, cw_kappa);
            case InnerLoss::dlr: return dlr(logits, labels);
        }
        throw AttackError("robust_head_loss: bad inner loss");
    };
}

LossValueFn robust_head_loss_values(const model::ModelBundle& m, InnerLoss kind, double cw_kappa) {
    const model::ModelBundle* mp = &m;
    return [mp, kind, cw_kappa](const Tensor& images, const std::vector<int>& labels) {
        Tape t(false);
        auto f = model::extract(t, *mp, t.leaf(images));
        auto z = model::encode_one(t, mp->enc_robust, f);
        auto logits = model::classify(t, *mp, z);
        NodeRef per;
        switch (kind) {
            case InnerLoss::cross_entropy: per = softmax_ce(logits, labels); break;
            case InnerLoss::cw_margin: per = cw_margin(logits, labels, cw_kappa); break;
            case InnerLoss::dlr: per = dlr(logits, labels); break;
        }
        return per->value.array();
    };
}

ImageBatch run_attack(const model::ModelBundle& m, const ImageBatch& batch, const AttackSpec& spec,
                      const SpsaParams& spsa_params) {
    switch (spec.kind) {
        case AttackKind::fgsm:
            return fgsm(robust_head_loss(m, spec.inner_loss, spec.cw_kappa), batch, spec);
        case AttackKind::pgd:
            return pgd(robust_head_loss(m, spec.inner_loss, spec.cw_kappa), batch, spec);
        case AttackKind::spsa:
            return spsa(robust_head_loss_values(m, spec.inner_loss, spec.cw_kappa), batch, spec,
                        spsa_params);
    }
    throw AttackError("run_attack: bad attack kind");
}

void assert_ball(const ImageBatch& original, const ImageBatch& attacked, const AttackSpec& spec,
                 double tol) {
    const Tensor& a = original.pixels;
    const Tensor& b = attacked.pixels;
    if (!a.same_shape(b)) throw AttackError("assert_ball: shape mismatch");
    for (int64_t i = 0; i < b.numel(); ++i)
        if (!(b[i] >= 0.0 && b[i] <= 1.0)) throw AttackError("assert_ball: pixel outside [0,1]");
    if (spec.norm == NormKind::inf) {
        for (int64_t i = 0; i < b.numel(); ++i)
            if (std::abs(b[i] - a[i]) > spec.epsilon + tol)
                throw AttackError("assert_ball: L-inf budget exceeded");
    } else {
        const int64_t bs = a.dim(0), per = a.numel() / bs;
        for (int64_t n = 0; n < bs; ++n) {
            double nrm2 = 0.0;
            for (int64_t i = 0; i < per; ++i) {
                const double d = b[n * per + i] - a[n * per + i];
                nrm2 += d * d;
            }
            if (std::sqrt(nrm2) > spec.epsilon + tol)
                throw AttackError("assert_ball: L2 budget exceeded");
        }
    }
}

}  // namespace disro::attacks
