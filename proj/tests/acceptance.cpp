// Acceptance suite: property criteria (1-6) run in seconds; the desk-scale
// experiment (7-16) trains the undefended, adversarially-trained and
// disentanglement models on the synthetic corpus and scores every criterion
// at its stated tolerance. One PASS/FAIL line per criterion.

#include "disro/attacks/attacks.hpp"
#include "disro/data/dataset.hpp"
#include "disro/eval/evaluator.hpp"
#include "disro/losses/losses.hpp"
#include "disro/model/model.hpp"
#include "disro/train/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <set>
#include <string>
#include <vector>

using namespace disro;

namespace {

struct Outcome {
    int id;
    std::string name;
    bool pass;
    std::string detail;
};

std::vector<Outcome> g_results;

void record(int id, const std::string& name, bool pass, const std::string& detail) {
    g_results.push_back({id, name, pass, detail});
    printf("[%s] criterion %2d: %s (%s)\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
    fflush(stdout);
}

double elapsed_s(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// Criterion 1: analytic gradients vs central finite differences, < 1e-4
// relative error, >= 50 randomized inputs of dimension <= 8 per loss.
// ---------------------------------------------------------------------------

using BuildFn = std::function<nn::NodeRef(nn::Tape&, std::vector<nn::NodeRef>&)>;

double fd_worst_error(const std::vector<Tensor>& inputs, const BuildFn& build, double h = 1e-5) {
    std::vector<Tensor> analytic;
    {
        nn::Tape tape;
        std::vector<nn::NodeRef> leaves;
        for (const auto& t : inputs) leaves.push_back(tape.leaf(t, true));
        auto loss = build(tape, leaves);
        tape.backward(loss);
        for (auto& l : leaves) {
            l->ensure_grad();
            analytic.push_back(l->grad);
        }
    }
    auto eval = [&](const std::vector<Tensor>& xs) {
        nn::Tape tape(false);
        std::vector<nn::NodeRef> leaves;
        for (const auto& t : xs) leaves.push_back(tape.leaf(t, false));
        return build(tape, leaves)->value[0];
    };
    double worst = 0.0;
    for (size_t k = 0; k < inputs.size(); ++k)
        for (int64_t i = 0; i < inputs[k].numel(); ++i) {
            std::vector<Tensor> plus = inputs, minus = inputs;
            plus[k][i] += h;
            minus[k][i] -= h;
            const double gn = (eval(plus) - eval(minus)) / (2.0 * h);
            const double ga = analytic[k][i];
            worst = std::max(worst, std::abs(ga - gn) / std::max({1e-4, std::abs(ga), std::abs(gn)}));
        }
    return worst;
}

Tensor rand_t(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(s));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

model::BackboneConfig micro_arch() {
    model::BackboneConfig cfg;
    cfg.in_channels = 2;
    cfg.in_height = 4;
    cfg.in_width = 4;
    cfg.extractor_blocks = 1;
    cfg.base_channels = 2;
    cfg.latent_dim = 4;
    cfg.num_classes = 2;
    cfg.norm_groups = 2;
    return cfg;
}

void criterion1_gradients() {
    Rng rng(1001);
    const int trials = 50;
    double worst = 0.0;
    std::string failing;

    auto run = [&](const char* name, const std::function<double(Rng&)>& one) {
        double local = 0.0;
        for (int i = 0; i < trials; ++i) local = std::max(local, one(rng));
        if (local > worst) {
            worst = local;
            failing = name;
        }
    };

    run("angular_distance", [](Rng& r) {
        auto a = rand_t({2, 4}, r, 0.2, 1.0);
        auto b = rand_t({2, 4}, r, -1.0, -0.2);
        return fd_worst_error({a, b}, [&](nn::Tape&, std::vector<nn::NodeRef>& in) {
            return losses::angular_distance(in[0], in[1]);
        });
    });
    run("branch_cross_entropy", [](Rng& r) {
        std::vector<Tensor> zs;
        for (int k = 0; k < 4; ++k) zs.push_back(rand_t({2, 3}, r, -2.0, 2.0));
        std::vector<int> labels = {static_cast<int>(r.next_below(3)), static_cast<int>(r.next_below(3))};
        return fd_worst_error(zs, [&](nn::Tape&, std::vector<nn::NodeRef>& in) {
            return losses::branch_cross_entropy({in[0], in[1], in[2], in[3]}, labels);
        });
    });
    run("discriminator_bce", [](Rng& r) {
        std::vector<Tensor> ps;
        for (int k = 0; k < 6; ++k) ps.push_back(rand_t({2, 1}, r, 0.05, 0.95));
        return fd_worst_error(ps, [&](nn::Tape&, std::vector<nn::NodeRef>& in) {
            return losses::discriminator_bce({in[0], in[1], in[2]}, {in[3], in[4], in[5]});
        });
    });
    run("encoder_adversarial", [](Rng& r) {
        std::vector<Tensor> ps;
        for (int k = 0; k < 6; ++k) ps.push_back(rand_t({2, 1}, r, 0.05, 0.95));
        return fd_worst_error(ps, [&](nn::Tape&, std::vector<nn::NodeRef>& in) {
            auto l = losses::encoder_adversarial_losses(in[0], in[1], in[2], in[3], in[4], in[5]);
            return nn::add(l.r_nr, l.ds);
        });
    });
    run("reconstruction_l1", [](Rng& r) {
        auto a = rand_t({2, 4}, r);
        auto b = rand_t({2, 4}, r);
        return fd_worst_error({a, b}, [&](nn::Tape&, std::vector<nn::NodeRef>& in) {
            return losses::reconstruction_l1(in[0], in[1]);
        });
    });
    run("pairwise_kl", [](Rng& r) {
        auto a = rand_t({2, 4}, r);
        auto b = rand_t({2, 4}, r);
        auto c = rand_t({2, 4}, r);
        return fd_worst_error({a, b, c}, [&](nn::Tape&, std::vector<nn::NodeRef>& in) {
            return losses::pairwise_kl(in[0], in[1], in[2]);
        });
    });

    // Reversal: on the adversarial non-robust branch, the analytic gradient of
    // the non-robust encoder equals -lambda times the finite-difference
    // gradient, while the extractor gradient matches plainly.
    double worst_rev = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        auto arch = micro_arch();
        arch.grl_lambda = 0.5 + rng.uniform();
        auto m = model::ModelBundle::init(arch, 2000 + trial);
        Tensor images = rand_t({1, 2, 4, 4}, rng, 0.0, 1.0);
        std::vector<int> labels = {static_cast<int>(rng.next_below(2))};

        m.visit_all([](model::Component, const std::string&, nn::Param& p) { p.zero_grad(); });
        {
            nn::Tape t;
            auto f = model::extract(t, m, t.leaf(images));
            auto z = model::nr_branch_reversed(t, m, f);
            t.backward(nn::mean_all(nn::softmax_ce(model::classify(t, m, z, true), labels)));
        }
        auto loss_value = [&](model::ModelBundle& mm) {
            nn::Tape t(false);
            auto f = model::extract(t, mm, t.leaf(images));
            auto z = model::encode_one(t, mm.enc_nonrobust, f);
            return nn::mean_all(nn::softmax_ce(model::classify(t, mm, z, true), labels))->value[0];
        };
        const double h = 1e-6;
        auto check_param = [&](nn::Param& p, double sign_scale) {
            for (int64_t i = 0; i < std::min<int64_t>(p.value.numel(), 3); ++i) {
                const double keep = p.value[i];
                p.value[i] = keep + h;
                const double up = loss_value(m);
                p.value[i] = keep - h;
                const double dn = loss_value(m);
                p.value[i] = keep;
                const double fd = (up - dn) / (2.0 * h) * sign_scale;
                const double ga = p.grad[i];
                worst_rev = std::max(worst_rev,
                                     std::abs(ga - fd) / std::max({1e-4, std::abs(ga), std::abs(fd)}));
            }
        };
        for (nn::Param* p : m.params_of(model::Component::enc_nonrobust))
            check_param(*p, -arch.grl_lambda);
        for (nn::Param* p : m.params_of(model::Component::extractor)) check_param(*p, 1.0);
    }
    worst = std::max(worst, worst_rev);
    if (worst_rev == worst) failing = "branch_cross_entropy reversal";

    char detail[160];
    snprintf(detail, sizeof(detail), "worst relative error %.3g on %s over %d randomized inputs each",
             worst, failing.c_str(), trials);
    record(1, "gradient correctness vs finite differences", worst < 1e-4, detail);
}

// ---------------------------------------------------------------------------
// Criterion 2: attack constraints over 1,000 random inputs and specs, plus
// bit-for-bit PGD(T=1)/FGSM agreement.
// ---------------------------------------------------------------------------

void criterion2_attacks() {
    auto arch = micro_arch();
    arch.in_channels = 3;
    arch.in_height = 6;
    arch.in_width = 6;
    auto m = model::ModelBundle::init(arch, 7);
    Rng rng(77);
    int64_t violations = 0, total = 0;
    auto loss_graph = attacks::robust_head_loss(m, attacks::InnerLoss::cross_entropy);
    auto loss_values = attacks::robust_head_loss_values(m, attacks::InnerLoss::cross_entropy);
    auto random_batch = [&](int64_t n) {
        Tensor t({n, 3, 6, 6});
        for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform();
        std::vector<int> labels(static_cast<size_t>(n));
        for (auto& l : labels) l = static_cast<int>(rng.next_below(2));
        return attacks::ImageBatch{std::move(t), std::move(labels)};
    };
    for (int trial = 0; trial < 334; ++trial) {
        attacks::AttackSpec spec;
        spec.epsilon = rng.uniform(0.0, 0.15);
        spec.step_size = rng.uniform(0.004, 0.08);
        spec.num_steps = 1 + static_cast<int64_t>(rng.next_below(3));
        spec.random_start = rng.next_below(2) == 0;
        spec.seed = rng.next_u64();
        auto batch = random_batch(1 + static_cast<int64_t>(rng.next_below(2)));
        attacks::ImageBatch out;
        if (trial % 3 == 0) {
            spec.kind = attacks::AttackKind::fgsm;
            spec.num_steps = 1;
            spec.random_start = false;
            out = attacks::fgsm(loss_graph, batch, spec);
        } else if (trial % 3 == 1) {
            spec.kind = attacks::AttackKind::pgd;
            out = attacks::pgd(loss_graph, batch, spec);
        } else {
            spec.kind = attacks::AttackKind::spsa;
            spec.num_steps = 1;
            out = attacks::spsa(loss_values, batch, spec, {0.01, 4});
        }
        total += out.size();
        try {
            attacks::assert_ball(batch, out, spec);
        } catch (const attacks::AttackError&) {
            ++violations;
        }
    }
    bool equal = true;
    for (int i = 0; i < 5; ++i) {
        auto batch = random_batch(3);
        const double eps = rng.uniform(0.01, 0.1);
        auto f = attacks::fgsm(loss_graph, batch, attacks::AttackSpec::fgsm_spec(eps));
        auto p = attacks::pgd(loss_graph, batch,
                              attacks::AttackSpec::pgd_spec(eps, eps * (1.0 + rng.uniform()), 1, 0, false));
        equal = equal && p.pixels.bit_equal(f.pixels);
    }
    char detail[160];
    snprintf(detail, sizeof(detail),
             "%lld/%lld samples within budget and range; pgd(T=1,a>=eps)==fgsm bitwise: %s",
             static_cast<long long>(total - violations), static_cast<long long>(total),
             equal ? "yes" : "no");
    record(2, "attack ball/range constraints and fgsm equivalence", violations == 0 && equal, detail);
}

// ---------------------------------------------------------------------------
// Criterion 3: GRL backward equals -lambda x upstream exactly.
// ---------------------------------------------------------------------------

void criterion3_grl() {
    bool ok = true;
    Rng rng(33);
    for (double lambda : {0.1, 0.5, 1.0, 2.0}) {
        nn::Tape t;
        Tensor v = rand_t({6}, rng);
        auto x = t.leaf(v, true);
        auto y = nn::grl(x, lambda);
        ok = ok && y->value.bit_equal(v);
        Tensor upstream = rand_t({6}, rng);
        y->ensure_grad();
        y->grad = upstream;
        y->backward_fn();
        x->ensure_grad();
        for (int64_t i = 0; i < 6; ++i) ok = ok && x->grad[i] == -lambda * upstream[i];
    }
    record(3, "gradient reversal exact identity", ok, "lambda in {0.1, 0.5, 1, 2}, bitwise");
}

// ---------------------------------------------------------------------------
// Criterion 4: loss landmark values.
// ---------------------------------------------------------------------------

void criterion4_landmarks() {
    bool ok = true;
    std::string why = "all landmarks within 1e-9";
    auto expect = [&](bool cond, const char* what) {
        if (!cond && ok) {
            ok = false;
            why = std::string("failed: ") + what;
        }
    };
    {
        nn::Tape t(false);
        auto uniform = t.leaf(Tensor::zeros({2, 10}));
        losses::BranchLogits bl{uniform, uniform, uniform, uniform};
        expect(std::abs(losses::branch_cross_entropy(bl, {0, 5})->value[0] - std::log(10.0)) < 1e-9,
               "uniform-logit CE = ln C");
    }
    {
        nn::Tape t(false);
        auto half = t.leaf(Tensor::full({3, 1}, 0.5));
        const double v = losses::discriminator_bce({half, half, half}, {half, half, half})->value[0];
        expect(std::abs(v - 2.0 * std::log(2.0)) < 1e-9, "D=0.5 BCE = 2 ln 2");
    }
    expect(std::abs(losses::angular_distance_value({3, 4}, {3, 4})) < 1e-9, "identical -> 0");
    expect(std::abs(losses::angular_distance_value({1, 0}, {0, 1}) - 1.0) < 1e-9, "orthogonal -> 1");
    expect(std::abs(losses::angular_distance_value({1, 0}, {-2, 0})) < 1e-9, "anti-parallel -> 0");
    {
        // Two-dimensional brute-force oracle for the pairwise KL surrogate.
        auto softmax2 = [](double a, double b) {
            const double m = std::max(a, b);
            const double ea = std::exp(a - m), eb = std::exp(b - m);
            return std::pair<double, double>{ea / (ea + eb), eb / (ea + eb)};
        };
        auto [p1, p2] = softmax2(0.0, 0.0);
        auto [q1, q2] = softmax2(std::log(3.0), 0.0);
        const double s = p1 * std::log(p1 / q1) + p2 * std::log(p2 / q2) +
                         q1 * std::log(q1 / p1) + q2 * std::log(q2 / p2);
        nn::Tape t(false);
        auto a = t.leaf(Tensor::from_vector({1, 2}, {0.0, 0.0}));
        auto b = t.leaf(Tensor::from_vector({1, 2}, {std::log(3.0), 0.0}));
        const double got = losses::pairwise_kl(a, b, a)->value[0];
        expect(std::abs(got - (2.0 * std::exp(-s) + 1.0) / 3.0) < 1e-9, "pairwise_kl 2-D oracle");
    }
    record(4, "loss landmark values", ok, why);
}

// ---------------------------------------------------------------------------
// Criteria 5 and 6: step isolation; determinism and resumability.
// ---------------------------------------------------------------------------

model::BackboneConfig tiny_arch8() {
    model::BackboneConfig cfg;
    cfg.in_channels = 3;
    cfg.in_height = 8;
    cfg.in_width = 8;
    cfg.extractor_blocks = 1;
    cfg.base_channels = 4;
    cfg.latent_dim = 8;
    cfg.num_classes = 2;
    cfg.norm_groups = 2;
    return cfg;
}

train::TrainConfig tiny_train_cfg(int64_t epochs) {
    train::TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.batch_size = 8;
    cfg.learning_rate = 0.05;
    cfg.lr_decay_epochs = {};
    cfg.seed = 5;
    cfg.diversify.steps_choices = {2, 3};
    cfg.early_stopping.patience = 50;
    cfg.early_stopping.eval_attack = attacks::AttackSpec::pgd_spec(8.0 / 255.0, 4.0 / 255.0, 2, 5);
    return cfg;
}

data::SplitDataset tiny_split() {
    data::DatasetSpec spec;
    spec.source = data::DatasetSource::synthetic;
    spec.synthetic.samples_per_class = 20;
    spec.synthetic.height = 8;
    spec.synthetic.width = 8;
    spec.split_train = 0.6;
    spec.split_val = 0.2;
    spec.split_test = 0.2;
    spec.seed = 3;
    return data::load_dataset(spec);
}

std::vector<uint64_t> checksums(model::ModelBundle& m) {
    std::vector<uint64_t> out;
    for (size_t i = 0; i < model::component_count; ++i)
        out.push_back(m.value_checksum(static_cast<model::Component>(i)));
    return out;
}

void criterion5_step_isolation() {
    auto dataset = tiny_split();
    auto cfg = tiny_train_cfg(1);
    train::Trainer t(train::Variant::disentangle, cfg, tiny_arch8(), &dataset);
    Rng attack_rng(cfg.seed, "acceptance-isolation");
    auto ctx = t.prepare_minibatch(dataset.train.batch({0, 1, 2, 3}), attack_rng);
    using C = model::Component;
    using S = train::SubStep;
    const std::vector<std::pair<S, std::set<size_t>>> plan = {
        {S::c_kl, {1, 2, 3}},          // encoders only
        {S::d_ce, {0, 1, 2, 4}},       // extractor (default config), R/NR encoders, classifier
        {S::e_align, {0, 1}},          // extractor + robust encoder
        {S::f1_disc, {5}},             // discriminator only
        {S::f2_adv, {0, 1, 2, 3}},     // extractor + all encoders, discriminator frozen
        {S::g_recon, {1, 2, 3, 6}},    // encoders + reconstructor
    };
    bool ok = true;
    std::string why = "every sub-step touched exactly its designated parameter groups";
    for (const auto& [step, want] : plan) {
        auto before = checksums(t.bundle());
        t.run_substeps(ctx, 0.05, {step});
        auto after = checksums(t.bundle());
        for (size_t i = 0; i < before.size(); ++i) {
            const bool changed = before[i] != after[i];
            const bool expected = want.count(i) > 0;
            if (changed != expected) {
                ok = false;
                why = std::string("component ") + model::component_names[i] +
                      (changed ? " changed unexpectedly" : " did not change") + " in sub-step";
            }
        }
    }
    record(5, "per-sub-step parameter isolation", ok, why);
}

void criterion6_determinism_resume() {
    namespace fs = std::filesystem;
    auto dataset = tiny_split();
    train::Trainer a(train::Variant::disentangle, tiny_train_cfg(3), tiny_arch8(), &dataset);
    auto ra = a.run();
    train::Trainer b(train::Variant::disentangle, tiny_train_cfg(3), tiny_arch8(), &dataset);
    auto rb = b.run();
    const bool repro = checksums(ra.last) == checksums(rb.last);

    auto dir = fs::temp_directory_path() / "disro_acceptance_resume";
    fs::remove_all(dir);
    fs::create_directories(dir);
    {
        train::Trainer first(train::Variant::disentangle, tiny_train_cfg(1), tiny_arch8(), &dataset,
                             dir.string());
        first.run();
    }
    train::Trainer second(train::Variant::disentangle, tiny_train_cfg(3), tiny_arch8(), &dataset);
    second.resume((dir / "last.ckpt").string());
    auto rr = second.run();
    const bool resume_ok = checksums(rr.last) == checksums(ra.last) &&
                           checksums(rr.best) == checksums(ra.best);
    fs::remove_all(dir);
    record(6, "fixed-seed determinism and bit-for-bit resume", repro && resume_ok,
           std::string("repro: ") + (repro ? "yes" : "no") + ", restart == straight run: " +
               (resume_ok ? "yes" : "no"));
}

// ---------------------------------------------------------------------------
// Desk-scale experiment: criteria 7-16.
// ---------------------------------------------------------------------------

struct DeskSetup {
    data::SplitDataset split;
    model::BackboneConfig arch;
    train::TrainConfig um_cfg, at_cfg, dis_cfg;
    attacks::AttackSpec eval_pgd20;
};

DeskSetup desk_setup() {
    DeskSetup d;
    data::DatasetSpec spec;
    spec.source = data::DatasetSource::synthetic;
    spec.synthetic.num_classes = 2;
    spec.synthetic.samples_per_class = 500;
    spec.synthetic.channels = 3;
    spec.synthetic.height = 16;
    spec.synthetic.width = 16;
    spec.synthetic.robust_amplitude = 60.0 / 255.0;
    spec.synthetic.robust_strength_mean = 1.0;
    spec.synthetic.robust_strength_spread = 0.65;
    spec.synthetic.fragile_amplitude = 7.0 / 255.0;
    spec.synthetic.noise_sigma = 0.05;
    spec.split_train = 0.6;
    spec.split_val = 0.15;
    spec.split_test = 0.25;
    spec.seed = 2024;
    d.split = data::load_dataset(spec);

    d.arch.in_channels = 3;
    d.arch.in_height = 16;
    d.arch.in_width = 16;
    d.arch.extractor_blocks = 2;
    d.arch.base_channels = 6;
    d.arch.latent_dim = 48;
    d.arch.num_classes = 2;
    d.arch.norm_groups = 4;
    d.arch.grl_lambda = 1.0;

    train::TrainConfig base;
    base.batch_size = 50;
    base.learning_rate = 0.01;
    base.lr_decay_epochs = {};
    base.momentum = 0.9;
    base.weight_decay = 5e-4;
    base.seed = 7;
    base.early_stopping.patience = 30;
    base.early_stopping.eval_attack = attacks::AttackSpec::pgd_spec(8.0 / 255.0, 2.0 / 255.0, 5, 42);

    // The undefended baseline stops on its clean-accuracy plateau, which this
    // corpus reaches within an epoch or two.
    d.um_cfg = base;
    d.um_cfg.epochs = 4;
    d.um_cfg.learning_rate = 0.003;
    d.um_cfg.early_stopping.metric = "clean_acc";

    d.at_cfg = base;
    d.at_cfg.epochs = 12;
    d.at_cfg.early_stopping.metric = "robust_acc";
    d.at_cfg.at_attack = attacks::AttackSpec::pgd_spec(8.0 / 255.0, 2.0 / 255.0, 7, 0, true);

    d.dis_cfg = base;
    d.dis_cfg.epochs = 12;
    d.dis_cfg.early_stopping.metric = "robust_acc";
    d.dis_cfg.diversify.steps_choices = {4, 6, 8, 10};
    d.dis_cfg.loss_weights.adv = 0.2;

    d.eval_pgd20 = attacks::AttackSpec::pgd_spec(8.0 / 255.0, 2.0 / 255.0, 20, 99, true);
    return d;
}

struct TripleMetrics {
    double angular = 0.0, recon = 0.0, kl = 0.0;
};

TripleMetrics triple_metrics(const model::ModelBundle& m, const data::Dataset& ds,
                             const attacks::AttackSpec& spec) {
    auto batch = ds.all();
    auto adv = attacks::run_attack(m, batch, spec);
    nn::Tape t(false);
    auto f_nat = model::extract(t, m, t.leaf(batch.pixels));
    auto f_adv = model::extract(t, m, t.leaf(adv.pixels));
    auto zn = model::encode(t, m, f_nat);
    auto za = model::encode(t, m, f_adv);
    TripleMetrics out;
    out.angular = losses::angular_distance(zn.robust, za.robust)->value[0];
    out.kl = losses::pairwise_kl(zn.robust, zn.non_robust, zn.domain)->value[0];
    auto map_r = model::encode_map(t, m.enc_robust, f_nat);
    auto map_nr = model::encode_map(t, m.enc_nonrobust, f_nat);
    auto map_ds = model::encode_map(t, m.enc_domain, f_nat);
    out.recon =
        losses::reconstruction_l1(model::reconstruct(t, m, map_r, map_nr, map_ds), f_nat)->value[0];
    return out;
}

void desk_criteria(bool verbose) {
    auto t0 = std::chrono::steady_clock::now();
    auto d = desk_setup();
    printf("# desk experiment: %lld train / %lld val / %lld test synthetic samples\n",
           static_cast<long long>(d.split.train.size()), static_cast<long long>(d.split.val.size()),
           static_cast<long long>(d.split.test.size()));

    auto um_epoch0 = model::ModelBundle::init(d.arch, d.um_cfg.seed);
    (void)um_epoch0;
    auto dis_epoch0 = model::ModelBundle::init(d.arch, d.dis_cfg.seed);

    auto um = train::train_natural(d.um_cfg, d.arch, d.split);
    printf("# UM trained (%.1fs), best %s %.2f\n", elapsed_s(t0),
           d.um_cfg.early_stopping.metric.c_str(), um.best_metric);
    auto at = train::train_standard_at(d.at_cfg, d.arch, d.split);
    printf("# AT trained (%.1fs), best robust val %.2f\n", elapsed_s(t0), at.best_metric);
    auto dis = train::train_disentangle(d.dis_cfg, d.arch, d.split);
    printf("# disentangle trained (%.1fs), best robust val %.2f\n", elapsed_s(t0), dis.best_metric);

    const auto& test = d.split.test;
    const auto pgd20 = d.eval_pgd20;

    const double um_clean = eval::clean_accuracy(um.best, test);
    const double um_pgd = eval::robust_accuracy(um.best, test, pgd20);
    char buf[256];
    snprintf(buf, sizeof(buf), "clean %.2f%% (need >= 90), pgd-20 %.2f%% (need <= 10)", um_clean,
             um_pgd);
    record(7, "undefended baseline: accurate but fully attackable", um_clean >= 90.0 && um_pgd <= 10.0,
           buf);

    const double at_pgd = eval::robust_accuracy(at.best, test, pgd20);
    const double dis_pgd = eval::robust_accuracy(dis.best, test, pgd20);
    const double dis_clean = eval::clean_accuracy(dis.best, test);
    snprintf(buf, sizeof(buf), "disentangle %.2f%% >= at %.2f%% - 3 >= um %.2f%%, margin %.2f >= 30",
             dis_pgd, at_pgd, um_pgd, dis_pgd - um_pgd);
    record(8, "robust-accuracy ordering disentangle >= at >= um",
           dis_pgd >= at_pgd - 3.0 && at_pgd >= um_pgd && (dis_pgd - um_pgd) >= 30.0, buf);

    const double dis_bb = eval::black_box_accuracy(dis.best, um.best, test, pgd20);
    snprintf(buf, sizeof(buf), "black-box %.2f%% vs white-box %.2f%%", dis_bb, dis_pgd);
    record(9, "black-box transfer is weaker than white-box by >= 5 points", dis_bb >= dis_pgd + 5.0,
           buf);

    const std::vector<int64_t> iters = {10, 20, 50, 100};
    auto curve = eval::iteration_sweep(dis.best, test, iters, pgd20);
    bool monotone = true;
    for (size_t i = 1; i < curve.size(); ++i) monotone = monotone && curve[i] <= curve[i - 1] + 1.0;
    snprintf(buf, sizeof(buf), "accuracy at {10,20,50,100} iters: %.2f / %.2f / %.2f / %.2f", curve[0],
             curve[1], curve[2], curve[3]);
    record(10, "iteration sweep non-increasing within 1 point", monotone, buf);

    attacks::AttackSpec fgsm_spec = attacks::AttackSpec::fgsm_spec(pgd20.epsilon);
    const double dis_fgsm = eval::robust_accuracy(dis.best, test, fgsm_spec);
    snprintf(buf, sizeof(buf), "fgsm %.2f%% vs pgd-20 %.2f%%", dis_fgsm, dis_pgd);
    record(11, "single-step attack is weaker than iterated", dis_fgsm >= dis_pgd, buf);

    attacks::AttackSpec spsa_spec = pgd20;
    spsa_spec.kind = attacks::AttackKind::spsa;
    spsa_spec.num_steps = 5;
    spsa_spec.step_size = 4.0 / 255.0;
    const double dis_spsa = eval::robust_accuracy(dis.best, test, spsa_spec, {0.01, 32});
    snprintf(buf, sizeof(buf), "spsa %.2f%% vs pgd %.2f%%", dis_spsa, dis_pgd);
    record(12, "gradient-free attack is weaker than gradient-based", dis_spsa >= dis_pgd, buf);

    auto det = eval::detection_report(dis.best, test, pgd20, 0.5);
    snprintf(buf, sizeof(buf), "AUC %.4f (need >= 0.95), TPR %.4f, TNR %.4f at 0.5", det.auc, det.tpr,
             det.tnr);
    record(13, "adversarial-example detection", det.auc >= 0.95 && det.tpr >= 0.9 && det.tnr >= 0.9,
           buf);

    const double tp_clean = eval::two_path_accuracy(dis.best, um.best, test, nullptr, 0.5);
    const double tp_robust = eval::two_path_accuracy(dis.best, um.best, test, &pgd20, 0.5);
    snprintf(buf, sizeof(buf), "clean %.2f%% vs UM %.2f%%; robust %.2f%% vs robust-only %.2f%%",
             tp_clean, um_clean, tp_robust, dis_pgd);
    record(14, "two-path inference preserves both paths within 1 point",
           std::abs(tp_clean - um_clean) <= 1.0 && std::abs(tp_robust - dis_pgd) <= 1.0, buf);

    const double knn_clean = eval::knn_accuracy(dis.best, d.split.train, test, 50, false);
    const double knn_robust = eval::knn_accuracy(dis.best, d.split.train, test, 50, true, &pgd20);
    snprintf(buf, sizeof(buf), "knn %.2f/%.2f vs softmax %.2f/%.2f (clean/robust)", knn_clean,
             knn_robust, dis_clean, dis_pgd);
    record(15, "k-NN on penultimate features within 3 points of softmax",
           std::abs(knn_clean - dis_clean) <= 3.0 && std::abs(knn_robust - dis_pgd) <= 3.0, buf);

    auto m0 = triple_metrics(dis_epoch0, test, pgd20);
    auto m1 = triple_metrics(dis.best, test, pgd20);
    snprintf(buf, sizeof(buf),
             "angular %.4f -> %.4f, recon L1 %.4f -> %.4f, pairwise-kl %.4f -> %.4f", m0.angular,
             m1.angular, m0.recon, m1.recon, m0.kl, m1.kl);
    record(16, "training reduces alignment, reconstruction and dependence losses",
           m1.angular < m0.angular && m1.recon < m0.recon && m1.kl < m0.kl, buf);

    if (verbose) printf("# desk experiment finished in %.1fs\n", elapsed_s(t0));
}

}  // namespace

int main(int argc, char** argv) {
    setvbuf(stdout, nullptr, _IOLBF, 0);
    bool skip_desk = false, skip_props = false;
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--skip-desk") == 0) skip_desk = true;
        if (std::strcmp(argv[i], "--desk-only") == 0) skip_props = true;
    }
    const auto t0 = std::chrono::steady_clock::now();
    if (!skip_props) {
        criterion1_gradients();
        criterion2_attacks();
        criterion3_grl();
        criterion4_landmarks();
        criterion5_step_isolation();
        criterion6_determinism_resume();
    }
    if (!skip_desk) desk_criteria(true);

    int failures = 0;
    for (const auto& r : g_results) failures += r.pass ? 0 : 1;
    printf("%zu criteria checked, %d failed (%.1fs)\n", g_results.size(), failures, elapsed_s(t0));
    return failures == 0 ? 0 : 1;
}
