#include "disro/attacks/attacks.hpp"

#include <doctest.h>

#include <cmath>
#include <map>

using namespace disro;
using namespace disro::attacks;

namespace {

/// Per-sample linear loss w . x over flattened pixels.
LossGraphFn linear_loss(const std::vector<double>& w) {
    return [w](nn::Tape& t, const nn::NodeRef& images, const std::vector<int>&) {
        const int64_t b = images->value.dim(0);
        const int64_t d = images->value.numel() / b;
        auto flat = nn::reshape(images, {b, d});
        Tensor wt({b, d});
        for (int64_t i = 0; i < b; ++i)
            for (int64_t j = 0; j < d; ++j) wt.at(i, j) = w[static_cast<size_t>(j)];
        return nn::row_sum(nn::hadamard(flat, t.leaf(wt)));
    };
}

/// Per-sample squared distance to a constant point c (outside the ball).
LossGraphFn quadratic_loss(double c) {
    return [c](nn::Tape&, const nn::NodeRef& images, const std::vector<int>&) {
        const int64_t b = images->value.dim(0);
        const int64_t d = images->value.numel() / b;
        auto flat = nn::reshape(images, {b, d});
        auto diff = nn::add_scalar(flat, -c);
        return nn::row_sum(nn::hadamard(diff, diff));
    };
}

double loss_at(const LossGraphFn& fn, const Tensor& x) {
    nn::Tape t(false);
    auto per = fn(t, t.leaf(x), {});
    return per->value.array().sum();
}

ImageBatch tiny_batch(std::vector<double> pix, Shape shape) {
    return {Tensor::from_vector(std::move(shape), pix), std::vector<int>(shape.empty() ? 0 : 1, 0)};
}

model::BackboneConfig tiny_arch() {
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

ImageBatch random_images(int64_t n, Rng& rng) {
    Tensor t({n, 3, 8, 8});
    std::vector<int> labels(static_cast<size_t>(n));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform();
    for (auto& l : labels) l = static_cast<int>(rng.next_below(2));
    return {std::move(t), std::move(labels)};
}

}  // namespace

TEST_CASE("attack spec validation") {
    AttackSpec s;
    s.epsilon = -0.1;
    CHECK_THROWS_AS(s.validate(), AttackError);
    s = AttackSpec{};
    s.kind = AttackKind::fgsm;
    s.num_steps = 3;
    CHECK_THROWS_AS(s.validate(), AttackError);
    s = AttackSpec{};
    s.step_size = 0.0;
    CHECK_THROWS_AS(s.validate(), AttackError);
}

TEST_CASE("fgsm: zero budget returns the input") {
    auto batch = tiny_batch({0.3, 0.5, 0.7}, {1, 3, 1, 1});
    auto out = fgsm(linear_loss({1.0, -1.0, 0.5}), batch, AttackSpec::fgsm_spec(0.0));
    CHECK(out.pixels.bit_equal(batch.pixels));
    CHECK(out.labels == batch.labels);
}

TEST_CASE("fgsm: analytic signed step on a linear loss") {
    auto batch = tiny_batch({0.5, 0.5, 0.5}, {1, 3, 1, 1});
    auto out = fgsm(linear_loss({1.0, -1.0, 0.0}), batch, AttackSpec::fgsm_spec(0.1));
    CHECK(out.pixels[0] == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(out.pixels[1] == doctest::Approx(0.4).epsilon(1e-12));
    CHECK(out.pixels[2] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("fgsm: range clipping forces saturated pixels to 1") {
    auto batch = tiny_batch({0.95}, {1, 1, 1, 1});
    auto out = fgsm(linear_loss({1.0}), batch, AttackSpec::fgsm_spec(0.1));
    CHECK(out.pixels[0] == 1.0);
}

TEST_CASE("pgd: zero budget is a no-op for any step count") {
    auto batch = tiny_batch({0.2, 0.9, 0.5}, {1, 3, 1, 1});
    auto spec = AttackSpec::pgd_spec(0.0, 0.05, 7, 99, true);
    auto out = pgd(linear_loss({1.0, -2.0, 3.0}), batch, spec);
    CHECK(out.pixels.bit_equal(batch.pixels));
}

TEST_CASE("pgd: single step with alpha >= eps reproduces fgsm bit-for-bit") {
    auto m = model::ModelBundle::init(tiny_arch(), 17);
    Rng rng(5);
    auto batch = random_images(4, rng);
    const double eps = 8.0 / 255.0;
    auto f = fgsm(robust_head_loss(m, InnerLoss::cross_entropy), batch, AttackSpec::fgsm_spec(eps));
    auto spec = AttackSpec::pgd_spec(eps, eps * 1.5, 1, 0, /*random_start=*/false);
    auto p = pgd(robust_head_loss(m, InnerLoss::cross_entropy), batch, spec);
    CHECK(p.pixels.bit_equal(f.pixels));
}

TEST_CASE("pgd: loss is non-decreasing across iterations on a smooth toy objective") {
    auto batch = tiny_batch({0.5, 0.45, 0.55, 0.5}, {1, 4, 1, 1});
    auto fn = quadratic_loss(2.0);  // maximize distance to a point outside the ball
    const double before = loss_at(fn, batch.pixels);
    double prev = before;
    for (int64_t steps = 1; steps <= 8; ++steps) {
        auto spec = AttackSpec::pgd_spec(0.1, 0.03, steps, 0, false);
        auto out = pgd(fn, batch, spec);
        const double after = loss_at(fn, out.pixels);
        CHECK(after >= prev - 1e-12);
        prev = after;
    }
    CHECK(prev >= before);
}

TEST_CASE("pgd: pure function of (spec, batch, seed)") {
    auto m = model::ModelBundle::init(tiny_arch(), 3);
    Rng rng(8);
    auto batch = random_images(3, rng);
    auto spec = AttackSpec::pgd_spec(8.0 / 255.0, 2.0 / 255.0, 5, 1234, true);
    auto a = pgd(robust_head_loss(m, InnerLoss::cross_entropy), batch, spec);
    auto b = pgd(robust_head_loss(m, InnerLoss::cross_entropy), batch, spec);
    CHECK(a.pixels.bit_equal(b.pixels));
}

TEST_CASE("attack outputs satisfy ball and range constraints on randomized specs") {
    auto m = model::ModelBundle::init(tiny_arch(), 11);
    Rng rng(21);
    for (int trial = 0; trial < 12; ++trial) {
        auto batch = random_images(4, rng);
        AttackSpec spec;
        spec.epsilon = rng.uniform(0.0, 0.2);
        spec.step_size = rng.uniform(0.005, 0.1);
        spec.num_steps = 1 + static_cast<int64_t>(rng.next_below(5));
        spec.seed = rng.next_u64();
        spec.random_start = rng.next_below(2) == 0;
        if (trial % 3 == 0) {
            spec.kind = AttackKind::fgsm;
            spec.num_steps = 1;
            spec.random_start = false;
            auto out = fgsm(robust_head_loss(m, InnerLoss::cross_entropy), batch, spec);
            CHECK_NOTHROW(assert_ball(batch, out, spec));
        } else if (trial % 3 == 1) {
            spec.kind = AttackKind::pgd;
            auto out = pgd(robust_head_loss(m, InnerLoss::cross_entropy), batch, spec);
            CHECK_NOTHROW(assert_ball(batch, out, spec));
        } else {
            spec.kind = AttackKind::spsa;
            spec.num_steps = 2;
            auto out = spsa(robust_head_loss_values(m, InnerLoss::cross_entropy), batch, spec,
                            {0.01, 8});
            CHECK_NOTHROW(assert_ball(batch, out, spec));
        }
    }
}

TEST_CASE("l2 attacks respect the l2 ball") {
    auto m = model::ModelBundle::init(tiny_arch(), 11);
    Rng rng(31);
    auto batch = random_images(3, rng);
    AttackSpec spec = AttackSpec::pgd_spec(0.5, 0.2, 4, 7, true);
    spec.norm = NormKind::l2;
    auto out = pgd(robust_head_loss(m, InnerLoss::cross_entropy), batch, spec);
    CHECK_NOTHROW(assert_ball(batch, out, spec));
}

TEST_CASE("cw margin loss examples") {
    CHECK(cw_margin_loss({5.0, 5.0}, 0, 0.0) == doctest::Approx(0.0));
    CHECK(cw_margin_loss({3.0, 1.0}, 0, 0.0) == doctest::Approx(-2.0));
    CHECK(cw_margin_loss({3.0, 1.0}, 0, 10.0) == doctest::Approx(-2.0));  // clamp inactive
    CHECK(cw_margin_loss({3.0, 1.0}, 1, 0.0) == doctest::Approx(0.0));    // negative margin clamps at 0
    CHECK(cw_margin_loss({3.0, 1.0}, 1, 10.0) == doctest::Approx(2.0));   // wider kappa exposes it
    CHECK_THROWS_AS(cw_margin_loss({1.0}, 0, 0.0), AttackError);
}

TEST_CASE("dlr loss examples") {
    CHECK(dlr_loss({3.0, 2.0, 1.0}, 0) == doctest::Approx(-0.5));
    CHECK(dlr_loss({2.0, 2.0, 2.0}, 0) == doctest::Approx(0.0));  // floored denominator
    // Permuting equal non-top logits leaves the value unchanged.
    CHECK(dlr_loss({1.0, 5.0, 3.0, 3.0, 2.0}, 0) == doctest::Approx(dlr_loss({1.0, 5.0, 3.0, 2.0, 3.0}, 0)));
    CHECK_THROWS_AS(dlr_loss({1.0, 2.0}, 0), AttackError);
}

TEST_CASE("spsa: zero budget returns the input") {
    auto batch = tiny_batch({0.4, 0.6}, {1, 2, 1, 1});
    AttackSpec spec;
    spec.kind = AttackKind::spsa;
    spec.epsilon = 0.0;
    spec.step_size = 0.01;
    spec.num_steps = 3;
    auto fn = [](const Tensor& x, const std::vector<int>&) {
        Eigen::ArrayXd out(x.dim(0));
        out.setZero();
        for (int64_t i = 0; i < x.numel(); ++i) out[i / (x.numel() / x.dim(0))] += x[i];
        return out;
    };
    auto out = spsa(fn, batch, spec, {0.01, 4});
    CHECK(out.pixels.bit_equal(batch.pixels));
}

TEST_CASE("spsa: estimated gradient signs match the analytic gradient on a quadratic") {
    // One small signed step; the movement direction reveals sign(ghat).
    const int64_t d = 12;
    Tensor x0({1, 3, 2, 2});
    std::vector<double> centers(static_cast<size_t>(d));
    Rng rng(77);
    for (int64_t i = 0; i < d; ++i) {
        x0[i] = 0.5;
        centers[static_cast<size_t>(i)] = rng.uniform(0.1, 0.9);
    }
    auto fn = [&](const Tensor& x, const std::vector<int>&) {
        Eigen::ArrayXd out(1);
        double s = 0.0;
        for (int64_t i = 0; i < d; ++i) {
            const double diff = x[i] - centers[static_cast<size_t>(i)];
            s += diff * diff;
        }
        out[0] = s;
        return out;
    };
    AttackSpec spec;
    spec.kind = AttackKind::spsa;
    spec.epsilon = 0.3;
    spec.step_size = 0.01;
    spec.num_steps = 1;
    spec.random_start = false;
    spec.seed = 5;
    auto out = spsa(fn, {x0, {0}}, spec, {0.005, 512});
    int match = 0, counted = 0;
    for (int64_t i = 0; i < d; ++i) {
        const double analytic = 2.0 * (x0[i] - centers[static_cast<size_t>(i)]);
        const double moved = out.pixels[i] - x0[i];
        if (moved == 0.0) continue;
        ++counted;
        if ((moved > 0) == (analytic > 0)) ++match;
    }
    CHECK(counted > 0);
    CHECK(static_cast<double>(match) / counted >= 0.9);
}

TEST_CASE("non-finite input gradients reject the batch with a diagnostic") {
    // sqrt of a negative shift produces NaN gradients.
    auto bad_loss = [](nn::Tape& t, const nn::NodeRef& images, const std::vector<int>&) {
        (void)t;
        const int64_t b = images->value.dim(0);
        auto flat = nn::reshape(images, {b, images->value.numel() / b});
        return nn::row_sum(nn::sqrt_op(nn::add_scalar(flat, -2.0)));
    };
    auto batch = tiny_batch({0.5, 0.5, 0.5}, {1, 3, 1, 1});
    CHECK_THROWS_AS(fgsm(bad_loss, batch, AttackSpec::fgsm_spec(0.1)), AttackError);
    CHECK_THROWS_AS(pgd(bad_loss, batch, AttackSpec::pgd_spec(0.1, 0.05, 2)), AttackError);
}

TEST_CASE("spsa is a pure function of (batch, spec, seed)") {
    auto m = model::ModelBundle::init(tiny_arch(), 23);
    Rng rng(41);
    auto batch = random_images(2, rng);
    AttackSpec spec;
    spec.kind = AttackKind::spsa;
    spec.epsilon = 8.0 / 255.0;
    spec.step_size = 4.0 / 255.0;
    spec.num_steps = 2;
    spec.seed = 77;
    auto fn = robust_head_loss_values(m, InnerLoss::cross_entropy);
    auto a = spsa(fn, batch, spec, {0.01, 8});
    auto b = spsa(fn, batch, spec, {0.01, 8});
    CHECK(a.pixels.bit_equal(b.pixels));
    CHECK_THROWS_AS(spsa(fn, batch, spec, {0.01, 0}), AttackError);
}

TEST_CASE("sample_attack: deterministic, in range, uniform over step choices") {
    DiversifySpec div;
    {
        Rng a(42), b(42);
        auto s1 = sample_attack(div, a);
        auto s2 = sample_attack(div, b);
        CHECK(s1.epsilon == s2.epsilon);
        CHECK(s1.num_steps == s2.num_steps);
        CHECK(s1.step_size == s2.step_size);
        CHECK(s1.seed == s2.seed);
        CHECK(s1.kind == AttackKind::pgd);
        CHECK(s1.inner_loss == InnerLoss::cross_entropy);
    }
    Rng rng(7);
    std::map<int64_t, int64_t> counts;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        auto s = sample_attack(div, rng);
        CHECK(s.epsilon >= 8.0 / 255.0);
        CHECK(s.epsilon <= 12.0 / 255.0);
        CHECK(s.step_size >= 2.0 / 255.0);
        CHECK(s.step_size <= 4.0 / 255.0);
        bool known = false;
        for (int64_t c : div.steps_choices) known = known || c == s.num_steps;
        CHECK(known);
        ++counts[s.num_steps];
    }
    for (int64_t c : div.steps_choices) {
        const double freq = static_cast<double>(counts[c]) / n;
        CHECK(freq == doctest::Approx(0.25).epsilon(0.08));
    }
}
