#include "disro/train/trainer.hpp"

#include "disro/core/optim.hpp"
#include "disro/core/serialize.hpp"

#include <cmath>
#include <filesystem>
#include <map>

namespace disro::train {

using namespace disro::nn;
using model::Component;

const char* to_string(Variant v) {
    switch (v) {
        case Variant::disentangle: return "disentangle";
        case Variant::natural: return "natural";
        case Variant::at: return "at";
    }
    return "?";
}

Variant variant_from_string(const std::string& s) {
    if (s == "disentangle") return Variant::disentangle;
    if (s == "natural") return Variant::natural;
    if (s == "at") return Variant::at;
    throw TrainError("unknown training variant: " + s);
}

LossLog::LossLog(const std::string& path) {
    if (path.empty()) return;
    os_ = std::make_unique<std::ofstream>(path, std::ios::app);
    if (!*os_) throw TrainError("cannot open loss log: " + path);
}

void LossLog::append(int64_t step, int64_t epoch, int64_t batch, const losses::LossReport& r) {
    if (!os_) return;
    char buf[512];
    snprintf(buf, sizeof(buf),
             "{\"step\":%lld,\"epoch\":%lld,\"batch\":%lld,\"dist\":%.10g,\"ce\":%.10g,"
             "\"bce\":%.10g,\"adv\":%.10g,\"res\":%.10g,\"kl\":%.10g,\"total\":%.10g}\n",
             static_cast<long long>(step), static_cast<long long>(epoch),
             static_cast<long long>(batch), r.dist, r.ce, r.bce, r.adv, r.res, r.kl, r.total);
    *os_ << buf;
    os_->flush();
}

Trainer::Trainer(Variant variant, const TrainConfig& cfg, const model::BackboneConfig& arch,
                 const data::SplitDataset* data, std::string out_dir)
    : variant_(variant),
      cfg_(cfg),
      data_(data),
      out_dir_(std::move(out_dir)),
      bundle_(model::ModelBundle::init(arch, cfg.seed)),
      best_(bundle_),
      stopper_(cfg.early_stopping.patience) {
    cfg_.validate();
    bundle_.variant = to_string(variant_);
    best_.variant = bundle_.variant;
    if (cfg_.train_inner_loss == attacks::InnerLoss::dlr && arch.num_classes < 3)
        throw TrainError("dlr training variant needs at least 3 classes");
    if (!out_dir_.empty()) {
        std::filesystem::create_directories(out_dir_);
        log_ = LossLog(out_dir_ + "/losses.ndjson");
    }
}

void Trainer::zero_all_grads() {
    bundle_.visit_all([](Component, const std::string&, Param& p) { p.zero_grad(); });
}

void Trainer::optimizer_step(const std::vector<Component>& comps, double lr) {
    for (Component c : comps) {
        const double scaled = lr * cfg_.component_scale(model::to_string(c));
        SgdStep step{scaled, cfg_.momentum, cfg_.weight_decay};
        for (Param* p : bundle_.params_of(c)) step.apply(*p);
    }
}

MinibatchContext Trainer::prepare_minibatch(const attacks::ImageBatch& batch, Rng& attack_rng) {
    attacks::AttackSpec spec = attacks::sample_attack(cfg_.diversify, attack_rng);
    spec.inner_loss = cfg_.train_inner_loss;
    auto adv = attacks::pgd(attacks::robust_head_loss(bundle_, spec.inner_loss), batch, spec);
    return {batch, std::move(adv), spec};
}

namespace {

void check_finite(double v, const char* step_label, const char* loss_name) {
    if (!std::isfinite(v))
        throw TrainError(std::string("non-finite loss at step (") + step_label + "): " + loss_name);
}

}  // namespace

void Trainer::apply_substep(SubStep s, const MinibatchContext& ctx, double lr,
                            losses::LossReport& report, bool defer_updates) {
    const auto& w = cfg_.loss_weights;
    const auto& labels = ctx.nat.labels;
    if (!defer_updates) zero_all_grads();

    switch (s) {
        case SubStep::c_kl: {
            if (w.kl == 0.0) return;
            Tape t;
            auto f_nat = model::extract(t, bundle_, t.leaf(ctx.nat.pixels), true);
            auto f_adv = model::extract(t, bundle_, t.leaf(ctx.adv.pixels), true);
            auto zn = model::encode(t, bundle_, f_nat);
            auto za = model::encode(t, bundle_, f_adv);
            NodeRef kl;
            if (cfg_.kl_plain_minimization)
                kl = scale(add(losses::pairwise_kl_raw(zn.robust, zn.non_robust, zn.domain),
                               losses::pairwise_kl_raw(za.robust, za.non_robust, za.domain)),
                           0.5);
            else
                kl = scale(add(losses::pairwise_kl(zn.robust, zn.non_robust, zn.domain),
                               losses::pairwise_kl(za.robust, za.non_robust, za.domain)),
                           0.5);
            report.kl = kl->value[0];
            check_finite(report.kl, "c", "pairwise_kl");
            t.backward(scale(kl, w.kl));
            if (!defer_updates)
                optimizer_step({Component::enc_robust, Component::enc_nonrobust, Component::enc_domain},
                               lr);
            break;
        }
        case SubStep::d_ce: {
            if (w.ce == 0.0) return;
            Tape t;
            const bool detach_ext = !cfg_.ce_updates_extractor;
            auto f_nat = model::extract(t, bundle_, t.leaf(ctx.nat.pixels), detach_ext);
            auto f_adv = model::extract(t, bundle_, t.leaf(ctx.adv.pixels), detach_ext);
            losses::BranchLogits logits;
            logits.robust_nat = model::classify(t, bundle_, model::encode_one(t, bundle_.enc_robust, f_nat));
            logits.nonrobust_nat =
                model::classify(t, bundle_, model::encode_one(t, bundle_.enc_nonrobust, f_nat));
            logits.robust_adv = model::classify(t, bundle_, model::encode_one(t, bundle_.enc_robust, f_adv));
            logits.nonrobust_adv =
                model::classify(t, bundle_, model::nr_branch_reversed(t, bundle_, f_adv));
            auto ce = losses::branch_cross_entropy(logits, labels);
            report.ce = ce->value[0];
            check_finite(report.ce, "d", "branch_cross_entropy");
            t.backward(scale(ce, w.ce));
            std::vector<Component> comps = {Component::enc_robust, Component::enc_nonrobust,
                                            Component::classifier};
            if (cfg_.ce_updates_extractor) comps.push_back(Component::extractor);
            if (!defer_updates) optimizer_step(comps, lr);
            break;
        }
        case SubStep::e_align: {
            if (w.dist == 0.0) return;
            Tape t;
            auto f_nat = model::extract(t, bundle_, t.leaf(ctx.nat.pixels));
            auto f_adv = model::extract(t, bundle_, t.leaf(ctx.adv.pixels));
            auto z_r = model::encode_one(t, bundle_.enc_robust, f_nat);
            auto z_r_adv = model::encode_one(t, bundle_.enc_robust, f_adv);
            auto dist = losses::angular_distance(z_r, z_r_adv, &report.flags);
            report.dist = dist->value[0];
            check_finite(report.dist, "e", "angular_distance");
            t.backward(scale(dist, w.dist));
            if (!defer_updates) optimizer_step({Component::extractor, Component::enc_robust}, lr);
            break;
        }
        case SubStep::f1_disc: {
            if (w.bce == 0.0) return;
            Tape t;
            // Latents are constants here; only the discriminator learns.
            auto tn = model::encode_values(bundle_, ctx.nat.pixels);
            auto ta = model::encode_values(bundle_, ctx.adv.pixels);
            std::vector<NodeRef> nat = {
                model::discriminate(t, bundle_, t.leaf(tn.robust)),
                model::discriminate(t, bundle_, t.leaf(tn.non_robust)),
                model::discriminate(t, bundle_, t.leaf(tn.domain)),
            };
            std::vector<NodeRef> adv = {
                model::discriminate(t, bundle_, t.leaf(ta.robust)),
                model::discriminate(t, bundle_, t.leaf(ta.non_robust)),
                model::discriminate(t, bundle_, t.leaf(ta.domain)),
            };
            auto bce = losses::discriminator_bce(nat, adv);
            report.bce = bce->value[0];
            check_finite(report.bce, "f", "discriminator_bce");
            t.backward(scale(bce, w.bce));
            if (!defer_updates) optimizer_step({Component::discriminator}, lr);
            break;
        }
        case SubStep::f2_adv: {
            if (w.adv == 0.0) return;
            Tape t;
            auto f_nat = model::extract(t, bundle_, t.leaf(ctx.nat.pixels));
            auto f_adv = model::extract(t, bundle_, t.leaf(ctx.adv.pixels));
            auto zn = model::encode(t, bundle_, f_nat);
            auto za = model::encode(t, bundle_, f_adv);
            // Discriminator frozen for this half.
            auto adv_losses = losses::encoder_adversarial_losses(
                model::discriminate(t, bundle_, zn.robust, true),
                model::discriminate(t, bundle_, zn.non_robust, true),
                model::discriminate(t, bundle_, za.robust, true),
                model::discriminate(t, bundle_, za.non_robust, true),
                model::discriminate(t, bundle_, zn.domain, true),
                model::discriminate(t, bundle_, za.domain, true));
            auto total = add(adv_losses.r_nr, adv_losses.ds);
            report.adv = total->value[0];
            check_finite(report.adv, "f", "encoder_adversarial");
            t.backward(scale(total, w.adv));
            if (!defer_updates)
                optimizer_step({Component::extractor, Component::enc_robust, Component::enc_nonrobust,
                                Component::enc_domain},
                               lr);
            break;
        }
        case SubStep::g_recon: {
            if (w.res == 0.0) return;
            Tape t;
            auto recon_of = [&](const Tensor& pixels) {
                auto f = detach(model::extract(t, bundle_, t.leaf(pixels), true));
                auto map_r = model::encode_map(t, bundle_.enc_robust, f);
                auto map_nr = model::encode_map(t, bundle_.enc_nonrobust, f);
                auto map_ds = model::encode_map(t, bundle_.enc_domain, f);
                return losses::reconstruction_l1(model::reconstruct(t, bundle_, map_r, map_nr, map_ds),
                                                 f);
            };
            auto res = scale(add(recon_of(ctx.nat.pixels), recon_of(ctx.adv.pixels)), 0.5);
            report.res = res->value[0];
            check_finite(report.res, "g", "reconstruction_l1");
            t.backward(scale(res, w.res));
            if (!defer_updates)
                optimizer_step({Component::enc_robust, Component::enc_nonrobust, Component::enc_domain,
                                Component::reconstructor},
                               lr);
            break;
        }
    }
}

losses::LossReport Trainer::run_substeps(const MinibatchContext& ctx, double lr,
                                         const std::vector<SubStep>& steps) {
    losses::LossReport report;
    if (cfg_.accumulate_substeps) {
        zero_all_grads();
        for (SubStep s : steps) apply_substep(s, ctx, lr, report, true);
        optimizer_step({Component::extractor, Component::enc_robust, Component::enc_nonrobust,
                        Component::enc_domain, Component::classifier, Component::discriminator,
                        Component::reconstructor},
                       lr);
    } else {
        for (SubStep s : steps) apply_substep(s, ctx, lr, report, false);
    }
    return losses::compose(report, cfg_.loss_weights);
}

losses::LossReport Trainer::train_minibatch(const attacks::ImageBatch& batch, double lr,
                                            Rng& attack_rng) {
    auto ctx = prepare_minibatch(batch, attack_rng);
    return run_substeps(ctx, lr,
                        {SubStep::c_kl, SubStep::d_ce, SubStep::e_align, SubStep::f1_disc,
                         SubStep::f2_adv, SubStep::g_recon});
}

losses::LossReport Trainer::train_minibatch_baseline(const attacks::ImageBatch& batch, double lr,
                                                     Rng& attack_rng) {
    attacks::ImageBatch input = batch;
    if (variant_ == Variant::at) {
        attacks::AttackSpec spec = cfg_.at_attack;
        spec.seed = attack_rng.derive_seed();
        input = attacks::run_attack(bundle_, batch, spec);
    }
    zero_all_grads();
    Tape t;
    auto f = model::extract(t, bundle_, t.leaf(input.pixels));
    auto logits = model::classify(t, bundle_, model::encode_one(t, bundle_.enc_robust, f));
    auto ce = mean_all(softmax_ce(logits, input.labels));
    losses::LossReport report;
    report.ce = ce->value[0];
    check_finite(report.ce, variant_ == Variant::at ? "at" : "natural", "cross_entropy");
    t.backward(ce);
    optimizer_step({Component::extractor, Component::enc_robust, Component::classifier}, lr);
    report.total = report.ce;
    return report;
}

void Trainer::train_epoch(int64_t epoch) {
    Rng shuffle_rng(cfg_.seed, "shuffle-epoch-" + std::to_string(epoch));
    Rng attack_rng(cfg_.seed, "attack-epoch-" + std::to_string(epoch));
    const double lr = step_lr(epoch, cfg_);
    const auto batches = data::epoch_batches(data_->train.size(), cfg_.batch_size, shuffle_rng);
    int64_t batch_idx = 0;
    for (const auto& idx : batches) {
        auto batch = data_->train.batch(idx);
        losses::LossReport report = variant_ == Variant::disentangle
                                        ? train_minibatch(batch, lr, attack_rng)
                                        : train_minibatch_baseline(batch, lr, attack_rng);
        log_.append(global_step_++, epoch, batch_idx++, report);
    }
}

double Trainer::validation_metric() {
    if (data_->val.size() == 0)
        throw TrainError("early stopping requires a non-empty validation split");
    if (cfg_.early_stopping.metric == "clean_acc") return eval::clean_accuracy(bundle_, data_->val);
    return eval::robust_accuracy(bundle_, data_->val, cfg_.early_stopping.eval_attack);
}

TrainResult Trainer::run() {
    int64_t epoch = next_epoch_;
    for (; epoch < cfg_.epochs; ++epoch) {
        train_epoch(epoch);
        const double metric = validation_metric();
        const auto decision = stopper_.update(metric);
        if (decision.improved) {
            best_ = bundle_;
            if (!out_dir_.empty()) {
                model::CheckpointMeta meta{epoch, cfg_.seed, config_hash_, bundle_.variant};
                model::save_checkpoint(out_dir_ + "/best.ckpt", best_, meta);
            }
        }
        next_epoch_ = epoch + 1;
        if (!out_dir_.empty()) {
            model::CheckpointMeta meta{epoch, cfg_.seed, config_hash_, bundle_.variant};
            model::save_checkpoint(out_dir_ + "/last.ckpt", bundle_, meta);
            save_train_state(out_dir_ + "/last.ckpt.state");
            if (cfg_.checkpoint_every > 0 && (epoch + 1) % cfg_.checkpoint_every == 0) {
                char name[64];
                snprintf(name, sizeof(name), "/epoch_%04lld.ckpt", static_cast<long long>(epoch));
                model::save_checkpoint(out_dir_ + name, bundle_, meta);
            }
        }
        if (decision.stop) {
            ++epoch;
            break;
        }
    }
    TrainResult result{best_, stopper_.best_index(), stopper_.best_metric(), epoch, bundle_};
    return result;
}

void Trainer::save_train_state(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw TrainError("cannot write train state: " + path);
    io::write_string(os, "DISRO1-TRAINSTATE");
    io::write_string(os, to_string(variant_));
    io::write_u64(os, cfg_.seed);
    io::write_i64(os, next_epoch_);
    io::write_i64(os, global_step_);
    io::write_f64(os, stopper_.best_metric());
    io::write_i64(os, stopper_.best_index());
    io::write_i64(os, stopper_.since_best());
    io::write_i64(os, stopper_.index());
    uint32_t count = 0;
    auto& self = const_cast<Trainer&>(*this);
    self.bundle_.visit_all([&](Component, const std::string&, Param&) { ++count; });
    io::write_u32(os, count);
    self.bundle_.visit_all([&](Component c, const std::string& name, Param& p) {
        io::write_string(os, std::string(model::to_string(c)) + "/" + name);
        io::write_tensor(os, p.momentum);
    });
}

void Trainer::load_train_state(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw TrainError("cannot open train state: " + path);
    if (io::read_string(is) != "DISRO1-TRAINSTATE") throw TrainError("bad train state file: " + path);
    const std::string variant = io::read_string(is);
    if (variant != to_string(variant_))
        throw TrainError("train state variant mismatch: " + variant);
    const uint64_t seed = io::read_u64(is);
    if (seed != cfg_.seed) throw TrainError("train state seed mismatch");
    next_epoch_ = io::read_i64(is);
    global_step_ = io::read_i64(is);
    const double best = io::read_f64(is);
    const int64_t best_index = io::read_i64(is);
    const int64_t since = io::read_i64(is);
    const int64_t index = io::read_i64(is);
    stopper_.restore(best, best_index, since, index);
    std::map<std::string, Param*> by_name;
    bundle_.visit_all([&](Component c, const std::string& name, Param& p) {
        by_name[std::string(model::to_string(c)) + "/" + name] = &p;
    });
    const uint32_t count = io::read_u32(is);
    for (uint32_t i = 0; i < count; ++i) {
        const std::string name = io::read_string(is);
        Tensor t = io::read_tensor(is);
        auto it = by_name.find(name);
        if (it == by_name.end()) throw TrainError("train state has unknown parameter: " + name);
        it->second->momentum = std::move(t);
    }
}

void Trainer::resume(const std::string& last_ckpt_path) {
    auto loaded = model::load_checkpoint(last_ckpt_path);
    if (loaded.bundle.variant != to_string(variant_))
        throw TrainError("checkpoint variant mismatch: " + loaded.bundle.variant);
    bundle_ = std::move(loaded.bundle);
    load_train_state(last_ckpt_path + ".state");
    const auto dir = std::filesystem::path(last_ckpt_path).parent_path();
    const auto best_path = dir / "best.ckpt";
    if (std::filesystem::exists(best_path)) best_ = model::load_checkpoint(best_path.string()).bundle;
}

TrainResult train_disentangle(const TrainConfig& cfg, const model::BackboneConfig& arch,
                              const data::SplitDataset& data, const std::string& out_dir) {
    Trainer t(Variant::disentangle, cfg, arch, &data, out_dir);
    return t.run();
}

TrainResult train_natural(const TrainConfig& cfg, const model::BackboneConfig& arch,
                          const data::SplitDataset& data, const std::string& out_dir) {
    Trainer t(Variant::natural, cfg, arch, &data, out_dir);
    return t.run();
}

TrainResult train_standard_at(const TrainConfig& cfg, const model::BackboneConfig& arch,
                              const data::SplitDataset& data, const std::string& out_dir) {
    Trainer t(Variant::at, cfg, arch, &data, out_dir);
    return t.run();
}

}  // namespace disro::train
