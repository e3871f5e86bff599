#pragma once

#include "disro/data/dataset.hpp"
#include "disro/eval/evaluator.hpp"
#include "disro/losses/losses.hpp"
#include "disro/model/checkpoint.hpp"
#include "disro/train/config.hpp"

#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace disro::train {

enum class Variant { disentangle, natural, at };

const char* to_string(Variant v);
Variant variant_from_string(const std::string& s);

/// Tracks the best validation metric; stops after `patience` epochs without
/// strict improvement. Keeps the first-best index on plateaus.
class EarlyStopTracker {
public:
    explicit EarlyStopTracker(int64_t patience) : patience_(patience) {}

    struct Decision {
        bool improved = false;
        bool stop = false;
    };

    Decision update(double metric) {
        ++index_;
        if (metric > best_) {
            best_ = metric;
            best_index_ = index_;
            since_ = 0;
            return {true, false};
        }
        ++since_;
        return {false, since_ >= patience_};
    }

    double best_metric() const { return best_; }
    int64_t best_index() const { return best_index_; }
    int64_t since_best() const { return since_; }
    void restore(double best, int64_t best_index, int64_t since, int64_t index) {
        best_ = best;
        best_index_ = best_index;
        since_ = since;
        index_ = index;
    }
    int64_t index() const { return index_; }

private:
    int64_t patience_;
    double best_ = -std::numeric_limits<double>::infinity();
    int64_t best_index_ = -1;
    int64_t since_ = 0;
    int64_t index_ = -1;
};

/// Newline-delimited loss records, one per optimization step.
class LossLog {
public:
    LossLog() = default;
    explicit LossLog(const std::string& path);
    void append(int64_t step, int64_t epoch, int64_t batch, const losses::LossReport& r);
    bool enabled() const { return static_cast<bool>(os_); }

private:
    std::unique_ptr<std::ofstream> os_;
};

/// Sub-steps of the per-minibatch schedule. Attack generation (a) and the
/// shared forward (b) are implicit in prepare/run.
enum class SubStep { c_kl, d_ce, e_align, f1_disc, f2_adv, g_recon };

struct MinibatchContext {
    attacks::ImageBatch nat;
    attacks::ImageBatch adv;
    attacks::AttackSpec attack;
};

struct TrainResult {
    model::ModelBundle best;
    int64_t best_epoch = -1;
    double best_metric = 0.0;
    int64_t epochs_run = 0;
    model::ModelBundle last;
};

class Trainer {
public:
    Trainer(Variant variant, const TrainConfig& cfg, const model::BackboneConfig& arch,
            const data::SplitDataset* data, std::string out_dir = "");

    model::ModelBundle& bundle() { return bundle_; }
    const TrainConfig& config() const { return cfg_; }

    /// Recorded in checkpoint metadata alongside epoch and seed.
    void set_config_hash(std::string hash) { config_hash_ = std::move(hash); }

    /// Full run with per-epoch validation and early stopping.
    TrainResult run();

    /// Resume from <out_dir>/last.ckpt + .state written by a previous run.
    void resume(const std::string& last_ckpt_path);

    // -- building blocks, exposed for tests ----------------------------------

    /// Step (a): sample a diversified attack and generate adversarial examples
    /// with the current model snapshot.
    MinibatchContext prepare_minibatch(const attacks::ImageBatch& batch, Rng& attack_rng);

    /// Run selected sub-steps (c..g) sequentially on a prepared minibatch.
    losses::LossReport run_substeps(const MinibatchContext& ctx, double lr,
                                    const std::vector<SubStep>& steps);

    /// One disentanglement minibatch: steps a-g (or the accumulated variant).
    losses::LossReport train_minibatch(const attacks::ImageBatch& batch, double lr, Rng& attack_rng);

    /// One baseline minibatch (natural or standard AT).
    losses::LossReport train_minibatch_baseline(const attacks::ImageBatch& batch, double lr,
                                                Rng& attack_rng);

    void train_epoch(int64_t epoch);

    /// Early-stopping metric on the validation split.
    double validation_metric();

    int64_t next_epoch() const { return next_epoch_; }

private:
    void apply_substep(SubStep s, const MinibatchContext& ctx, double lr, losses::LossReport& report,
                       bool defer_updates);
    void optimizer_step(const std::vector<model::Component>& comps, double lr);
    void zero_all_grads();
    void save_train_state(const std::string& path) const;
    void load_train_state(const std::string& path);

    Variant variant_;
    TrainConfig cfg_;
    std::string config_hash_;
    data::SplitDataset const* data_;
    std::string out_dir_;
    model::ModelBundle bundle_;
    model::ModelBundle best_;
    EarlyStopTracker stopper_;
    LossLog log_;
    int64_t next_epoch_ = 0;
    int64_t global_step_ = 0;
};

/// Full six-objective disentanglement training.
TrainResult train_disentangle(const TrainConfig& cfg, const model::BackboneConfig& arch,
                              const data::SplitDataset& data, const std::string& out_dir = "");

/// Clean cross-entropy baseline (undefended model / black-box surrogate).
TrainResult train_natural(const TrainConfig& cfg, const model::BackboneConfig& arch,
                          const data::SplitDataset& data, const std::string& out_dir = "");

/// Standard min-max adversarial training baseline.
TrainResult train_standard_at(const TrainConfig& cfg, const model::BackboneConfig& arch,
                              const data::SplitDataset& data, const std::string& out_dir = "");

}  // namespace disro::train
