#include "disro/train/config.hpp"

#include <cmath>

namespace disro::train {

void TrainConfig::validate() const {
    if (epochs < 1) throw TrainError("TrainConfig: epochs must be >= 1");
    if (batch_size < 1) throw TrainError("TrainConfig: batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw TrainError("TrainConfig: learning_rate must be > 0");
    for (size_t i = 1; i < lr_decay_epochs.size(); ++i)
        if (lr_decay_epochs[i] <= lr_decay_epochs[i - 1])
            throw TrainError("TrainConfig: lr_decay_epochs must be strictly increasing");
    if (!(lr_decay_factor > 0.0)) throw TrainError("TrainConfig: lr_decay_factor must be > 0");
    if (momentum < 0.0 || weight_decay < 0.0)
        throw TrainError("TrainConfig: momentum/weight_decay must be >= 0");
    if (early_stopping.patience < 1) throw TrainError("TrainConfig: patience must be >= 1");
    if (early_stopping.metric != "robust_acc" && early_stopping.metric != "clean_acc")
        throw TrainError("TrainConfig: unknown early-stopping metric " + early_stopping.metric);
    diversify.validate();
    at_attack.validate();
    loss_weights.validate();
}

double TrainConfig::component_scale(const std::string& component) const {
    auto it = component_lr_scale.find(component);
    if (it != component_lr_scale.end()) return it->second;
    if (component == "extractor" || component == "enc_robust" || component == "classifier") return 1.0;
    return 0.1;
}

double step_lr(int64_t epoch, const TrainConfig& config) {
    double lr = config.learning_rate;
    for (int64_t d : config.lr_decay_epochs)
        if (epoch >= d) lr *= config.lr_decay_factor;
    return lr;
}

}  // namespace disro::train
