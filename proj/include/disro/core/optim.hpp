#pragma once

#include "disro/core/graph.hpp"

#include <vector>

namespace disro::nn {

/// SGD with momentum and L2 weight decay:
///   v <- momentum * v + (g + wd * p);  p <- p - lr * v
struct SgdStep {
    double lr = 0.1;
    double momentum = 0.9;
    double weight_decay = 5e-4;

    void apply(Param& p) const {
        p.momentum.array() = momentum * p.momentum.array() + (p.grad.array() + weight_decay * p.value.array());
        p.value.array() -= lr * p.momentum.array();
    }

    void apply(const std::vector<Param*>& params) const {
        for (Param* p : params) apply(*p);
    }
};

inline void zero_grads(const std::vector<Param*>& params) {
    for (Param* p : params) p->zero_grad();
}

}  // namespace disro::nn
