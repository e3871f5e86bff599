#pragma once

#include "disro/core/tensor.hpp"

#include <functional>
#include <memory>
#include <utility>
#include <vector>

namespace disro::nn {

/// One learnable tensor: value, gradient accumulator and SGD momentum buffer.
struct Param {
    Tensor value;
    Tensor grad;
    Tensor momentum;

    explicit Param(Tensor v) : value(std::move(v)) {
        grad = Tensor::zeros(value.shape());
        momentum = Tensor::zeros(value.shape());
    }
    Param() = default;

    void zero_grad() { grad.array().setZero(); }
};

class Tape;

struct Node {
    Tensor value;
    Tensor grad;  // lazily allocated on first accumulation
    bool requires_grad = false;
    std::function<void()> backward_fn;  // captures parent NodeRefs and saved context
    Tape* tape = nullptr;

    void ensure_grad() {
        if (grad.empty()) grad = Tensor::zeros(value.shape());
    }
    bool has_grad() const { return !grad.empty(); }
};

using NodeRef = std::shared_ptr<Node>;

/// Define-by-run computation tape. Nodes are recorded in creation order,
/// which is a valid topological order; backward() walks it in reverse.
/// One tape per forward/backward scope; destroying it frees the graph.
class Tape {
public:
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool grad_enabled() const { return grad_enabled_; }

    NodeRef leaf(Tensor v, bool requires_grad = false) {
        auto n = std::make_shared<Node>();
        n->value = std::move(v);
        n->requires_grad = requires_grad && grad_enabled_;
        n->tape = this;
        nodes_.push_back(n);
        return n;
    }

    /// Leaf bound to a Param; backward() flushes the node gradient into p.grad.
    /// A detached param participates as a constant.
    NodeRef param(Param& p, bool detached = false) {
        auto n = leaf(p.value, !detached);
        if (!detached && grad_enabled_) bindings_.emplace_back(n, &p);
        return n;
    }

    NodeRef record(Tensor value, bool requires_grad, std::function<void()> backward_fn) {
        auto n = std::make_shared<Node>();
        n->value = std::move(value);
        n->requires_grad = requires_grad && grad_enabled_;
        n->tape = this;
        if (n->requires_grad) n->backward_fn = std::move(backward_fn);
        nodes_.push_back(n);
        return n;
    }

    /// Backpropagate from a scalar loss node and flush param gradients.
    /// May be called more than once per tape; gradients accumulate.
    void backward(const NodeRef& loss) {
        if (!grad_enabled_) throw std::logic_error("Tape::backward: tape recorded without gradients");
        if (loss->value.numel() != 1) throw std::invalid_argument("Tape::backward: loss must be scalar");
        loss->ensure_grad();
        loss->grad.array()[0] += 1.0;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            Node& n = **it;
            if (n.requires_grad && n.has_grad() && n.backward_fn) n.backward_fn();
        }
        flush_param_grads();
    }

    void flush_param_grads() {
        for (auto& [node, param] : bindings_) {
            if (node->has_grad()) {
                param->grad.array() += node->grad.array();
                node->grad = Tensor();  // avoid double-flush on repeated backward
            }
        }
    }

    size_t size() const { return nodes_.size(); }

private:
    std::vector<NodeRef> nodes_;
    std::vector<std::pair<NodeRef, Param*>> bindings_;
    bool grad_enabled_ = true;
};

/// Accumulate g into a parent node's gradient if it wants gradients.
inline void accumulate(const NodeRef& parent, const Eigen::ArrayXd& g) {
    if (!parent->requires_grad) return;
    parent->ensure_grad();
    parent->grad.array() += g;
}

}  // namespace disro::nn
