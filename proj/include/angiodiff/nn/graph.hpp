#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "angiodiff/nn/params.hpp"
#include "angiodiff/nn/tensor.hpp"

namespace angiodiff::nn {

// Reverse-mode tape. Each op appends one node whose backward closure pulls
// from the node's grad and accumulates (+=) into its parents' grads; walking
// the tape in reverse handles arbitrary DAGs, including reused nodes.
struct Node {
    Tensor val;
    Tensor grad;  // same shape; for parameter leaves this aliases Param::grad
    bool requires_grad = false;
    bool external_grad = false;  // grad owned by the parameter store
    std::function<void(Node&)> backward;
    std::vector<std::shared_ptr<Node>> parents;
};

using NodeP = std::shared_ptr<Node>;

class Graph {
public:
    NodeP constant(Tensor t) {
        auto n = std::make_shared<Node>();
        n->val = std::move(t);
        n->requires_grad = false;
        tape_.push_back(n);
        return n;
    }

    NodeP param(const std::shared_ptr<Param>& p) {
        auto n = std::make_shared<Node>();
        n->val = p->value;  // aliases
        n->grad = p->grad;  // aliases: backward accumulates straight into the store
        n->requires_grad = p->trainable;
        n->external_grad = true;
        tape_.push_back(n);
        return n;
    }

    // an input tensor whose gradient is wanted (finite-difference probes,
    // fusion-gradient checks)
    NodeP input(Tensor t) {
        auto n = std::make_shared<Node>();
        n->val = std::move(t);
        n->grad = Tensor(n->val.shape());
        n->requires_grad = true;
        tape_.push_back(n);
        return n;
    }

    NodeP make(Tensor val, std::vector<NodeP> parents, std::function<void(Node&)> bw) {
        auto n = std::make_shared<Node>();
        n->val = std::move(val);
        for (const auto& p : parents) n->requires_grad |= p->requires_grad;
        n->parents = std::move(parents);
        if (n->requires_grad) {
            n->grad = Tensor(n->val.shape());
            n->backward = std::move(bw);
        }
        tape_.push_back(n);
        return n;
    }

    // Seeds root with ones and runs the tape backwards. Parameter grads are
    // accumulated, not reset: the optimizer owns zeroing them.
    void backward(const NodeP& root) {
        if (root->grad.numel() == 0) throw InvalidArgument("Graph::backward: root has no grad");
        for (auto& n : tape_)
            if (n->requires_grad && !n->external_grad && n->grad.numel() > 0) n->grad.fill(0.0f);
        root->grad.fill(1.0f);
        for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
            Node& n = **it;
            if (n.requires_grad && n.backward) n.backward(n);
        }
    }

    size_t size() const { return tape_.size(); }

private:
    std::vector<NodeP> tape_;
};

}  // namespace angiodiff::nn
