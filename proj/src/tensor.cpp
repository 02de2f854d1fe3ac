#include "separator/tensor.hpp"

#include <unordered_set>

namespace separator::ad {

size_t numel(const Shape& s) {
    size_t n = 1;
    for (size_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += " x ";
        out += std::to_string(s[i]);
    }
    out += "]";
    return out;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value.assign(numel(shape), 0.0);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
    if (numel(shape) != values.size())
        throw shape_error("Tensor::from_values: shape " + shape_str(shape) +
                          " does not match " + std::to_string(values.size()) + " values");
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v) {
    return from_values({1}, {v});
}

double Tensor::item() const {
    if (size() != 1)
        throw shape_error("Tensor::item: tensor " + shape_str(shape()) + " is not scalar");
    return n_->value[0];
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

no_grad::no_grad() : prev_(g_grad_enabled) { g_grad_enabled = false; }
no_grad::~no_grad() { g_grad_enabled = prev_; }

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1)
        throw shape_error("backward: loss must be a defined scalar tensor");
    Node* root = loss.node().get();
    if (!root->requires_grad) return;

    // Iterative post-order DFS; ordering depends only on graph structure.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next_child] = stack.back();
        if (next_child < node->parents.size()) {
            Node* p = node->parents[next_child++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop) {
            n->ensure_grad();
            n->backprop(*n);
        }
    }
}

}  // namespace separator::ad
