#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <memory>
#include <string>
#include <vector>

namespace separator::ad {

using Shape = std::vector<size_t>;

size_t numel(const Shape& s);
std::string shape_str(const Shape& s);

// Raised by ops on non-conforming inputs; message names the op and the shapes.
struct shape_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One record of the define-by-run graph. `backward` pulls this node's grad
// into the parents' grads; leaves have no parents.
struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;   // lazily sized at backward time
    bool requires_grad{false};
    const char* op{"leaf"};
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backprop;

    size_t size() const { return value.size(); }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
    void zero_grad() {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);
    }
};

// Value-semantic handle to a graph node.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(NodePtr n) : n_(std::move(n)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor from_values(Shape shape, std::vector<double> values,
                              bool requires_grad = false);
    static Tensor scalar(double v);

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const { return n_->shape; }
    size_t size() const { return n_->value.size(); }
    size_t rank() const { return n_->shape.size(); }

    std::vector<double>& values() { return n_->value; }
    const std::vector<double>& values() const { return n_->value; }
    std::vector<double>& grad() { n_->ensure_grad(); return n_->grad; }
    const std::vector<double>& grad_ref() const { return n_->grad; }

    double item() const;

    bool requires_grad() const { return n_->requires_grad; }
    void set_requires_grad(bool b) { n_->requires_grad = b; }
    void zero_grad() { n_->zero_grad(); }

    NodePtr node() const { return n_; }

private:
    NodePtr n_;
};

// While a no_grad guard is alive, ops do not record parents/backward
// closures; outputs are plain values. Used by evaluation and generation.
bool grad_enabled();
struct no_grad {
    no_grad();
    ~no_grad();
    no_grad(const no_grad&) = delete;
    no_grad& operator=(const no_grad&) = delete;
private:
    bool prev_;
};

// Reverse-mode sweep from a scalar loss. Seeds d(loss)/d(loss) = 1 and
// visits each reachable node exactly once in reverse topological order.
// Gradient accumulation is additive; callers zero grads explicitly.
void backward(const Tensor& loss);

}  // namespace separator::ad
