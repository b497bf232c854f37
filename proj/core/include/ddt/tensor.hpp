#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ddt {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Raised when a forward or backward pass produces non-finite values.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into parents' grads.
    std::function<void(Node&)> backward;

    std::vector<double>& grad_buffer();
};

}  // namespace detail

/// Dense row-major float64 tensor. Copies are cheap handles sharing one node;
/// operations in ops.hpp build a reverse-mode graph when any input
/// requires grad and grad mode is enabled.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const;

    std::span<const double> data() const;
    /// Mutable access for leaves only (parameters, optimizer updates).
    std::span<double> mutable_data();
    double item() const;

    bool requires_grad() const;
    void set_requires_grad(bool flag);
    bool is_leaf() const;
    bool has_grad() const;
    std::span<const double> grad() const;
    void zero_grad();

    /// New leaf holding a copy of the values; never participates in the graph.
    Tensor detach() const;
    Tensor clone() const { return detach(); }

    /// Differentiable copy with a new shape of equal element count.
    Tensor reshape(Shape shape) const;

    bool all_finite() const;

    const std::shared_ptr<detail::Node>& node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

private:
    std::shared_ptr<detail::Node> node_;
};

bool grad_enabled();

/// Disables graph construction on this thread for the guard's lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Topologically ordered view of the graph reachable from a root.
class AutodiffGraph {
public:
    explicit AutodiffGraph(const Tensor& root);
    /// Nodes in evaluation order (parents before children).
    const std::vector<detail::Node*>& order() const { return order_; }
    std::size_t size() const { return order_.size(); }

private:
    std::vector<detail::Node*> order_;
};

/// Accumulates dLoss/dLeaf into every requires-grad leaf reachable from a
/// scalar loss. Throws std::invalid_argument for non-scalar losses.
void backward(const Tensor& loss);

/// Builds a result node. When grad mode is off or no parent requires grad the
/// backward function and parent links are dropped.
Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
                   std::function<void(detail::Node&)> backward_fn, const char* op);

}  // namespace ddt
