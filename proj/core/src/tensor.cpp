#include "ddt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace ddt {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) {
        n *= d;
    }
    return n;
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "," : "") << shape[i];
    }
    os << ']';
    return os.str();
}

std::vector<double>& detail::Node::grad_buffer() {
    if (grad.empty()) {
        grad.assign(value.size(), 0.0);
    }
    return grad;
}

static std::shared_ptr<detail::Node> make_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
    for (auto d : shape) {
        if (d == 0) {
            throw std::invalid_argument("tensor dimensions must be positive, got " + shape_string(shape));
        }
    }
    if (shape_numel(shape) != values.size()) {
        throw std::invalid_argument("tensor data length " + std::to_string(values.size()) +
                                    " does not match shape " + shape_string(shape));
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return node;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto n = shape_numel(shape);
    return Tensor(make_leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    auto n = shape_numel(shape);
    return Tensor(make_leaf(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    return Tensor(make_leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return Tensor(make_leaf({1}, {value}, requires_grad));
}

const Shape& Tensor::shape() const {
    if (!node_) {
        throw std::logic_error("use of undefined tensor");
    }
    return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
    const auto& s = shape();
    if (axis >= s.size()) {
        throw std::out_of_range("axis " + std::to_string(axis) + " out of range for " + shape_string(s));
    }
    return s[axis];
}

std::size_t Tensor::numel() const { return node_ ? node_->value.size() : 0; }

std::span<const double> Tensor::data() const {
    if (!node_) {
        throw std::logic_error("use of undefined tensor");
    }
    return node_->value;
}

std::span<double> Tensor::mutable_data() {
    if (!node_) {
        throw std::logic_error("use of undefined tensor");
    }
    if (!node_->parents.empty()) {
        throw std::logic_error("mutable_data() on a non-leaf tensor");
    }
    return node_->value;
}

double Tensor::item() const {
    if (numel() != 1) {
        throw std::invalid_argument("item() requires a single-element tensor, got " + shape_string(shape()));
    }
    return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
    if (!is_leaf()) {
        throw std::logic_error("set_requires_grad() on a non-leaf tensor");
    }
    node_->requires_grad = flag;
}

bool Tensor::is_leaf() const { return node_ && node_->parents.empty(); }

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
    if (!node_) {
        throw std::logic_error("use of undefined tensor");
    }
    return node_->grad;
}

void Tensor::zero_grad() {
    if (node_) {
        node_->grad.clear();
    }
}

Tensor Tensor::detach() const { return Tensor(make_leaf(shape(), node_->value, false)); }

Tensor Tensor::reshape(Shape new_shape) const {
    if (shape_numel(new_shape) != numel()) {
        throw std::invalid_argument("reshape " + shape_string(shape()) + " -> " + shape_string(new_shape));
    }
    return make_result(std::move(new_shape), node_->value, {*this},
                       [](detail::Node& self) {
                           auto& g = self.parents[0]->grad_buffer();
                           for (std::size_t i = 0; i < g.size(); ++i) {
                               g[i] += self.grad[i];
                           }
                       },
                       "reshape");
}

bool Tensor::all_finite() const {
    const auto d = data();
    return std::all_of(d.begin(), d.end(), [](double v) { return std::isfinite(v); });
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
                   std::function<void(detail::Node&)> backward_fn, const char* op) {
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->op = op;
    bool needs = false;
    if (g_grad_enabled) {
        for (const auto& p : parents) {
            needs = needs || p.requires_grad();
        }
    }
    if (needs) {
        node->requires_grad = true;
        node->parents.reserve(parents.size());
        for (const auto& p : parents) {
            node->parents.push_back(p.node());
        }
        node->backward = std::move(backward_fn);
    }
    return Tensor(std::move(node));
}

AutodiffGraph::AutodiffGraph(const Tensor& root) {
    if (!root.defined()) {
        throw std::invalid_argument("graph root is undefined");
    }
    // Iterative post-order DFS; only nodes that require grad are recorded.
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    auto* start = root.node().get();
    if (!start->requires_grad) {
        return;
    }
    stack.emplace_back(start, 0);
    visited.insert(start);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            auto* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) {
                stack.emplace_back(parent, 0);
            }
        } else {
            order_.push_back(node);
            stack.pop_back();
        }
    }
}

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw std::invalid_argument("backward() requires a scalar loss");
    }
    if (!loss.requires_grad()) {
        return;
    }
    AutodiffGraph graph(loss);
    auto& seed = loss.node()->grad_buffer();
    seed[0] += 1.0;
    const auto& order = graph.order();
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* node = *it;
        if (node->backward && !node->grad.empty()) {
            node->backward(*node);
        }
    }
    // Interior gradients are transient; leaves keep theirs.
    for (auto* node : order) {
        if (!node->parents.empty()) {
            node->grad.clear();
            node->grad.shrink_to_fit();
        }
    }
}

}  // namespace ddt
