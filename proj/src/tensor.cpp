#include "das/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace das {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace detail {

void Node::ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

Tensor make_op(const char* op, Shape shape, std::vector<double> data, std::vector<Tensor> parents,
               std::function<void(Node&)> backward_fn) {
    if (shape_numel(shape) != data.size())
        throw ShapeError(std::string(op) + ": data size does not match shape " + shape_str(shape));
    for (double v : data) {
        if (!std::isfinite(v)) throw NumericsError(std::string(op) + ": non-finite output");
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->op = op;
    bool needs = false;
    if (grad_enabled()) {
        for (const auto& p : parents) needs = needs || (p.defined() && p.requires_grad());
    }
    if (needs) {
        node->requires_grad = true;
        for (auto& p : parents) node->parents.push_back(p.node());
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(node));
}

}  // namespace detail

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
    if (shape_numel(shape) != values.size())
        throw ShapeError("tensor: " + std::to_string(values.size()) +
                         " values do not fill shape " + shape_str(shape));
    node_ = std::make_shared<detail::Node>();
    node_->shape = std::move(shape);
    node_->data = std::move(values);
    node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }
Tensor Tensor::ones(Shape shape, bool requires_grad) { return full(std::move(shape), 1.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({}, {value}, requires_grad); }

const Shape& Tensor::shape() const {
    if (!node_) throw ContractError("tensor: undefined");
    return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= rank()) throw ShapeError("tensor: axis out of range");
    return shape()[axis];
}

std::size_t Tensor::numel() const { return node_ ? node_->data.size() : 0; }

std::span<const double> Tensor::data() const {
    if (!node_) throw ContractError("tensor: undefined");
    return node_->data;
}

std::span<double> Tensor::mutable_data() {
    if (!node_) throw ContractError("tensor: undefined");
    if (!node_->is_leaf()) throw ContractError("tensor: only leaves are mutable");
    return node_->data;
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item: tensor has " + std::to_string(numel()) + " elements");
    return node_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
    const auto& s = shape();
    if (index.size() != s.size()) throw ShapeError("at: rank mismatch");
    std::size_t flat = 0;
    std::size_t k = 0;
    for (auto i : index) {
        if (i >= s[k]) throw ShapeError("at: index out of range");
        flat = flat * s[k] + i;
        ++k;
    }
    return node_->data[flat];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
    if (!node_) throw ContractError("tensor: undefined");
    if (!node_->is_leaf()) throw ContractError("set_requires_grad: only valid on leaves");
    node_->requires_grad = on;
    return *this;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
    if (!has_grad()) throw ContractError("tensor: no gradient recorded");
    return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
    if (!node_) throw ContractError("tensor: undefined");
    node_->ensure_grad();
    return node_->grad;
}

void Tensor::zero_grad() {
    if (node_ && !node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

bool Tensor::is_leaf() const { return !node_ || node_->is_leaf(); }

const char* Tensor::op_name() const { return node_ ? node_->op : "undefined"; }

Tensor Tensor::detach() const { return Tensor(shape(), node_->data, false); }

Graph Graph::build(const Tensor& root) {
    Graph g;
    if (!root.defined() || !root.requires_grad()) return g;
    std::unordered_set<detail::Node*> seen;
    // Iterative post-order DFS; deep chains must not exhaust the call stack.
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::Node* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            g.order.push_back(node);
            stack.pop_back();
        }
    }
    return g;
}

void Tensor::backward() const {
    if (!node_) throw ContractError("backward: undefined tensor");
    if (numel() != 1) throw ContractError("backward: loss must be scalar, got shape " + shape_str(shape()));
    if (!node_->requires_grad) throw ContractError("backward: loss does not require grad");

    Graph graph = Graph::build(*this);
    for (auto* n : graph.order) {
        if (!n->is_leaf()) n->grad.assign(n->data.size(), 0.0);
    }
    node_->ensure_grad();
    node_->grad[0] += 1.0;

    for (auto it = graph.order.rbegin(); it != graph.order.rend(); ++it) {
        detail::Node* n = *it;
        if (n->is_leaf()) continue;
        for (auto& p : n->parents) {
            if (p->requires_grad) p->ensure_grad();
        }
        n->backward_fn(*n);
        if (n != node_.get()) {
            n->grad.clear();
            n->grad.shrink_to_fit();
        }
    }
}

}  // namespace das
