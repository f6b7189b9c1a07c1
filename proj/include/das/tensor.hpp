#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace das {

using Shape = std::vector<std::size_t>;

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericsError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DomainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until a backward pass reaches the node
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this->grad and accumulates into parents' grads.
    std::function<void(Node&)> backward_fn;

    bool is_leaf() const { return parents.empty(); }
    void ensure_grad();
};

// Builds the output of a differentiable op. The backward closure is only
// retained when grad mode is on and some parent requires a gradient.
Tensor make_op(const char* op, Shape shape, std::vector<double> data,
               std::vector<Tensor> parents, std::function<void(Node&)> backward_fn);

}  // namespace detail

/// Dense row-major array of doubles with an optional gradient slot.
///
/// Copies share storage (handle semantics). Values are immutable once an op
/// has produced them; only leaves expose mutable data, for optimizers and
/// finite-difference probes.
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor ones(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const;

    std::span<const double> data() const;
    std::span<double> mutable_data();
    double item() const;
    double at(std::initializer_list<std::size_t> index) const;

    bool requires_grad() const;
    Tensor& set_requires_grad(bool on);
    bool has_grad() const;
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();
    bool is_leaf() const;
    const char* op_name() const;

    /// Reverse-mode sweep from a scalar. Leaf grads accumulate across calls.
    void backward() const;

    Tensor detach() const;

    const std::shared_ptr<detail::Node>& node() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::Node> node_;

    friend Tensor detail::make_op(const char*, Shape, std::vector<double>, std::vector<Tensor>,
                                  std::function<void(detail::Node&)>);
};

/// Topologically ordered view of the recorded graph below a root.
/// Every node appears once, after all of its parents.
struct Graph {
    std::vector<detail::Node*> order;
    static Graph build(const Tensor& root);
};

bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

}  // namespace das
