#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace text2loc::engine {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

struct Node
{
    Shape shape;
    std::vector<double> value;
    /* Allocated on first accumulation */
    std::vector<double> grad;
    bool requires_grad = false;
    /* Inputs this node was computed from; empty for leaves and constants */
    std::vector<std::shared_ptr<Node>> parents;
    /* Reads this node's grad and accumulates into the parents' grads */
    std::function<void(Node&)> backward;
    const char* op = "leaf";

    void ensure_grad()
    {
        if (grad.size() != value.size())
            grad.assign(value.size(), 0.0);
    }
};

} // namespace detail

/*
 * Dense row-major float64 array of rank 0, 1 or 2, with an optional
 * gradient slot. Copies share the underlying node. Rank-1 tensors act as
 * a single row wherever a matrix is expected.
 */
class Tensor
{
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->value.size(); }
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const double> values() const { return node_->value; }
    /* In-place access for parameter updates; never use on graph interiors */
    std::span<double> mutable_values() { return node_->value; }

    bool requires_grad() const { return node_->requires_grad; }
    bool has_grad() const { return node_->grad.size() == node_->value.size(); }
    std::span<const double> grad() const { return node_->grad; }
    std::span<double> mutable_grad();
    void zero_grad();

    double item() const;
    double at(std::size_t row, std::size_t col) const;
    double at(std::size_t index) const { return node_->value.at(index); }

    /* Same values, cut from the graph */
    Tensor detach() const;

    bool is_leaf() const { return node_->parents.empty(); }
    const char* op() const { return node_->op; }
    const std::shared_ptr<detail::Node>& node() const { return node_; }
    static Tensor from_node(std::shared_ptr<detail::Node> node);

private:
    std::shared_ptr<detail::Node> node_;
};

/* Thread-local switch disabling graph recording (evaluation paths) */
bool grad_enabled();

class NoGradGuard
{
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/*
 * Reverse topological record of the graph behind a scalar loss. Replaying
 * backward() visits each node once, resets interior gradients first and
 * accumulates into leaf gradients.
 */
class Tape
{
public:
    explicit Tape(const Tensor& loss);

    void backward();

    std::size_t size() const { return order_.size(); }
    /* Gradient-carrying leaves reachable from the loss, in first-visit order */
    std::vector<Tensor> leaves() const;

private:
    Tensor loss_;
    std::vector<std::shared_ptr<detail::Node>> order_;
};

/* Record and replay once; returns the leaves that received gradient */
std::vector<Tensor> backward(const Tensor& loss);

} // namespace text2loc::engine
