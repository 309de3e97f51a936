#include "text2loc/engine/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <unordered_set>

#include "text2loc/common/errors.hpp"

namespace text2loc::engine {

std::size_t shape_size(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t { 1 },
                           std::multiplies<> {});
}

std::string shape_string(const Shape& shape)
{
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0)
            s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
{
    if (shape.size() > 2)
        throw ShapeError("tensors are limited to rank 2, got " + shape_string(shape));
    if (shape_size(shape) != values.size())
        throw ShapeError("shape " + shape_string(shape) + " does not hold " +
                         std::to_string(values.size()) + " values");
    node_ = std::make_shared<detail::Node>();
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad)
{
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad)
{
    const auto n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad)
{
    return Tensor({}, { value }, requires_grad);
}

std::size_t Tensor::rows() const
{
    return rank() == 2 ? node_->shape[0] : 1;
}

std::size_t Tensor::cols() const
{
    if (rank() == 0)
        return 1;
    return node_->shape.back();
}

std::span<double> Tensor::mutable_grad()
{
    node_->ensure_grad();
    return node_->grad;
}

void Tensor::zero_grad()
{
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

double Tensor::item() const
{
    if (size() != 1)
        throw ShapeError("item() on tensor of shape " + shape_string(shape()));
    return node_->value[0];
}

double Tensor::at(std::size_t row, std::size_t col) const
{
    if (row >= rows() || col >= cols())
        throw ShapeError("index (" + std::to_string(row) + "," + std::to_string(col) +
                         ") outside " + shape_string(shape()));
    return node_->value[row * cols() + col];
}

Tensor Tensor::detach() const
{
    return Tensor(node_->shape, node_->value, false);
}

Tensor Tensor::from_node(std::shared_ptr<detail::Node> node)
{
    Tensor t;
    t.node_ = std::move(node);
    return t;
}

namespace {
thread_local bool g_grad_enabled = true;
} // namespace

bool grad_enabled()
{
    return g_grad_enabled;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled)
{
    g_grad_enabled = false;
}

NoGradGuard::~NoGradGuard()
{
    g_grad_enabled = previous_;
}

Tape::Tape(const Tensor& loss) : loss_(loss)
{
    if (!loss.defined() || loss.size() != 1)
        throw ShapeError("backward requires a scalar loss, got " +
                         (loss.defined() ? shape_string(loss.shape()) : std::string("undefined")));
    if (!loss.requires_grad())
        return;

    /* Iterative post-order DFS; reversing the post-order yields a
     * reverse topological order with the loss first */
    std::vector<std::shared_ptr<detail::Node>> post;
    std::unordered_set<const detail::Node*> visited;
    std::vector<std::pair<std::shared_ptr<detail::Node>, std::size_t>> stack;
    visited.insert(loss.node().get());
    stack.emplace_back(loss.node(), 0);

    while (!stack.empty()) {
        auto& top = stack.back();
        if (top.second < top.first->parents.size()) {
            auto parent = top.first->parents[top.second++];
            if (parent->requires_grad && visited.insert(parent.get()).second)
                stack.emplace_back(std::move(parent), 0);
            continue;
        }
        post.push_back(std::move(top.first));
        stack.pop_back();
    }
    order_.assign(post.rbegin(), post.rend());
}

void Tape::backward()
{
    if (order_.empty())
        return;
    for (auto& node : order_) {
        if (!node->parents.empty()) {
            node->grad.assign(node->value.size(), 0.0);
        }
    }
    auto& root = order_.front();
    root->ensure_grad();
    root->grad[0] += 1.0;
    for (auto& node : order_) {
        if (node->backward)
            node->backward(*node);
    }
}

std::vector<Tensor> Tape::leaves() const
{
    std::vector<Tensor> result;
    for (const auto& node : order_) {
        if (node->parents.empty() && node->requires_grad)
            result.push_back(Tensor::from_node(node));
    }
    return result;
}

std::vector<Tensor> backward(const Tensor& loss)
{
    Tape tape(loss);
    tape.backward();
    return tape.leaves();
}

} // namespace text2loc::engine
