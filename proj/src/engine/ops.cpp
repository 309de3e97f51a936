#include "text2loc/engine/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Dense>

#include "text2loc/common/errors.hpp"

namespace text2loc::engine {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;

using BackwardFn = std::function<void(detail::Node&)>;

MatrixMap as_matrix(std::vector<double>& v, std::size_t rows, std::size_t cols)
{
    return MatrixMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void check_finite(const Tensor& t, const char* op)
{
    if (!t.defined())
        throw ValueError(std::string(op) + ": undefined input tensor");
    for (double v : t.values()) {
        if (!std::isfinite(v))
            throw ValueError(std::string(op) + ": non-finite input value in tensor of shape " +
                             shape_string(t.shape()));
    }
}

[[noreturn]] void shape_mismatch(const char* op, const Tensor& a, const Tensor& b)
{
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(a.shape()) +
                     " and " + shape_string(b.shape()));
}

Tensor make_result(Shape shape, std::vector<double> value, const char* op,
                   const std::vector<Tensor>& inputs, BackwardFn backward)
{
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->op = op;

    bool needs_grad = false;
    if (grad_enabled()) {
        for (const auto& input : inputs)
            needs_grad = needs_grad || input.requires_grad();
    }
    if (needs_grad) {
        node->requires_grad = true;
        for (const auto& input : inputs)
            node->parents.push_back(input.node());
        node->backward = std::move(backward);
    }
    return Tensor::from_node(std::move(node));
}

Tensor make_result(Shape shape, std::vector<double> value, const char* op,
                   std::initializer_list<Tensor> inputs, BackwardFn backward)
{
    return make_result(std::move(shape), std::move(value), op, std::vector<Tensor>(inputs),
                       std::move(backward));
}

/* Parent gradient buffer, or nullptr when that parent is constant */
std::vector<double>* parent_grad(detail::Node& self, std::size_t i)
{
    auto& parent = *self.parents[i];
    if (!parent.requires_grad)
        return nullptr;
    parent.ensure_grad();
    return &parent.grad;
}

void check_offsets(const char* op, const Offsets& offsets, std::size_t rows)
{
    if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != rows)
        throw ShapeError(std::string(op) + ": row offsets do not span " + std::to_string(rows) +
                         " rows");
    for (std::size_t s = 1; s < offsets.size(); ++s) {
        if (offsets[s] < offsets[s - 1])
            throw ShapeError(std::string(op) + ": row offsets are not non-decreasing");
    }
}

} // namespace

Offsets single_segment(std::size_t rows)
{
    return { 0, rows };
}

Offsets offsets_from_counts(std::span<const std::size_t> counts)
{
    Offsets offsets { 0 };
    for (auto c : counts)
        offsets.push_back(offsets.back() + c);
    return offsets;
}

Tensor matmul(const Tensor& a, const Tensor& b)
{
    check_finite(a, "matmul");
    check_finite(b, "matmul");
    if (b.rank() != 2 || a.rank() == 0 || a.cols() != b.rows())
        shape_mismatch("matmul", a, b);

    const auto m = a.rows();
    const auto k = a.cols();
    const auto n = b.cols();
    std::vector<double> out(m * n);
    as_matrix(out, m, n).noalias() =
        as_matrix(a.node()->value, m, k) * as_matrix(b.node()->value, k, n);

    return make_result({ m, n }, std::move(out), "matmul", { a, b },
                       [m, k, n](detail::Node& self) {
        const auto grad = as_matrix(self.grad, m, n);
        if (auto* ga = parent_grad(self, 0))
            as_matrix(*ga, m, k).noalias() +=
                grad * as_matrix(self.parents[1]->value, k, n).transpose();
        if (auto* gb = parent_grad(self, 1))
            as_matrix(*gb, k, n).noalias() +=
                as_matrix(self.parents[0]->value, m, k).transpose() * grad;
    });
}

Tensor transpose(const Tensor& a)
{
    check_finite(a, "transpose");
    if (a.rank() == 0)
        throw ShapeError("transpose: scalar input");
    const auto m = a.rows();
    const auto n = a.cols();
    std::vector<double> out(m * n);
    as_matrix(out, n, m) = as_matrix(a.node()->value, m, n).transpose();
    return make_result({ n, m }, std::move(out), "transpose", { a },
                       [m, n](detail::Node& self) {
        if (auto* ga = parent_grad(self, 0))
            as_matrix(*ga, m, n) += as_matrix(self.grad, n, m).transpose();
    });
}

Tensor reshape(const Tensor& a, Shape shape)
{
    check_finite(a, "reshape");
    if (shape.size() > 2 || shape_size(shape) != a.size())
        throw ShapeError("reshape: cannot view " + shape_string(a.shape()) + " as " +
                         shape_string(shape));
    return make_result(std::move(shape), a.node()->value, "reshape", { a },
                       [](detail::Node& self) {
        if (auto* ga = parent_grad(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                (*ga)[i] += self.grad[i];
        }
    });
}

namespace {

template <typename Forward, typename GradA, typename GradB>
Tensor elementwise(const char* op, const Tensor& a, const Tensor& b, Forward forward,
                   GradA grad_a, GradB grad_b)
{
    check_finite(a, op);
    check_finite(b, op);
    if (a.shape() != b.shape())
        shape_mismatch(op, a, b);
    const auto& av = a.node()->value;
    const auto& bv = b.node()->value;
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = forward(av[i], bv[i]);
    return make_result(a.shape(), std::move(out), op, { a, b },
                       [grad_a, grad_b](detail::Node& self) {
        const auto& x = self.parents[0]->value;
        const auto& y = self.parents[1]->value;
        if (auto* ga = parent_grad(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                (*ga)[i] += grad_a(self.grad[i], x[i], y[i]);
        }
        if (auto* gb = parent_grad(self, 1)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                (*gb)[i] += grad_b(self.grad[i], x[i], y[i]);
        }
    });
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b)
{
    return elementwise(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double g, double, double) { return g; }, [](double g, double, double) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b)
{
    return elementwise(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double g, double, double) { return g; }, [](double g, double, double) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b)
{
    return elementwise(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double g, double, double y) { return g * y; },
        [](double g, double x, double) { return g * x; });
}

Tensor add_bias(const Tensor& x, const Tensor& bias)
{
    check_finite(x, "add_bias");
    check_finite(bias, "add_bias");
    if (x.rank() == 0 || bias.rows() != 1 || bias.cols() != x.cols())
        shape_mismatch("add_bias", x, bias);
    const auto n = x.rows();
    const auto d = x.cols();
    std::vector<double> out(x.node()->value);
    const auto& b = bias.node()->value;
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c)
            out[r * d + c] += b[c];
    return make_result(x.shape(), std::move(out), "add_bias", { x, bias },
                       [n, d](detail::Node& self) {
        if (auto* gx = parent_grad(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                (*gx)[i] += self.grad[i];
        }
        if (auto* gb = parent_grad(self, 1)) {
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < d; ++c)
                    (*gb)[c] += self.grad[r * d + c];
        }
    });
}

Tensor scale(const Tensor& a, double factor)
{
    check_finite(a, "scale");
    if (!std::isfinite(factor))
        throw ValueError("scale: non-finite factor");
    std::vector<double> out(a.node()->value);
    for (auto& v : out)
        v *= factor;
    return make_result(a.shape(), std::move(out), "scale", { a }, [factor](detail::Node& self) {
        if (auto* ga = parent_grad(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                (*ga)[i] += factor * self.grad[i];
        }
    });
}

Tensor relu(const Tensor& a)
{
    check_finite(a, "relu");
    std::vector<double> out(a.node()->value);
    for (auto& v : out)
        v = v > 0.0 ? v : 0.0;
    return make_result(a.shape(), std::move(out), "relu", { a }, [](detail::Node& self) {
        if (auto* ga = parent_grad(self, 0)) {
            const auto& x = self.parents[0]->value;
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                if (x[i] > 0.0)
                    (*ga)[i] += self.grad[i];
        }
    });
}

Tensor softmax_rows(const Tensor& a)
{
    check_finite(a, "softmax_rows");
    if (a.rank() == 0 || a.cols() == 0)
        throw ShapeError("softmax_rows: empty rows in " + shape_string(a.shape()));
    const auto n = a.rows();
    const auto d = a.cols();
    std::vector<double> out(a.node()->value);
    for (std::size_t r = 0; r < n; ++r) {
        double* row = out.data() + r * d;
        const double peak = *std::max_element(row, row + d);
        double total = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            row[c] = std::exp(row[c] - peak);
            total += row[c];
        }
        for (std::size_t c = 0; c < d; ++c)
            row[c] /= total;
    }
    return make_result(a.shape(), std::move(out), "softmax_rows", { a },
                       [n, d](detail::Node& self) {
        auto* ga = parent_grad(self, 0);
        if (!ga)
            return;
        const auto& y = self.value;
        for (std::size_t r = 0; r < n; ++r) {
            double dot = 0.0;
            for (std::size_t c = 0; c < d; ++c)
                dot += self.grad[r * d + c] * y[r * d + c];
            for (std::size_t c = 0; c < d; ++c)
                (*ga)[r * d + c] += y[r * d + c] * (self.grad[r * d + c] - dot);
        }
    });
}

Tensor log_softmax_rows(const Tensor& a)
{
    check_finite(a, "log_softmax_rows");
    if (a.rank() == 0 || a.cols() == 0)
        throw ShapeError("log_softmax_rows: empty rows in " + shape_string(a.shape()));
    const auto n = a.rows();
    const auto d = a.cols();
    std::vector<double> out(a.node()->value);
    for (std::size_t r = 0; r < n; ++r) {
        double* row = out.data() + r * d;
        const double peak = *std::max_element(row, row + d);
        double total = 0.0;
        for (std::size_t c = 0; c < d; ++c)
            total += std::exp(row[c] - peak);
        const double log_norm = peak + std::log(total);
        for (std::size_t c = 0; c < d; ++c)
            row[c] -= log_norm;
    }
    return make_result(a.shape(), std::move(out), "log_softmax_rows", { a },
                       [n, d](detail::Node& self) {
        auto* ga = parent_grad(self, 0);
        if (!ga)
            return;
        const auto& y = self.value;
        for (std::size_t r = 0; r < n; ++r) {
            double total = 0.0;
            for (std::size_t c = 0; c < d; ++c)
                total += self.grad[r * d + c];
            for (std::size_t c = 0; c < d; ++c)
                (*ga)[r * d + c] += self.grad[r * d + c] - std::exp(y[r * d + c]) * total;
        }
    });
}

Tensor concat_cols(const std::vector<Tensor>& parts)
{
    if (parts.empty())
        throw ShapeError("concat_cols: no inputs");
    const auto n = parts.front().rows();
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const auto& p : parts) {
        check_finite(p, "concat_cols");
        if (p.rank() == 0 || p.rows() != n)
            shape_mismatch("concat_cols", parts.front(), p);
        widths.push_back(p.cols());
        total += p.cols();
    }
    std::vector<double> out(n * total);
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const auto w = p.cols();
        const auto& v = p.node()->value;
        for (std::size_t r = 0; r < n; ++r)
            std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(r * w), w,
                        out.begin() + static_cast<std::ptrdiff_t>(r * total + offset));
        offset += w;
    }
    return make_result({ n, total }, std::move(out), "concat_cols", parts,
                       [n, total, widths](detail::Node& self) {
        std::size_t offset = 0;
        for (std::size_t i = 0; i < widths.size(); ++i) {
            const auto w = widths[i];
            if (auto* g = parent_grad(self, i)) {
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t c = 0; c < w; ++c)
                        (*g)[r * w + c] += self.grad[r * total + offset + c];
            }
            offset += w;
        }
    });
}

Tensor concat_rows(const std::vector<Tensor>& parts)
{
    if (parts.empty())
        throw ShapeError("concat_rows: no inputs");
    const auto d = parts.front().cols();
    std::vector<double> out;
    std::vector<std::size_t> sizes;
    std::size_t rows = 0;
    for (const auto& p : parts) {
        check_finite(p, "concat_rows");
        if (p.rank() == 0 || p.cols() != d)
            shape_mismatch("concat_rows", parts.front(), p);
        out.insert(out.end(), p.values().begin(), p.values().end());
        sizes.push_back(p.size());
        rows += p.rows();
    }
    return make_result({ rows, d }, std::move(out), "concat_rows", parts,
                       [sizes](detail::Node& self) {
        std::size_t offset = 0;
        for (std::size_t i = 0; i < sizes.size(); ++i) {
            if (auto* g = parent_grad(self, i)) {
                for (std::size_t j = 0; j < sizes[i]; ++j)
                    (*g)[j] += self.grad[offset + j];
            }
            offset += sizes[i];
        }
    });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count)
{
    check_finite(a, "slice_rows");
    if (a.rank() == 0 || begin + count > a.rows())
        throw ShapeError("slice_rows: rows [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") outside " + shape_string(a.shape()));
    const auto d = a.cols();
    const auto first = a.node()->value.begin() + static_cast<std::ptrdiff_t>(begin * d);
    std::vector<double> out(first, first + static_cast<std::ptrdiff_t>(count * d));
    return make_result({ count, d }, std::move(out), "slice_rows", { a },
                       [begin, d](detail::Node& self) {
        if (auto* g = parent_grad(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                (*g)[begin * d + i] += self.grad[i];
        }
    });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count)
{
    check_finite(a, "slice_cols");
    if (a.rank() == 0 || begin + count > a.cols())
        throw ShapeError("slice_cols: cols [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") outside " + shape_string(a.shape()));
    const auto n = a.rows();
    const auto d = a.cols();
    std::vector<double> out(n * count);
    const auto& v = a.node()->value;
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < count; ++c)
            out[r * count + c] = v[r * d + begin + c];
    return make_result({ n, count }, std::move(out), "slice_cols", { a },
                       [n, d, begin, count](detail::Node& self) {
        if (auto* g = parent_grad(self, 0)) {
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < count; ++c)
                    (*g)[r * d + begin + c] += self.grad[r * count + c];
        }
    });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> indices)
{
    check_finite(a, "gather_rows");
    if (a.rank() != 2)
        throw ShapeError("gather_rows: expected a matrix, got " + shape_string(a.shape()));
    const auto d = a.cols();
    std::vector<std::size_t> rows(indices.begin(), indices.end());
    std::vector<double> out(rows.size() * d);
    const auto& v = a.node()->value;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= a.rows())
            throw ShapeError("gather_rows: index " + std::to_string(rows[i]) + " outside " +
                             shape_string(a.shape()));
        std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(rows[i] * d), d,
                    out.begin() + static_cast<std::ptrdiff_t>(i * d));
    }
    return make_result({ rows.size(), d }, std::move(out), "gather_rows", { a },
                       [rows, d](detail::Node& self) {
        if (auto* g = parent_grad(self, 0)) {
            for (std::size_t i = 0; i < rows.size(); ++i)
                for (std::size_t c = 0; c < d; ++c)
                    (*g)[rows[i] * d + c] += self.grad[i * d + c];
        }
    });
}

MaxResult max_axis_with_argmax(const Tensor& a, std::size_t axis)
{
    check_finite(a, "max_axis");
    if (a.rank() == 0 || axis > 1)
        throw ShapeError("max_axis: axis " + std::to_string(axis) + " invalid for " +
                         shape_string(a.shape()));
    const auto n = a.rows();
    const auto d = a.cols();
    const auto& v = a.node()->value;
    const auto outer = axis == 0 ? d : n;
    const auto inner = axis == 0 ? n : d;
    if (inner == 0)
        throw ShapeError("max_axis: reducing an empty axis of " + shape_string(a.shape()));

    std::vector<double> out(outer);
    std::vector<std::size_t> argmax(outer);
    std::vector<std::size_t> flat(outer);
    for (std::size_t o = 0; o < outer; ++o) {
        std::size_t best = 0;
        auto at = [&](std::size_t i) { return axis == 0 ? v[i * d + o] : v[o * d + i]; };
        for (std::size_t i = 1; i < inner; ++i)
            if (at(i) > at(best))
                best = i;
        out[o] = at(best);
        argmax[o] = best;
        flat[o] = axis == 0 ? best * d + o : o * d + best;
    }
    auto values = make_result({ outer }, std::move(out), "max_axis", { a },
                              [flat](detail::Node& self) {
        if (auto* g = parent_grad(self, 0)) {
            for (std::size_t o = 0; o < flat.size(); ++o)
                (*g)[flat[o]] += self.grad[o];
        }
    });
    return { std::move(values), std::move(argmax) };
}

Tensor max_axis(const Tensor& a, std::size_t axis)
{
    return max_axis_with_argmax(a, axis).values;
}

Tensor segment_max(const Tensor& a, const Offsets& offsets)
{
    check_finite(a, "segment_max");
    if (a.rank() == 0)
        throw ShapeError("segment_max: scalar input");
    check_offsets("segment_max", offsets, a.rows());
    const auto d = a.cols();
    const auto segments = offsets.size() - 1;
    const auto& v = a.node()->value;
    std::vector<double> out(segments * d);
    std::vector<std::size_t> flat(segments * d);
    for (std::size_t s = 0; s < segments; ++s) {
        if (offsets[s + 1] == offsets[s])
            throw ShapeError("segment_max: segment " + std::to_string(s) + " is empty");
        for (std::size_t c = 0; c < d; ++c) {
            std::size_t best = offsets[s];
            for (std::size_t r = offsets[s] + 1; r < offsets[s + 1]; ++r)
                if (v[r * d + c] > v[best * d + c])
                    best = r;
            out[s * d + c] = v[best * d + c];
            flat[s * d + c] = best * d + c;
        }
    }
    return make_result({ segments, d }, std::move(out), "segment_max", { a },
                       [flat](detail::Node& self) {
        if (auto* g = parent_grad(self, 0)) {
            for (std::size_t i = 0; i < flat.size(); ++i)
                (*g)[flat[i]] += self.grad[i];
        }
    });
}

Tensor mean_axis(const Tensor& a, std::size_t axis)
{
    check_finite(a, "mean_axis");
    if (a.rank() == 0 || axis > 1)
        throw ShapeError("mean_axis: axis " + std::to_string(axis) + " invalid for " +
                         shape_string(a.shape()));
    const auto n = a.rows();
    const auto d = a.cols();
    const auto outer = axis == 0 ? d : n;
    const auto inner = axis == 0 ? n : d;
    if (inner == 0)
        throw ShapeError("mean_axis: reducing an empty axis of " + shape_string(a.shape()));
    const auto& v = a.node()->value;
    std::vector<double> out(outer, 0.0);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c)
            out[axis == 0 ? c : r] += v[r * d + c];
    for (auto& x : out)
        x /= static_cast<double>(inner);
    return make_result({ outer }, std::move(out), "mean_axis", { a },
                       [n, d, axis, inner](detail::Node& self) {
        if (auto* g = parent_grad(self, 0)) {
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < d; ++c)
                    (*g)[r * d + c] += self.grad[axis == 0 ? c : r] / static_cast<double>(inner);
        }
    });
}

Tensor sum(const Tensor& a)
{
    check_finite(a, "sum");
    double total = 0.0;
    for (double v : a.values())
        total += v;
    return make_result({}, { total }, "sum", { a }, [](detail::Node& self) {
        if (auto* g = parent_grad(self, 0)) {
            for (auto& x : *g)
                x += self.grad[0];
        }
    });
}

Tensor mean(const Tensor& a)
{
    if (a.defined() && a.size() == 0)
        throw ShapeError("mean: empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor l2_normalize_rows(const Tensor& a)
{
    constexpr double kMinNorm = 1e-12;
    check_finite(a, "l2_normalize_rows");
    if (a.rank() == 0)
        throw ShapeError("l2_normalize_rows: scalar input");
    const auto n = a.rows();
    const auto d = a.cols();
    std::vector<double> out(a.node()->value);
    std::vector<double> norms(n);
    for (std::size_t r = 0; r < n; ++r) {
        double sq = 0.0;
        for (std::size_t c = 0; c < d; ++c)
            sq += out[r * d + c] * out[r * d + c];
        norms[r] = std::max(std::sqrt(sq), kMinNorm);
        for (std::size_t c = 0; c < d; ++c)
            out[r * d + c] /= norms[r];
    }
    return make_result(a.shape(), std::move(out), "l2_normalize_rows", { a },
                       [n, d, norms](detail::Node& self) {
        auto* g = parent_grad(self, 0);
        if (!g)
            return;
        const auto& y = self.value;
        for (std::size_t r = 0; r < n; ++r) {
            double dot = 0.0;
            if (norms[r] > kMinNorm) {
                for (std::size_t c = 0; c < d; ++c)
                    dot += y[r * d + c] * self.grad[r * d + c];
            }
            for (std::size_t c = 0; c < d; ++c)
                (*g)[r * d + c] += (self.grad[r * d + c] - y[r * d + c] * dot) / norms[r];
        }
    });
}

Tensor pick(const Tensor& a, std::span<const std::size_t> columns)
{
    check_finite(a, "pick");
    if (a.rank() == 0 || columns.size() != a.rows())
        throw ShapeError("pick: " + std::to_string(columns.size()) + " indices for " +
                         shape_string(a.shape()));
    const auto d = a.cols();
    std::vector<std::size_t> flat(columns.size());
    std::vector<double> out(columns.size());
    for (std::size_t r = 0; r < columns.size(); ++r) {
        if (columns[r] >= d)
            throw ShapeError("pick: column " + std::to_string(columns[r]) + " outside " +
                             shape_string(a.shape()));
        flat[r] = r * d + columns[r];
        out[r] = a.node()->value[flat[r]];
    }
    return make_result({ columns.size() }, std::move(out), "pick", { a },
                       [flat](detail::Node& self) {
        if (auto* g = parent_grad(self, 0)) {
            for (std::size_t r = 0; r < flat.size(); ++r)
                (*g)[flat[r]] += self.grad[r];
        }
    });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                 const Offsets& q_offsets, const Offsets& k_offsets)
{
    check_finite(q, "attention");
    check_finite(k, "attention");
    check_finite(v, "attention");
    if (q.rank() == 0 || k.rank() == 0 || v.rank() == 0)
        throw ShapeError("attention: scalar operand");
    if (q.cols() != k.cols())
        shape_mismatch("attention", q, k);
    if (v.rows() != k.rows())
        shape_mismatch("attention", k, v);
    if (heads == 0 || q.cols() % heads != 0 || v.cols() % heads != 0)
        throw ShapeError("attention: widths " + std::to_string(q.cols()) + "/" +
                         std::to_string(v.cols()) + " not divisible by " +
                         std::to_string(heads) + " heads");
    if (q.cols() == 0)
        throw ShapeError("attention: zero key width");
    check_offsets("attention", q_offsets, q.rows());
    check_offsets("attention", k_offsets, k.rows());
    if (q_offsets.size() != k_offsets.size())
        throw ShapeError("attention: query and key segment counts differ");

    const auto segments = q_offsets.size() - 1;
    for (std::size_t s = 0; s < segments; ++s) {
        if (k_offsets[s + 1] == k_offsets[s])
            throw ShapeError("attention: empty key set in segment " + std::to_string(s));
    }

    const auto width_qk = q.cols();
    const auto width_v = v.cols();
    const auto dk = width_qk / heads;
    const auto dv = width_v / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
    const auto nq_total = q.rows();
    const auto nk_total = k.rows();

    const auto qm = as_matrix(q.node()->value, nq_total, width_qk);
    const auto km = as_matrix(k.node()->value, nk_total, width_qk);
    const auto vm = as_matrix(v.node()->value, nk_total, width_v);

    std::vector<double> out(nq_total * width_v, 0.0);
    auto om = as_matrix(out, nq_total, width_v);

    /* Softmax weights per (segment, head), kept for backward */
    std::vector<RowMatrix> weights;
    weights.reserve(segments * heads);
    for (std::size_t s = 0; s < segments; ++s) {
        const auto q0 = static_cast<Eigen::Index>(q_offsets[s]);
        const auto nq = static_cast<Eigen::Index>(q_offsets[s + 1] - q_offsets[s]);
        const auto k0 = static_cast<Eigen::Index>(k_offsets[s]);
        const auto nk = static_cast<Eigen::Index>(k_offsets[s + 1] - k_offsets[s]);
        for (std::size_t h = 0; h < heads; ++h) {
            const auto cq = static_cast<Eigen::Index>(h * dk);
            const auto cv = static_cast<Eigen::Index>(h * dv);
            RowMatrix p = qm.block(q0, cq, nq, static_cast<Eigen::Index>(dk)) *
                          km.block(k0, cq, nk, static_cast<Eigen::Index>(dk)).transpose();
            p *= inv_sqrt;
            for (Eigen::Index r = 0; r < nq; ++r) {
                const double peak = p.row(r).maxCoeff();
                p.row(r) = (p.row(r).array() - peak).exp();
                p.row(r) /= p.row(r).sum();
            }
            om.block(q0, cv, nq, static_cast<Eigen::Index>(dv)).noalias() =
                p * vm.block(k0, cv, nk, static_cast<Eigen::Index>(dv));
            weights.push_back(std::move(p));
        }
    }

    return make_result(
        { nq_total, width_v }, std::move(out), "attention", { q, k, v },
        [=, weights = std::move(weights)](detail::Node& self) {
        const auto qv = as_matrix(self.parents[0]->value, nq_total, width_qk);
        const auto kv = as_matrix(self.parents[1]->value, nk_total, width_qk);
        const auto vv = as_matrix(self.parents[2]->value, nk_total, width_v);
        const auto grad = as_matrix(self.grad, nq_total, width_v);
        auto* gq = parent_grad(self, 0);
        auto* gk = parent_grad(self, 1);
        auto* gv = parent_grad(self, 2);

        std::size_t w = 0;
        for (std::size_t s = 0; s < segments; ++s) {
            const auto q0 = static_cast<Eigen::Index>(q_offsets[s]);
            const auto nq = static_cast<Eigen::Index>(q_offsets[s + 1] - q_offsets[s]);
            const auto k0 = static_cast<Eigen::Index>(k_offsets[s]);
            const auto nk = static_cast<Eigen::Index>(k_offsets[s + 1] - k_offsets[s]);
            for (std::size_t h = 0; h < heads; ++h, ++w) {
                const auto& p = weights[w];
                const auto cq = static_cast<Eigen::Index>(h * dk);
                const auto cv = static_cast<Eigen::Index>(h * dv);
                const auto edk = static_cast<Eigen::Index>(dk);
                const auto edv = static_cast<Eigen::Index>(dv);
                const auto grad_out = grad.block(q0, cv, nq, edv);
                if (gv)
                    as_matrix(*gv, nk_total, width_v).block(k0, cv, nk, edv).noalias() +=
                        p.transpose() * grad_out;
                if (!gq && !gk)
                    continue;
                RowMatrix dp = grad_out * vv.block(k0, cv, nk, edv).transpose();
                const Eigen::VectorXd row_dot = (dp.array() * p.array()).rowwise().sum();
                RowMatrix ds = p.array() * (dp.colwise() - row_dot).array();
                ds *= inv_sqrt;
                if (gq)
                    as_matrix(*gq, nq_total, width_qk).block(q0, cq, nq, edk).noalias() +=
                        ds * kv.block(k0, cq, nk, edk);
                if (gk)
                    as_matrix(*gk, nk_total, width_qk).block(k0, cq, nk, edk).noalias() +=
                        ds.transpose() * qv.block(q0, cq, nq, edk);
            }
        }
    });
}

Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v)
{
    if (!k.defined() || k.rows() == 0 || k.rank() == 0)
        throw ShapeError("scaled_dot_product_attention: empty key set");
    return attention(q, k, v, 1, single_segment(q.rows()), single_segment(k.rows()));
}

} // namespace text2loc::engine
