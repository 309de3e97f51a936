#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "text2loc/engine/tensor.hpp"

namespace text2loc::engine {

/*
 * Primitive differentiable operations. Every op rejects non-finite inputs
 * and non-conforming shapes (ShapeError naming the offending shapes), and
 * records itself for backward when any input requires a gradient.
 */

/* Row offsets [0, o1, ..., rows] splitting a matrix into consecutive row segments */
using Offsets = std::vector<std::size_t>;

Offsets single_segment(std::size_t rows);
Offsets offsets_from_counts(std::span<const std::size_t> counts);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/* x[n x d] + bias[d], broadcast over rows */
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor scale(const Tensor& a, double factor);
Tensor relu(const Tensor& a);

/* Softmax along the last axis */
Tensor softmax_rows(const Tensor& a);
Tensor log_softmax_rows(const Tensor& a);

Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count);
/* Row lookup; gradient scatter-adds into the source rows */
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> indices);

struct MaxResult
{
    Tensor values;
    std::vector<std::size_t> argmax;
};

/* Max over rows (axis 0, result [cols]) or columns (axis 1, result [rows]).
 * Ties resolve to the lowest index; backward routes to the argmax only. */
MaxResult max_axis_with_argmax(const Tensor& a, std::size_t axis);
Tensor max_axis(const Tensor& a, std::size_t axis);
/* Column-wise max inside each row segment: [segments x cols] */
Tensor segment_max(const Tensor& a, const Offsets& offsets);

Tensor mean_axis(const Tensor& a, std::size_t axis);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

/* Row-wise x / max(|x|, 1e-12) */
Tensor l2_normalize_rows(const Tensor& a);

/* out[i] = a[i, columns[i]] */
Tensor pick(const Tensor& a, std::span<const std::size_t> columns);

/*
 * Multi-head scaled dot-product attention evaluated independently inside
 * each (query segment, key segment) pair. Head i uses column block i of
 * q/k (width q.cols / heads) and of v (width v.cols / heads); the output
 * concatenates heads along columns and has q's row layout.
 */
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                 const Offsets& q_offsets, const Offsets& k_offsets);

/* softmax(q k^T / sqrt(d_k)) v */
Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v);

} // namespace text2loc::engine
