#include "text2loc/coarse/loss.hpp"

#include <cmath>
#include <numeric>

#include "text2loc/common/errors.hpp"
#include "text2loc/engine/ops.hpp"

namespace text2loc::coarse {

using namespace engine;

namespace {

void check_batch(const Tensor& text, const Tensor& submap)
{
    if (text.rank() != 2 || text.shape() != submap.shape()) {
        throw ShapeError("contrastive batch needs equal [N x C] inputs, got " + shape_string(text.shape())
                         + " and " + shape_string(submap.shape()));
    }
    if (text.rows() < 2) {
        throw ValueError("contrastive loss needs at least 2 pairs for negatives");
    }
}

std::vector<std::size_t> diagonal(std::size_t n)
{
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
}

} // namespace

Tensor similarity_logits(const Tensor& text, const Tensor& submap, double tau)
{
    if (!(tau > 0.0) || !std::isfinite(tau)) {
        throw ValueError("temperature must be positive, got " + std::to_string(tau));
    }
    check_batch(text, submap);
    return scale(matmul(text, transpose(submap)), 1.0 / tau);
}

Tensor contrastive_pair_loss(std::size_t i, const Tensor& text, const Tensor& submap, double tau)
{
    const Tensor logits = similarity_logits(text, submap, tau);
    if (i >= text.rows()) {
        throw ValueError("pair index outside the batch");
    }
    const std::size_t col[] = { i };
    const Tensor t2s = pick(log_softmax_rows(slice_rows(logits, i, 1)), col);
    const Tensor s2t = pick(log_softmax_rows(slice_rows(transpose(logits), i, 1)), col);
    return scale(add(sum(t2s), sum(s2t)), -1.0);
}

Tensor batch_loss(const Tensor& text, const Tensor& submap, double tau)
{
    const Tensor logits = similarity_logits(text, submap, tau);
    const auto diag = diagonal(text.rows());
    const Tensor t2s = sum(pick(log_softmax_rows(logits), diag));
    const Tensor s2t = sum(pick(log_softmax_rows(transpose(logits)), diag));
    return scale(add(t2s, s2t), -1.0 / static_cast<double>(text.rows()));
}

Tensor pairwise_ranking_loss(const Tensor& text, const Tensor& submap, double margin)
{
    if (!(margin >= 0.0) || !std::isfinite(margin)) {
        throw ValueError("ranking margin must be non-negative");
    }
    check_batch(text, submap);
    const std::size_t n = text.rows();
    const Tensor sim = matmul(text, transpose(submap));
    const Tensor pos = reshape(pick(sim, diagonal(n)), { n, 1 });
    /* pos broadcast across columns */
    const Tensor pos_cols = matmul(pos, Tensor::full({ 1, n }, 1.0));
    std::vector<double> off_diag(n * n, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        off_diag[i * n + i] = 0.0;
    }
    const Tensor mask({ n, n }, off_diag);
    const Tensor m = Tensor::full({ n, n }, margin);
    const Tensor t2s = mul(relu(add(sub(sim, pos_cols), m)), mask);
    const Tensor s2t = mul(relu(add(sub(transpose(sim), pos_cols), m)), mask);
    return scale(add(sum(t2s), sum(s2t)), 1.0 / static_cast<double>(n));
}

} // namespace text2loc::coarse
