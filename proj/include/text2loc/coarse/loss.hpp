#pragma once

#include <cstddef>

#include "text2loc/engine/tensor.hpp"

namespace text2loc::coarse {

using engine::Tensor;

/*
 * Symmetric InfoNCE over a batch of matched rows: text[i] pairs with
 * submap[i]; every other row of the batch is a negative. The positive is
 * part of each softmax denominator.
 */

/* text submap^T / tau: [N x N] */
Tensor similarity_logits(const Tensor& text, const Tensor& submap, double tau);

/* -log softmax_i(t_i . S / tau) - log softmax_i(s_i . T / tau) */
Tensor contrastive_pair_loss(std::size_t i, const Tensor& text, const Tensor& submap, double tau);

/* Mean of the per-pair losses */
Tensor batch_loss(const Tensor& text, const Tensor& submap, double tau);

/* Bidirectional hinge over in-batch negatives, mean over pairs (w/o contrastive arm) */
Tensor pairwise_ranking_loss(const Tensor& text, const Tensor& submap, double margin);

} // namespace text2loc::coarse
