#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "text2loc/data/dataset.hpp"
#include "text2loc/engine/nn.hpp"

namespace text2loc::text {

using engine::Offsets;
using engine::Tensor;

struct TextEncoderConfig
{
    std::size_t vocab_size = 0;
    std::size_t token_dim = 64;
    std::size_t max_len = 16;
    std::size_t heads = 4;
    /* Output descriptor width C */
    std::size_t embed_dim = 256;
    /* false drops both transformer blocks and max-pools raw embeddings (w/o HTM) */
    bool hierarchical = true;
    /* false skips the inter-hint block; the fine stage fuses hint vectors itself */
    bool inter_hint = true;
};

/*
 * Trainable token table and learned positional table standing in for a
 * frozen language model, followed by the intra-hint block (over tokens)
 * and the inter-hint block (over hints), each max-pooled.
 */
struct TextBranch
{
    TextEncoderConfig config;
    Tensor token_table;    /* [vocab x token_dim] */
    Tensor position_table; /* [max_len x token_dim] */
    std::optional<engine::TransformerBlock> intra;
    std::optional<engine::TransformerBlock> inter;
    engine::Linear projection; /* token_dim -> embed_dim */
};

/* Parameters are registered under "<name>.*" */
TextBranch make_text_branch(engine::ParameterSet& params, const std::string& name,
                            const TextEncoderConfig& config, Rng& rng);

/* Token plus position embedding: [n_tok x token_dim] */
Tensor embed_hint(std::span<const std::uint32_t> tokens, const TextBranch& branch);

/* Intra-hint block then max over tokens: [token_dim] */
Tensor intra_text_encode(const Tensor& hint_embedding, const TextBranch& branch);

/* Inter-hint block then max over hints, projected and normalized: [embed_dim] */
Tensor inter_text_encode(const Tensor& hint_vectors, const TextBranch& branch);

Tensor encode_text(const data::QueryDescription& query, const TextBranch& branch);

/* Per-hint vectors for a batch: rows grouped by query */
struct HintBatch
{
    Tensor vectors;        /* [total_hints x token_dim] */
    Offsets hint_offsets;  /* per query, into vectors' rows */
};

HintBatch encode_hints(std::span<const data::QueryDescription* const> queries,
                       const TextBranch& branch);

/* Batched encode_text: [queries x embed_dim], unit rows */
Tensor encode_texts(std::span<const data::QueryDescription* const> queries, const TextBranch& branch);

} // namespace text2loc::text
