#include "text2loc/text/text_encoder.hpp"

#include "text2loc/common/errors.hpp"

namespace text2loc::text {

using namespace engine;

namespace {

void check_tokens(std::span<const std::uint32_t> tokens, const TextBranch& branch)
{
    if (tokens.empty()) {
        throw ValueError("hint has no tokens");
    }
    if (tokens.size() > branch.config.max_len) {
        throw ValueError("hint of " + std::to_string(tokens.size()) + " tokens exceeds max_len "
                         + std::to_string(branch.config.max_len));
    }
    for (auto t : tokens) {
        if (t >= branch.config.vocab_size) {
            throw ValueError("token id " + std::to_string(t) + " outside vocabulary");
        }
    }
}

/* Embeds every token of every hint in one gather */
Tensor embed_all(std::span<const data::QueryDescription* const> queries, const TextBranch& branch,
                 Offsets& token_offsets, Offsets& hint_offsets)
{
    std::vector<std::size_t> ids;
    std::vector<std::size_t> positions;
    token_offsets = { 0 };
    hint_offsets = { 0 };
    for (const auto* q : queries) {
        if (q->hints.empty()) {
            throw ValueError("query has no hints");
        }
        for (const auto& h : q->hints) {
            check_tokens(h.tokens, branch);
            for (std::size_t i = 0; i < h.tokens.size(); ++i) {
                ids.push_back(h.tokens[i]);
                positions.push_back(i);
            }
            token_offsets.push_back(ids.size());
        }
        hint_offsets.push_back(token_offsets.size() - 1);
    }
    return add(gather_rows(branch.token_table, ids), gather_rows(branch.position_table, positions));
}

Tensor pool(const Tensor& x, const std::optional<TransformerBlock>& block, const Offsets& offsets)
{
    if (block) {
        return transformer_block_maxpool(x, *block, offsets);
    }
    return segment_max(x, offsets);
}

} // namespace

TextBranch make_text_branch(ParameterSet& params, const std::string& name,
                            const TextEncoderConfig& config, Rng& rng)
{
    if (config.vocab_size == 0 || config.token_dim == 0 || config.max_len == 0 || config.embed_dim == 0) {
        throw ValueError("text branch dimensions must be positive");
    }
    TextBranch b;
    b.config = config;
    const std::size_t d = config.token_dim;
    /* tables are lookups, so a unit fan-in keeps them O(1) */
    b.token_table = params.add(name + ".token_table", { config.vocab_size, d }, 1, rng);
    b.position_table = params.add(name + ".position_table", { config.max_len, d }, 1, rng);
    if (config.hierarchical) {
        b.intra = make_transformer_block(params, name + ".intra", d, config.heads, 2 * d, rng);
        if (config.inter_hint) {
            b.inter = make_transformer_block(params, name + ".inter", d, config.heads, 2 * d, rng);
        }
    }
    b.projection = make_linear(params, name + ".proj", d, config.embed_dim, rng);
    return b;
}

Tensor embed_hint(std::span<const std::uint32_t> tokens, const TextBranch& branch)
{
    check_tokens(tokens, branch);
    std::vector<std::size_t> ids(tokens.begin(), tokens.end());
    std::vector<std::size_t> positions(tokens.size());
    for (std::size_t i = 0; i < positions.size(); ++i) {
        positions[i] = i;
    }
    return add(gather_rows(branch.token_table, ids), gather_rows(branch.position_table, positions));
}

Tensor intra_text_encode(const Tensor& hint_embedding, const TextBranch& branch)
{
    if (hint_embedding.rows() == 0) {
        throw ValueError("cannot encode an empty hint");
    }
    return reshape(pool(hint_embedding, branch.intra, single_segment(hint_embedding.rows())),
                   { branch.config.token_dim });
}

Tensor inter_text_encode(const Tensor& hint_vectors, const TextBranch& branch)
{
    if (hint_vectors.size() == 0) {
        throw ValueError("cannot encode a description without hints");
    }
    const Tensor pooled = pool(hint_vectors, branch.inter, single_segment(hint_vectors.rows()));
    return reshape(l2_normalize_rows(branch.projection.forward(pooled)), { branch.config.embed_dim });
}

Tensor encode_text(const data::QueryDescription& query, const TextBranch& branch)
{
    const data::QueryDescription* one[] = { &query };
    return reshape(encode_texts(one, branch), { branch.config.embed_dim });
}

HintBatch encode_hints(std::span<const data::QueryDescription* const> queries, const TextBranch& branch)
{
    Offsets token_offsets;
    HintBatch out;
    const Tensor tokens = embed_all(queries, branch, token_offsets, out.hint_offsets);
    out.vectors = pool(tokens, branch.intra, token_offsets);
    return out;
}

Tensor encode_texts(std::span<const data::QueryDescription* const> queries, const TextBranch& branch)
{
    if (queries.empty()) {
        throw ValueError("no queries to encode");
    }
    const HintBatch hints = encode_hints(queries, branch);
    const Tensor pooled = pool(hints.vectors, branch.inter, hints.hint_offsets);
    return l2_normalize_rows(branch.projection.forward(pooled));
}

} // namespace text2loc::text
