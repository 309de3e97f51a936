#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "text2loc/common/rng.hpp"
#include "text2loc/engine/ops.hpp"
#include "text2loc/engine/tensor.hpp"

namespace text2loc::engine {

/*
 * Ordered table of named trainable tensors. Names are hierarchical
 * ("text.intra.attn.wq") and double as checkpoint keys.
 */
class ParameterSet
{
public:
    /* Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] */
    Tensor add(const std::string& name, Shape shape, std::size_t fan_in, Rng& rng);
    Tensor add_zeros(const std::string& name, Shape shape);

    bool contains(const std::string& name) const { return index_.count(name) > 0; }
    const Tensor& get(const std::string& name) const;
    const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
    std::vector<Tensor> tensors() const;
    std::size_t scalar_count() const;
    /* Scalar count of every parameter whose name starts with prefix */
    std::size_t scalar_count(const std::string& prefix) const;

    void zero_grad();

private:
    std::vector<std::pair<std::string, Tensor>> entries_;
    std::map<std::string, std::size_t> index_;
};

struct Linear
{
    Tensor weight; /* [in x out] */
    Tensor bias;   /* [out], undefined when bias-free */

    Tensor forward(const Tensor& x) const;
    std::size_t in_features() const { return weight.rows(); }
    std::size_t out_features() const { return weight.cols(); }
};

Linear make_linear(ParameterSet& params, const std::string& name, std::size_t in,
                   std::size_t out, Rng& rng, bool with_bias = true);

/* Linear layers with ReLU between consecutive layers (none after the last) */
struct Mlp
{
    std::vector<Linear> layers;

    Tensor forward(const Tensor& x) const;
};

Mlp make_mlp(ParameterSet& params, const std::string& name, const std::vector<std::size_t>& dims,
             Rng& rng);

/*
 * Multi-head attention: per-head projections stacked column-wise in
 * wq/wk/wv (bias-free), concatenated heads projected by the output layer.
 */
struct MultiHeadAttention
{
    Tensor wq;
    Tensor wk;
    Tensor wv;
    Linear output;
    std::size_t heads = 1;

    std::size_t dim() const { return wq.rows(); }
};

MultiHeadAttention make_multi_head_attention(ParameterSet& params, const std::string& name,
                                             std::size_t dim, std::size_t heads, Rng& rng);

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const MultiHeadAttention& mha, const Offsets& q_offsets,
                            const Offsets& k_offsets);

/* Single-segment form */
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const MultiHeadAttention& mha);

/* Residual MHSA followed by a residual two-layer ReLU feed-forward net */
struct TransformerBlock
{
    MultiHeadAttention attention;
    Mlp ffn;
};

TransformerBlock make_transformer_block(ParameterSet& params, const std::string& name,
                                        std::size_t dim, std::size_t heads,
                                        std::size_t ffn_hidden, Rng& rng);

/* F~ = Q + MHA(Q, KV, KV); F = F~ + FFN(F~), per segment pair */
Tensor transformer_cross(const Tensor& queries, const Tensor& context,
                         const TransformerBlock& block, const Offsets& q_offsets,
                         const Offsets& kv_offsets);

/* Self-attention form over each row segment of x; rows preserved */
Tensor transformer_rows(const Tensor& x, const TransformerBlock& block, const Offsets& offsets);

/* Transformer followed by column-wise max inside each segment: [segments x d] */
Tensor transformer_block_maxpool(const Tensor& x, const TransformerBlock& block,
                                 const Offsets& offsets);

/* Whole-input form: [n x d] -> [d] */
Tensor transformer_block_maxpool(const Tensor& x, const TransformerBlock& block);

} // namespace text2loc::engine
