#include "text2loc/engine/nn.hpp"

#include <cmath>

#include "text2loc/common/errors.hpp"

namespace text2loc::engine {

Tensor ParameterSet::add(const std::string& name, Shape shape, std::size_t fan_in, Rng& rng)
{
    if (index_.count(name))
        throw ValueError("duplicate parameter name " + name);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> values(shape_size(shape));
    for (auto& v : values)
        v = rng.uniform(-bound, bound);
    Tensor t(std::move(shape), std::move(values), true);
    index_[name] = entries_.size();
    entries_.emplace_back(name, t);
    return t;
}

Tensor ParameterSet::add_zeros(const std::string& name, Shape shape)
{
    if (index_.count(name))
        throw ValueError("duplicate parameter name " + name);
    auto t = Tensor::zeros(std::move(shape), true);
    index_[name] = entries_.size();
    entries_.emplace_back(name, t);
    return t;
}

const Tensor& ParameterSet::get(const std::string& name) const
{
    const auto it = index_.find(name);
    if (it == index_.end())
        throw ValueError("unknown parameter " + name);
    return entries_[it->second].second;
}

std::vector<Tensor> ParameterSet::tensors() const
{
    std::vector<Tensor> out;
    out.reserve(entries_.size());
    for (const auto& [name, t] : entries_)
        out.push_back(t);
    return out;
}

std::size_t ParameterSet::scalar_count() const
{
    std::size_t n = 0;
    for (const auto& [name, t] : entries_)
        n += t.size();
    return n;
}

std::size_t ParameterSet::scalar_count(const std::string& prefix) const
{
    std::size_t n = 0;
    for (const auto& [name, t] : entries_)
        if (name.compare(0, prefix.size(), prefix) == 0)
            n += t.size();
    return n;
}

void ParameterSet::zero_grad()
{
    for (auto& [name, t] : entries_)
        t.zero_grad();
}

Tensor Linear::forward(const Tensor& x) const
{
    auto y = matmul(x, weight);
    return bias.defined() ? add_bias(y, bias) : y;
}

Linear make_linear(ParameterSet& params, const std::string& name, std::size_t in,
                   std::size_t out, Rng& rng, bool with_bias)
{
    Linear layer;
    layer.weight = params.add(name + ".weight", { in, out }, in, rng);
    if (with_bias)
        layer.bias = params.add(name + ".bias", { out }, in, rng);
    return layer;
}

Tensor Mlp::forward(const Tensor& x) const
{
    Tensor h = x;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        h = layers[i].forward(h);
        if (i + 1 < layers.size())
            h = relu(h);
    }
    return h;
}

Mlp make_mlp(ParameterSet& params, const std::string& name, const std::vector<std::size_t>& dims,
             Rng& rng)
{
    if (dims.size() < 2)
        throw ValueError("mlp " + name + " needs at least input and output widths");
    Mlp mlp;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i)
        mlp.layers.push_back(
            make_linear(params, name + "." + std::to_string(i), dims[i], dims[i + 1], rng));
    return mlp;
}

MultiHeadAttention make_multi_head_attention(ParameterSet& params, const std::string& name,
                                             std::size_t dim, std::size_t heads, Rng& rng)
{
    if (heads == 0 || dim % heads != 0)
        throw ShapeError("multi-head attention: model dim " + std::to_string(dim) +
                         " not divisible by " + std::to_string(heads) + " heads");
    MultiHeadAttention mha;
    mha.heads = heads;
    mha.wq = params.add(name + ".wq", { dim, dim }, dim, rng);
    mha.wk = params.add(name + ".wk", { dim, dim }, dim, rng);
    mha.wv = params.add(name + ".wv", { dim, dim }, dim, rng);
    mha.output = make_linear(params, name + ".out", dim, dim, rng);
    return mha;
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const MultiHeadAttention& mha, const Offsets& q_offsets,
                            const Offsets& k_offsets)
{
    if (mha.heads == 0 || mha.dim() % mha.heads != 0)
        throw ShapeError("multi-head attention: model dim " + std::to_string(mha.dim()) +
                         " not divisible by " + std::to_string(mha.heads) + " heads");
    const auto heads = attention(matmul(q, mha.wq), matmul(k, mha.wk), matmul(v, mha.wv),
                                 mha.heads, q_offsets, k_offsets);
    return mha.output.forward(heads);
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const MultiHeadAttention& mha)
{
    return multi_head_attention(q, k, v, mha, single_segment(q.rows()), single_segment(k.rows()));
}

TransformerBlock make_transformer_block(ParameterSet& params, const std::string& name,
                                        std::size_t dim, std::size_t heads,
                                        std::size_t ffn_hidden, Rng& rng)
{
    TransformerBlock block;
    block.attention = make_multi_head_attention(params, name + ".attn", dim, heads, rng);
    block.ffn = make_mlp(params, name + ".ffn", { dim, ffn_hidden, dim }, rng);
    return block;
}

Tensor transformer_cross(const Tensor& queries, const Tensor& context,
                         const TransformerBlock& block, const Offsets& q_offsets,
                         const Offsets& kv_offsets)
{
    const auto attended = add(
        queries, multi_head_attention(queries, context, context, block.attention, q_offsets,
                                      kv_offsets));
    return add(attended, block.ffn.forward(attended));
}

Tensor transformer_rows(const Tensor& x, const TransformerBlock& block, const Offsets& offsets)
{
    return transformer_cross(x, x, block, offsets, offsets);
}

Tensor transformer_block_maxpool(const Tensor& x, const TransformerBlock& block,
                                 const Offsets& offsets)
{
    for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
        if (offsets[s + 1] == offsets[s])
            throw ShapeError("transformer_block_maxpool: segment " + std::to_string(s) +
                             " has no rows");
    }
    return segment_max(transformer_rows(x, block, offsets), offsets);
}

Tensor transformer_block_maxpool(const Tensor& x, const TransformerBlock& block)
{
    if (!x.defined() || x.rank() != 2 || x.rows() == 0)
        throw ShapeError("transformer_block_maxpool: need at least one row");
    return reshape(transformer_block_maxpool(x, block, single_segment(x.rows())), { x.cols() });
}

} // namespace text2loc::engine
