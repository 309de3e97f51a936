#include "text2loc/coarse/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "text2loc/common/errors.hpp"

namespace text2loc::coarse {

using namespace engine;

namespace {

constexpr std::size_t kEncodeChunk = 64;

} // namespace

RetrievalIndex make_index(std::vector<double> descriptors, std::size_t dim, std::vector<std::uint32_t> ids)
{
    if (dim == 0 || descriptors.size() != ids.size() * dim) {
        throw ShapeError("index needs ids.size() x dim descriptor values");
    }
    if (std::set<std::uint32_t>(ids.begin(), ids.end()).size() != ids.size()) {
        throw ValueError("index ids must be unique");
    }
    for (std::size_t r = 0; r < ids.size(); ++r) {
        double n = 0.0;
        for (std::size_t c = 0; c < dim; ++c) {
            n += descriptors[r * dim + c] * descriptors[r * dim + c];
        }
        if (std::abs(std::sqrt(n) - 1.0) > 1e-6) {
            throw ValueError("index row " + std::to_string(r) + " is not unit-norm");
        }
    }
    return { dim, std::move(descriptors), std::move(ids) };
}

RetrievalIndex build_index(const std::vector<submap::SubmapInput>& submaps, const CoarseModel& model)
{
    NoGradGuard no_grad;
    std::vector<double> rows;
    std::vector<std::uint32_t> ids;
    for (std::size_t begin = 0; begin < submaps.size(); begin += kEncodeChunk) {
        const std::size_t end = std::min(submaps.size(), begin + kEncodeChunk);
        std::vector<const submap::SubmapInput*> chunk;
        for (std::size_t i = begin; i < end; ++i) {
            chunk.push_back(&submaps[i]);
            ids.push_back(submaps[i].id);
        }
        const Tensor d = submap::encode_submaps(chunk, model.submap);
        rows.insert(rows.end(), d.values().begin(), d.values().end());
    }
    return make_index(std::move(rows), model.config.embed_dim, std::move(ids));
}

RetrievalResult retrieve_topk(std::span<const double> descriptor, const RetrievalIndex& index, std::size_t k)
{
    if (index.size() == 0) {
        throw ValueError("cannot retrieve from an empty index");
    }
    if (descriptor.size() != index.dim) {
        throw ShapeError("descriptor of width " + std::to_string(descriptor.size()) + " against an index of width "
                         + std::to_string(index.dim));
    }
    if (k == 0 || k > index.size()) {
        throw ValueError("k must be in [1, " + std::to_string(index.size()) + "]");
    }
    std::vector<double> scores(index.size());
    for (std::size_t r = 0; r < index.size(); ++r) {
        const auto row = index.row(r);
        scores[r] = std::inner_product(row.begin(), row.end(), descriptor.begin(), 0.0);
    }
    std::vector<std::size_t> order(index.size());
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + static_cast<long>(k), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) {
            return scores[a] > scores[b];
        }
        return index.ids[a] < index.ids[b];
    });
    RetrievalResult out;
    for (std::size_t i = 0; i < k; ++i) {
        out.ids.push_back(index.ids[order[i]]);
        out.scores.push_back(scores[order[i]]);
    }
    return out;
}

std::vector<double> encode_queries(const std::vector<data::QueryDescription>& queries, const CoarseModel& model)
{
    NoGradGuard no_grad;
    std::vector<double> rows;
    for (std::size_t begin = 0; begin < queries.size(); begin += kEncodeChunk) {
        const std::size_t end = std::min(queries.size(), begin + kEncodeChunk);
        std::vector<const data::QueryDescription*> chunk;
        for (std::size_t i = begin; i < end; ++i) {
            chunk.push_back(&queries[i]);
        }
        const Tensor d = text::encode_texts(chunk, model.text);
        rows.insert(rows.end(), d.values().begin(), d.values().end());
    }
    return rows;
}

RecallTable retrieval_recall(std::span<const double> query_descriptors, const std::vector<std::uint32_t>& gt_ids,
                             const RetrievalIndex& index, const std::vector<std::size_t>& ks)
{
    if (ks.empty()) {
        throw ValueError("no k values requested");
    }
    if (query_descriptors.size() != gt_ids.size() * index.dim) {
        throw ShapeError("query descriptors do not match the ground-truth list");
    }
    const std::size_t k_max = *std::max_element(ks.begin(), ks.end());
    RecallTable table;
    for (auto k : ks) {
        table[k] = 0.0;
    }
    if (gt_ids.empty()) {
        return table;
    }
    for (std::size_t q = 0; q < gt_ids.size(); ++q) {
        const auto result = retrieve_topk(query_descriptors.subspan(q * index.dim, index.dim), index, k_max);
        const auto hit = std::find(result.ids.begin(), result.ids.end(), gt_ids[q]);
        const auto rank = static_cast<std::size_t>(hit - result.ids.begin());
        for (auto k : ks) {
            if (rank < k) {
                table[k] += 1.0;
            }
        }
    }
    for (auto& [k, v] : table) {
        v /= static_cast<double>(gt_ids.size());
    }
    return table;
}

RecallTable retrieval_recall(const std::vector<data::QueryDescription>& queries, const RetrievalIndex& index,
                             const CoarseModel& model, const std::vector<std::size_t>& ks)
{
    std::vector<std::uint32_t> gt;
    for (const auto& q : queries) {
        gt.push_back(q.gt_submap_id);
    }
    return retrieval_recall(encode_queries(queries, model), gt, index, ks);
}

} // namespace text2loc::coarse
