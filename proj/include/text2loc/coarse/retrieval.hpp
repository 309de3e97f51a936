#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "text2loc/coarse/model.hpp"

namespace text2loc::coarse {

/* Unit-norm submap descriptors, one row per database submap */
struct RetrievalIndex
{
    std::size_t dim = 0;
    std::vector<double> descriptors; /* rows x dim */
    std::vector<std::uint32_t> ids;

    std::size_t size() const { return ids.size(); }
    std::span<const double> row(std::size_t i) const { return { descriptors.data() + i * dim, dim }; }
};

/* Validates unit-norm rows (1e-6) and unique ids */
RetrievalIndex make_index(std::vector<double> descriptors, std::size_t dim, std::vector<std::uint32_t> ids);

/* Encodes every prepared submap with the model's submap branch */
RetrievalIndex build_index(const std::vector<submap::SubmapInput>& submaps, const CoarseModel& model);

struct RetrievalResult
{
    std::vector<std::uint32_t> ids;
    std::vector<double> scores;
};

/* Top k by dot product, descending; equal scores rank the lower id first */
RetrievalResult retrieve_topk(std::span<const double> descriptor, const RetrievalIndex& index, std::size_t k);

/* Descriptors of many queries: rows x dim, unit rows */
std::vector<double> encode_queries(const std::vector<data::QueryDescription>& queries, const CoarseModel& model);

/* recall@k for each k: fraction of queries whose ground truth is in the top k */
using RecallTable = std::map<std::size_t, double>;

RecallTable retrieval_recall(std::span<const double> query_descriptors, const std::vector<std::uint32_t>& gt_ids,
                             const RetrievalIndex& index, const std::vector<std::size_t>& ks);

RecallTable retrieval_recall(const std::vector<data::QueryDescription>& queries, const RetrievalIndex& index,
                             const CoarseModel& model, const std::vector<std::size_t>& ks = { 1, 3, 5 });

} // namespace text2loc::coarse
