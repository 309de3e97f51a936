#include "text2loc/fine/localize.hpp"

#include <algorithm>
#include <cmath>

#include "text2loc/common/errors.hpp"

namespace text2loc::fine {

using namespace engine;

namespace {

constexpr std::size_t kPairChunk = 64;

} // namespace

double planar_error(const data::Point2& a, const data::Point2& b)
{
    return std::hypot(a[0] - b[0], a[1] - b[1]);
}

std::vector<LocalizationResult> localize_all(const std::vector<data::QueryDescription>& queries,
                                             const std::vector<std::vector<std::uint32_t>>& candidates,
                                             const FineModel& model,
                                             const std::vector<submap::SubmapInput>& submaps,
                                             const data::Database& database)
{
    if (queries.size() != candidates.size()) {
        throw ValueError("one candidate list per query is required");
    }
    std::vector<std::pair<std::size_t, std::uint32_t>> pairs;
    std::vector<LocalizationResult> out(queries.size());
    for (std::size_t q = 0; q < queries.size(); ++q) {
        if (candidates[q].empty()) {
            throw ValueError("localization needs at least one candidate per query");
        }
        for (auto id : candidates[q]) {
            if (id >= submaps.size() || id >= database.submaps.size()) {
                throw ValueError("candidate submap " + std::to_string(id) + " is not in the database");
            }
            pairs.emplace_back(q, id);
        }
    }

    NoGradGuard no_grad;
    for (std::size_t begin = 0; begin < pairs.size(); begin += kPairChunk) {
        const std::size_t end = std::min(pairs.size(), begin + kPairChunk);
        std::vector<const data::QueryDescription*> qs;
        std::vector<const submap::SubmapInput*> maps;
        for (std::size_t i = begin; i < end; ++i) {
            qs.push_back(&queries[pairs[i].first]);
            maps.push_back(&submaps[pairs[i].second]);
        }
        const Tensor offsets = predict_offsets(qs, maps, model, database.cell);
        for (std::size_t i = begin; i < end; ++i) {
            const auto [q, id] = pairs[i];
            const auto& c = database.submaps[id].center;
            const std::size_t r = i - begin;
            const data::Point2 p { c[0] + offsets.values()[2 * r], c[1] + offsets.values()[2 * r + 1] };
            out[q].ids.push_back(id);
            out[q].positions.push_back(p);
            out[q].errors.push_back(planar_error(p, queries[q].target));
        }
    }
    return out;
}

LocalizationResult localize(const data::QueryDescription& query, const std::vector<std::uint32_t>& candidates,
                            const FineModel& model, const std::vector<submap::SubmapInput>& submaps,
                            const data::Database& database)
{
    return localize_all({ query }, { candidates }, model, submaps, database).front();
}

LocalizationResult center_baseline(const data::QueryDescription& query, const std::vector<std::uint32_t>& candidates,
                                   const data::Database& database)
{
    LocalizationResult r;
    for (auto id : candidates) {
        const auto& c = database.submaps.at(id).center;
        const data::Point2 p { c[0], c[1] };
        r.ids.push_back(id);
        r.positions.push_back(p);
        r.errors.push_back(planar_error(p, query.target));
    }
    return r;
}

LocalizationGrid localization_recall(const std::vector<LocalizationResult>& results,
                                     const std::vector<std::size_t>& ks, const std::vector<double>& thresholds)
{
    LocalizationGrid grid;
    for (auto k : ks) {
        if (k == 0) {
            throw ValueError("k must be at least 1");
        }
        for (double eps : thresholds) {
            std::size_t hits = 0;
            for (const auto& r : results) {
                const std::size_t n = std::min(k, r.errors.size());
                if (std::any_of(r.errors.begin(), r.errors.begin() + static_cast<long>(n),
                                [&](double e) { return e < eps; })) {
                    ++hits;
                }
            }
            grid[{ k, eps }] = results.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(results.size());
        }
    }
    return grid;
}

double mean_top1_error(const std::vector<LocalizationResult>& results)
{
    if (results.empty()) {
        throw ValueError("no localization results");
    }
    double total = 0.0;
    for (const auto& r : results) {
        total += r.errors.at(0);
    }
    return total / static_cast<double>(results.size());
}

} // namespace text2loc::fine
