#include "text2loc/fine/pmc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "text2loc/common/errors.hpp"

namespace text2loc::fine {

namespace {

constexpr double kMatchRadius = 1.0;

bool inside(const data::Point3& c, double x, double y, double bound)
{
    return std::max(std::abs(c[0] - x), std::abs(c[1] - y)) < bound;
}

} // namespace

void PMCConfig::validate() const
{
    if (!(alpha > 0.0) || !(beta > 0.0) || !std::isfinite(alpha) || !std::isfinite(beta)) {
        throw ValueError("PMC bounds alpha and beta must be positive");
    }
}

PmcIndex::PmcIndex(const data::Database& database) : database_(&database)
{
    for (const auto& s : database.submaps) {
        by_x_.emplace_back(s.center[0], s.id);
    }
    std::sort(by_x_.begin(), by_x_.end());
}

std::vector<std::uint32_t> PmcIndex::candidates(std::uint32_t submap_id, const data::Point2& target,
                                                const PMCConfig& config) const
{
    config.validate();
    const auto& submaps = database_->submaps;
    if (submap_id >= submaps.size()) {
        throw ValueError("submap " + std::to_string(submap_id) + " is not in the database");
    }
    const auto& si = submaps[submap_id].center;
    /* widened slightly so rounding never drops a member; the exact test decides */
    const double lo = std::max(si[0] - config.alpha, target[0] - config.beta);
    const double hi = std::min(si[0] + config.alpha, target[0] + config.beta);
    const double slack = 1e-9 * (1.0 + std::abs(lo) + std::abs(hi));

    std::vector<std::uint32_t> out;
    auto it = std::lower_bound(by_x_.begin(), by_x_.end(),
                               std::make_pair(lo - slack, std::numeric_limits<std::uint32_t>::min()));
    for (; it != by_x_.end() && it->first <= hi + slack; ++it) {
        const auto& sj = submaps[it->second].center;
        if (inside(sj, si[0], si[1], config.alpha) && inside(sj, target[0], target[1], config.beta)) {
            out.push_back(it->second);
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<std::uint32_t> pmc_candidates(const data::Database& database, std::uint32_t submap_id,
                                          const data::Point2& target, const PMCConfig& config)
{
    return PmcIndex(database).candidates(submap_id, target, config);
}

std::size_t pmc_mismatch(const data::Submap& submap, const data::QueryDescription& query,
                         const data::Scene& scene)
{
    std::size_t missing = 0;
    for (const auto& hint : query.hints) {
        const auto& hinted = scene.instances.at(hint.instance_id);
        double nearest = std::numeric_limits<double>::infinity();
        for (auto id : submap.instance_ids) {
            const auto& inst = scene.instances[id];
            if (inst.class_id != hinted.class_id) {
                continue;
            }
            double d2 = 0.0;
            for (int k = 0; k < 3; ++k) {
                d2 += (inst.center[k] - hinted.center[k]) * (inst.center[k] - hinted.center[k]);
            }
            nearest = std::min(nearest, std::sqrt(d2));
        }
        if (!(nearest <= kMatchRadius)) {
            ++missing;
        }
    }
    return missing;
}

std::uint32_t pmc_filter_and_sample(const std::vector<std::uint32_t>& candidates,
                                    const data::QueryDescription& query, const data::Scene& scene,
                                    const data::Database& database, const PMCConfig& config, Rng& rng)
{
    std::vector<std::uint32_t> kept;
    for (auto id : candidates) {
        if (pmc_mismatch(database.submaps.at(id), query, scene) <= config.max_mismatch) {
            kept.push_back(id);
        }
    }
    if (kept.empty()) {
        return query.gt_submap_id;
    }
    return kept[rng.index(kept.size())];
}

} // namespace text2loc::fine
