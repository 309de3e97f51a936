#include "text2loc/submap/submap_encoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "text2loc/common/errors.hpp"

namespace text2loc::submap {

using namespace engine;
using data::kPointWidth;

namespace {

bool lex_less(const double* a, const double* b)
{
    return std::lexicographical_compare(a, a + kPointWidth, b, b + kPointWidth);
}

/* Embeddings of many instances; instance_offsets index rows of the point tensor */
Tensor encode_instance_rows(std::span<const InstanceInput* const> instances, const SubmapBranch& b)
{
    std::vector<double> pts;
    std::vector<double> rgb;
    std::vector<double> pos;
    std::vector<double> counts;
    std::vector<std::size_t> sizes;
    for (const auto* inst : instances) {
        if (inst->rows() == 0 || inst->point_count == 0) {
            throw ValueError("instance has no points");
        }
        pts.insert(pts.end(), inst->points.begin(), inst->points.end());
        sizes.push_back(inst->rows());
        rgb.insert(rgb.end(), inst->mean_rgb.begin(), inst->mean_rgb.end());
        pos.insert(pos.end(), inst->position.begin(), inst->position.end());
        counts.push_back(std::log10(static_cast<double>(inst->point_count)));
    }
    const std::size_t n = instances.size();
    const std::size_t total = pts.size() / kPointWidth;
    const Tensor point_feats = segment_max(b.point_mlp.forward(Tensor({ total, kPointWidth }, std::move(pts))),
                                           offsets_from_counts(sizes));
    std::vector<Tensor> parts { point_feats, b.color_mlp.forward(Tensor({ n, 3 }, std::move(rgb))),
                                b.position_mlp.forward(Tensor({ n, 3 }, std::move(pos))) };
    if (b.count_mlp) {
        parts.push_back(b.count_mlp->forward(Tensor({ n, 1 }, std::move(counts))));
    }
    return b.projection.forward(concat_cols(parts));
}

Tensor aggregate_rows(const Tensor& x, const Offsets& offsets, const SubmapBranch& b)
{
    if (!b.aggregation) {
        throw ValueError("submap branch was built without aggregation");
    }
    const Tensor attended = add(x, multi_head_attention(x, x, x, *b.aggregation, offsets, offsets));
    return l2_normalize_rows(segment_max(attended, offsets));
}

} // namespace

SubmapBranch make_submap_branch(ParameterSet& params, const std::string& name,
                                const SubmapEncoderConfig& config, Rng& rng)
{
    const std::size_t f = config.feature_dim;
    const std::size_t c = config.embed_dim;
    if (f == 0 || c == 0 || config.point_hidden == 0) {
        throw ValueError("submap branch dimensions must be positive");
    }
    SubmapBranch b;
    b.config = config;
    b.point_mlp = make_mlp(params, name + ".points", { kPointWidth, config.point_hidden, f }, rng);
    b.color_mlp = make_mlp(params, name + ".color", { 3, f, f, f }, rng);
    b.position_mlp = make_mlp(params, name + ".position", { 3, f, f, f }, rng);
    if (config.number_encoder) {
        b.count_mlp = make_mlp(params, name + ".count", { 1, f, f, f }, rng);
    }
    const std::size_t concat = f * (config.number_encoder ? 4 : 3);
    b.projection = make_mlp(params, name + ".proj", { concat, c, c, c }, rng);
    if (config.aggregation) {
        b.aggregation = make_multi_head_attention(params, name + ".aggregate", c, 1, rng);
    }
    return b;
}

std::vector<double> canonical_subsample(std::span<const double> local_points, std::size_t max_points)
{
    const std::size_t n = local_points.size() / kPointWidth;
    if (n == 0 || local_points.size() % kPointWidth != 0) {
        throw ValueError("point array must hold a positive multiple of 6 values");
    }
    if (max_points == 0) {
        throw ValueError("max_points must be positive");
    }
    const double* p = local_points.data();
    auto row = [&](std::size_t i) { return p + i * kPointWidth; };
    auto dist2 = [&](std::size_t i, std::size_t j) {
        double s = 0.0;
        for (std::size_t k = 0; k < 3; ++k) {
            const double d = row(i)[k] - row(j)[k];
            s += d * d;
        }
        return s;
    };

    std::size_t first = 0;
    for (std::size_t i = 1; i < n; ++i) {
        if (lex_less(row(i), row(first))) {
            first = i;
        }
    }
    std::vector<std::size_t> chosen { first };
    std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
    std::vector<bool> taken(n, false);
    taken[first] = true;
    while (chosen.size() < max_points) {
        const std::size_t last = chosen.back();
        std::size_t best = n;
        for (std::size_t i = 0; i < n; ++i) {
            if (taken[i]) {
                continue;
            }
            nearest[i] = std::min(nearest[i], dist2(i, last));
            if (best == n || nearest[i] > nearest[best]
                || (nearest[i] == nearest[best] && lex_less(row(i), row(best)))) {
                best = i;
            }
        }
        if (best == n) {
            break;
        }
        /* exact duplicates of a chosen row add nothing to a max-pool */
        if (nearest[best] == 0.0) {
            bool duplicate = false;
            for (auto c : chosen) {
                if (std::equal(row(c), row(c) + kPointWidth, row(best))) {
                    duplicate = true;
                    break;
                }
            }
            if (duplicate) {
                /* every remaining candidate has distance 0; drop exact duplicates */
                taken[best] = true;
                continue;
            }
        }
        taken[best] = true;
        chosen.push_back(best);
    }
    std::sort(chosen.begin(), chosen.end(), [&](std::size_t a, std::size_t b) { return lex_less(row(a), row(b)); });
    std::vector<double> out;
    out.reserve(chosen.size() * kPointWidth);
    for (auto c : chosen) {
        out.insert(out.end(), row(c), row(c) + kPointWidth);
    }
    return out;
}

InstanceInput prepare_instance(const data::ObjectInstance& instance, const data::Point3& submap_center,
                               double cell, std::size_t max_points)
{
    const std::size_t n = instance.point_count();
    if (n == 0) {
        throw ValueError("instance has no points");
    }
    std::vector<double> local(instance.points);
    InstanceInput in;
    for (std::size_t i = 0; i < n; ++i) {
        double* r = local.data() + i * kPointWidth;
        for (std::size_t k = 0; k < 3; ++k) {
            r[k] -= instance.center[k];
            in.mean_rgb[k] += r[3 + k];
        }
    }
    for (std::size_t k = 0; k < 3; ++k) {
        in.mean_rgb[k] /= static_cast<double>(n);
        in.position[k] = (instance.center[k] - submap_center[k]) / (cell / 2.0);
    }
    in.points = canonical_subsample(local, max_points);
    in.point_count = n;
    return in;
}

std::vector<SubmapInput> prepare_submaps(const data::Scene& scene, const data::Database& database,
                                         std::size_t max_points)
{
    /* subsampling does not depend on the submap, so do it once per instance */
    std::vector<std::optional<InstanceInput>> cache(scene.instances.size());
    std::vector<SubmapInput> out;
    out.reserve(database.submaps.size());
    for (const auto& s : database.submaps) {
        SubmapInput in;
        in.id = s.id;
        for (auto id : s.instance_ids) {
            const auto& inst = scene.instances.at(id);
            if (!cache[id]) {
                cache[id] = prepare_instance(inst, s.center, database.cell, max_points);
            }
            InstanceInput copy = *cache[id];
            for (std::size_t k = 0; k < 3; ++k) {
                copy.position[k] = (inst.center[k] - s.center[k]) / (database.cell / 2.0);
            }
            in.instances.push_back(std::move(copy));
        }
        out.push_back(std::move(in));
    }
    return out;
}

Tensor encode_points(const Tensor& points, const SubmapBranch& branch)
{
    if (points.rows() == 0 || points.size() == 0) {
        throw ValueError("cannot encode an empty point set");
    }
    if (points.cols() != kPointWidth) {
        throw ShapeError("point set must have 6 columns, got " + shape_string(points.shape()));
    }
    return max_axis(branch.point_mlp.forward(points), 0);
}

Tensor encode_count(std::size_t n, const SubmapBranch& branch)
{
    if (n == 0) {
        throw ValueError("point count must be at least 1");
    }
    if (!branch.count_mlp) {
        throw ValueError("submap branch was built without the number encoder");
    }
    const Tensor x({ 1, 1 }, { std::log10(static_cast<double>(n)) });
    return reshape(branch.count_mlp->forward(x), { branch.config.feature_dim });
}

Tensor encode_instance(const InstanceInput& instance, const SubmapBranch& branch)
{
    const InstanceInput* one[] = { &instance };
    return reshape(encode_instance_rows(one, branch), { branch.config.embed_dim });
}

Tensor encode_instances(std::span<const InstanceInput* const> instances, const SubmapBranch& branch)
{
    if (instances.empty()) {
        throw ValueError("no instances to encode");
    }
    return encode_instance_rows(instances, branch);
}

Tensor aggregate_submap(const Tensor& embeddings, const std::vector<bool>& valid, const SubmapBranch& branch)
{
    if (valid.size() != embeddings.rows()) {
        throw ShapeError("valid mask of " + std::to_string(valid.size()) + " slots for embeddings "
                         + shape_string(embeddings.shape()));
    }
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < valid.size(); ++i) {
        if (valid[i]) {
            rows.push_back(i);
        }
    }
    if (rows.empty()) {
        throw ValueError("submap has no valid instances");
    }
    const Tensor x = gather_rows(embeddings, rows);
    return reshape(aggregate_rows(x, single_segment(rows.size()), branch), { branch.config.embed_dim });
}

Tensor encode_submap(const SubmapInput& submap, const SubmapBranch& branch)
{
    const SubmapInput* one[] = { &submap };
    return reshape(encode_submaps(one, branch), { branch.config.embed_dim });
}

InstanceBatch encode_submap_instances(std::span<const SubmapInput* const> submaps, const SubmapBranch& branch)
{
    std::vector<const InstanceInput*> all;
    std::vector<std::size_t> counts;
    for (const auto* s : submaps) {
        if (s->instances.empty()) {
            throw ValueError("submap " + std::to_string(s->id) + " has no valid instances");
        }
        for (const auto& inst : s->instances) {
            all.push_back(&inst);
        }
        counts.push_back(s->instances.size());
    }
    if (all.empty()) {
        throw ValueError("no submaps to encode");
    }
    return { encode_instance_rows(all, branch), offsets_from_counts(counts) };
}

Tensor encode_submaps(std::span<const SubmapInput* const> submaps, const SubmapBranch& branch)
{
    const auto batch = encode_submap_instances(submaps, branch);
    return aggregate_rows(batch.embeddings, batch.offsets, branch);
}

} // namespace text2loc::submap
