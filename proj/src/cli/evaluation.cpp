#include "text2loc/cli/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <Eigen/Dense>

#include "text2loc/common/errors.hpp"
#include "text2loc/common/rng.hpp"
#include "text2loc/common/text_format.hpp"

namespace text2loc::cli {

using nlohmann::json;

namespace {

const std::vector<std::size_t> kRetrievalKs { 1, 3, 5 };

std::string fixed(double v, int digits = 4)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

double recall_below(const std::vector<fine::LocalizationResult>& results, double eps)
{
    return fine::localization_recall(results, { 1 }, { eps }).at({ 1, eps });
}

} // namespace

EvalArtifacts evaluate(const data::Dataset& dataset, const std::vector<data::QueryDescription>& queries,
                       const std::string& split, const coarse::CoarseModel& coarse_model,
                       const fine::FineModel* fine_model, std::size_t candidates)
{
    if (queries.empty()) {
        throw DataError("split '" + split + "' has no queries");
    }
    EvalArtifacts out;
    auto& report = out.report;
    report.split = split;
    report.queries = queries.size();

    const auto coarse_submaps = submap::prepare_submaps(dataset.scene, dataset.database,
                                                        coarse_model.config.max_points);
    out.index = coarse::build_index(coarse_submaps, coarse_model);
    out.text_descriptors = coarse::encode_queries(queries, coarse_model);

    std::vector<std::uint32_t> gt_ids;
    for (const auto& q : queries) {
        gt_ids.push_back(q.gt_submap_id);
    }
    std::vector<std::size_t> ks;
    for (auto k : kRetrievalKs) {
        ks.push_back(std::min(k, out.index.size()));
    }
    const auto table = coarse::retrieval_recall(out.text_descriptors, gt_ids, out.index, ks);
    for (std::size_t i = 0; i < kRetrievalKs.size(); ++i) {
        report.retrieval[kRetrievalKs[i]] = table.at(ks[i]);
    }
    report.candidates = std::min(candidates, out.index.size());
    if (fine_model == nullptr) {
        return out;
    }

    std::vector<std::vector<std::uint32_t>> topk;
    for (std::size_t q = 0; q < queries.size(); ++q) {
        const std::span<const double> desc(out.text_descriptors.data() + q * out.index.dim, out.index.dim);
        topk.push_back(coarse::retrieve_topk(desc, out.index, report.candidates).ids);
    }
    const auto fine_submaps = submap::prepare_submaps(dataset.scene, dataset.database,
                                                      fine_model->config.max_points);
    const auto results = fine::localize_all(queries, topk, *fine_model, fine_submaps, dataset.database);
    report.localization = fine::localization_recall(results);
    report.mean_top1_error = fine::mean_top1_error(results);

    std::vector<std::vector<std::uint32_t>> gt_lists;
    std::vector<fine::LocalizationResult> baseline;
    for (const auto& q : queries) {
        gt_lists.push_back({ q.gt_submap_id });
        baseline.push_back(fine::center_baseline(q, gt_lists.back(), dataset.database));
    }
    const auto gt_results = fine::localize_all(queries, gt_lists, *fine_model, fine_submaps, dataset.database);
    report.gt = GtLocalization { fine::mean_top1_error(gt_results), fine::mean_top1_error(baseline),
                                 recall_below(gt_results, 5.0), recall_below(baseline, 5.0) };
    return out;
}

json report_json(const EvalReport& r)
{
    json j;
    j["split"] = r.split;
    j["queries"] = r.queries;
    json retrieval = json::object();
    for (const auto& [k, v] : r.retrieval) {
        retrieval[std::to_string(k)] = v;
    }
    j["retrieval_recall"] = retrieval;
    if (r.localization) {
        j["candidates"] = r.candidates;
        json grid = json::object();
        for (const auto& [key, v] : *r.localization) {
            grid[std::to_string(key.first)][format_double(key.second)] = v;
        }
        j["localization_recall"] = grid;
        j["mean_top1_error_m"] = *r.mean_top1_error;
    }
    if (r.gt) {
        j["gt_submap"] = { { "mean_error_m", r.gt->mean_error },
                           { "baseline_mean_error_m", r.gt->baseline_mean_error },
                           { "recall_top1_5m", r.gt->recall_at_5m },
                           { "baseline_recall_top1_5m", r.gt->baseline_recall_at_5m } };
    }
    return j;
}

std::string report_text(const EvalReport& r)
{
    std::string s = "split " + r.split + ", " + std::to_string(r.queries) + " queries\n\n";
    s += "retrieval recall\n";
    for (const auto& [k, v] : r.retrieval) {
        s += "  top-" + std::to_string(k) + "  " + fixed(v) + "\n";
    }
    if (r.localization) {
        s += "\nlocalization recall over coarse top-" + std::to_string(r.candidates) + "\n";
        s += "  k     eps<5m  eps<10m eps<15m\n";
        std::size_t row_k = 0;
        for (const auto& [key, v] : *r.localization) {
            if (key.first != row_k) {
                if (row_k != 0) {
                    s += "\n";
                }
                row_k = key.first;
                char head[16];
                std::snprintf(head, sizeof head, "  %-4zu", row_k);
                s += head;
            }
            s += "  " + fixed(v);
        }
        s += "\n  mean top-1 error " + fixed(*r.mean_top1_error, 3) + " m\n";
    }
    if (r.gt) {
        s += "\ngt submap          model    center\n";
        s += "  mean error (m)   " + fixed(r.gt->mean_error, 3) + "    " + fixed(r.gt->baseline_mean_error, 3) + "\n";
        s += "  recall eps<5m    " + fixed(r.gt->recall_at_5m) + "   " + fixed(r.gt->baseline_recall_at_5m) + "\n";
    }
    return s;
}

std::vector<ScatterPoint> pca_scatter(const std::vector<double>& text_descriptors,
                                      const std::vector<std::uint32_t>& gt_ids,
                                      const coarse::RetrievalIndex& index)
{
    const std::size_t dim = index.dim;
    const std::size_t nt = gt_ids.size();
    const std::size_t n = nt + index.size();
    if (dim == 0 || text_descriptors.size() != nt * dim) {
        throw ShapeError("pca_scatter: descriptor rows do not match the index width");
    }
    if (n < 3) {
        throw ValueError("pca_scatter needs at least 3 descriptors");
    }
    Eigen::MatrixXd x(n, dim);
    for (std::size_t i = 0; i < nt; ++i) {
        for (std::size_t d = 0; d < dim; ++d) {
            x(i, d) = text_descriptors[i * dim + d];
        }
    }
    for (std::size_t i = 0; i < index.size(); ++i) {
        for (std::size_t d = 0; d < dim; ++d) {
            x(nt + i, d) = index.row(i)[d];
        }
    }
    const Eigen::RowVectorXd mean = x.colwise().mean();
    x.rowwise() -= mean;
    const Eigen::MatrixXd cov = x.transpose() * x / static_cast<double>(n - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    /* eigenvalues ascending: the last two columns are the leading axes */
    Eigen::MatrixXd axes(dim, 2);
    axes.col(0) = solver.eigenvectors().col(dim - 1);
    axes.col(1) = solver.eigenvectors().col(dim - 2);
    for (int a = 0; a < 2; ++a) {
        Eigen::Index arg = 0;
        axes.col(a).cwiseAbs().maxCoeff(&arg);
        if (axes(arg, a) < 0.0) {
            axes.col(a) = -axes.col(a);
        }
    }
    const Eigen::MatrixXd proj = x * axes;

    std::vector<ScatterPoint> out;
    for (std::size_t i = 0; i < n; ++i) {
        ScatterPoint p;
        if (i < nt) {
            p.kind = "text";
            p.id = static_cast<std::uint32_t>(i);
            p.label = gt_ids[i];
        } else {
            p.kind = "submap";
            p.id = index.ids[i - nt];
            p.label = p.id;
        }
        p.x = proj(static_cast<Eigen::Index>(i), 0);
        p.y = proj(static_cast<Eigen::Index>(i), 1);
        out.push_back(p);
    }
    return out;
}

std::string scatter_tsv(const std::vector<ScatterPoint>& points)
{
    std::string s = "kind\tid\tlabel\tx\ty\n";
    for (const auto& p : points) {
        s += p.kind + "\t" + std::to_string(p.id) + "\t" + std::to_string(p.label) + "\t" + format_double(p.x)
           + "\t" + format_double(p.y) + "\n";
    }
    return s;
}

Perturbation perturb_queries(const std::vector<data::QueryDescription>& queries, const data::Dataset& dataset,
                             std::size_t count, std::uint64_t seed)
{
    if (count > 1) {
        throw ValueError("perturb_queries replaces at most one hint per query");
    }
    const auto vocab = data::Vocabulary::build_default();
    const auto& scene = dataset.scene;
    Perturbation out;
    out.queries = queries;
    out.replaced.assign(queries.size(), 0);
    if (count == 0) {
        return out;
    }
    for (std::size_t qi = 0; qi < queries.size(); ++qi) {
        auto& q = out.queries[qi];
        if (q.hints.empty()) {
            throw DataError("query " + std::to_string(qi) + " has no hints to replace");
        }
        if (q.gt_submap_id >= dataset.database.submaps.size()) {
            throw DataError("query " + std::to_string(qi) + " names an unknown gt submap");
        }
        const auto& inside = dataset.database.submaps[q.gt_submap_id].instance_ids;
        std::vector<std::uint32_t> pool;
        for (std::uint32_t id = 0; id < scene.instances.size(); ++id) {
            const bool in_submap = std::find(inside.begin(), inside.end(), id) != inside.end();
            const bool hinted = std::any_of(q.hints.begin(), q.hints.end(),
                                            [id](const data::Hint& h) { return h.instance_id == id; });
            if (!in_submap && !hinted) {
                pool.push_back(id);
            }
        }
        if (pool.empty()) {
            throw DataError("no scene instance outside the gt submap of query " + std::to_string(qi));
        }
        Rng rng = Rng::derive(seed, qi);
        const std::size_t slot = rng.index(q.hints.size());
        const std::uint32_t fresh = pool[rng.index(pool.size())];
        q.hints[slot] = data::make_hint(scene, fresh, q.target, vocab);
        out.replaced[qi] = 1;
    }
    return out;
}

namespace {

json audit_json(const std::vector<std::size_t>& replaced)
{
    std::size_t lo = replaced.empty() ? 0 : replaced.front();
    std::size_t hi = lo;
    std::size_t total = 0;
    for (auto r : replaced) {
        lo = std::min(lo, r);
        hi = std::max(hi, r);
        total += r;
    }
    return { { "queries", replaced.size() }, { "replaced_total", total }, { "replaced_min", lo },
             { "replaced_max", hi } };
}

} // namespace

json comparison_json(const EvalReport& base, const EvalReport& perturbed, const std::vector<std::size_t>& replaced)
{
    json j;
    j["original"] = report_json(base);
    j["perturbed"] = report_json(perturbed);
    j["audit"] = audit_json(replaced);
    json delta = json::object();
    for (const auto& [k, v] : base.retrieval) {
        delta["retrieval_recall"][std::to_string(k)] = perturbed.retrieval.at(k) - v;
    }
    if (base.localization && perturbed.localization) {
        for (const auto& [key, v] : *base.localization) {
            delta["localization_recall"][std::to_string(key.first)][format_double(key.second)]
                = perturbed.localization->at(key) - v;
        }
    }
    j["delta"] = delta;
    return j;
}

std::string comparison_text(const EvalReport& base, const EvalReport& perturbed,
                            const std::vector<std::size_t>& replaced)
{
    std::size_t total = 0;
    for (auto r : replaced) {
        total += r;
    }
    std::string s = "split " + base.split + ", " + std::to_string(base.queries) + " queries, "
                  + std::to_string(total) + " hints replaced\n\n";
    s += "metric                    original  perturbed  delta\n";
    auto row = [&s](const std::string& name, double a, double b) {
        char buf[128];
        std::snprintf(buf, sizeof buf, "%-24s  %.4f    %.4f     %+.4f\n", name.c_str(), a, b, b - a);
        s += buf;
    };
    for (const auto& [k, v] : base.retrieval) {
        row("retrieval top-" + std::to_string(k), v, perturbed.retrieval.at(k));
    }
    if (base.localization && perturbed.localization) {
        for (const auto& [key, v] : *base.localization) {
            row("localization k=" + std::to_string(key.first) + " <" + format_double(key.second) + "m", v,
                perturbed.localization->at(key));
        }
    }
    return s;
}

} // namespace text2loc::cli
