#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"
#include "text2loc/common/errors.hpp"
#include "text2loc/fine/localize.hpp"
#include "text2loc/fine/model.hpp"
#include "text2loc/fine/pmc.hpp"

using namespace text2loc;
using namespace text2loc::engine;
using namespace text2loc::testing;
using namespace text2loc::fine;

namespace {

FineConfig small_config()
{
    FineConfig c;
    c.embed_dim = 8;
    c.token_dim = 8;
    c.heads = 2;
    c.point_hidden = 6;
    c.feature_dim = 6;
    c.max_points = 6;
    c.batch_size = 8;
    c.epochs = 3;
    return c;
}

data::Dataset small_dataset(std::uint64_t seed)
{
    data::DatasetConfig c;
    c.extent = 60;
    c.max_instances = 10;
    c.hints_per_query = 3;
    c.train_queries = 20;
    c.val_queries = 6;
    c.test_queries = 6;
    return data::generate_dataset(c, seed);
}

std::size_t vocab_size()
{
    return data::Vocabulary::build_default().size();
}

/* Composed loop oracle for the fusion cascade */
Mat ccat_oracle(const Mat& text, const Mat& points, const FineModel& m)
{
    const std::size_t h = m.config.heads;
    if (m.config.ccat_count == 0)
        return cross_block_oracle(text, points, m.params, "fine.cat", h);
    Mat t = text;
    for (std::size_t u = 0; u < m.config.ccat_count; ++u) {
        const std::string name = "fine.ccat." + std::to_string(u);
        const Mat enhanced = cross_block_oracle(points, t, m.params, name + ".cat1", h);
        t = cross_block_oracle(t, enhanced, m.params, name + ".cat2", h);
    }
    return t;
}

} // namespace

TEST_CASE("PMC membership examples")
{
    const PMCConfig cfg;
    auto db = database_from_centers({ { 50, 50 }, { 64, 50 }, { 50, 65 }, { 40, 40 } });
    /* s_j = s_i and c = s_i */
    auto g = pmc_candidates(db, 0, { 50, 50 }, cfg);
    CHECK(std::find(g.begin(), g.end(), 0u) != g.end());
    /* center offset (14, 0), target offset (11, 0) from s_j */
    g = pmc_candidates(db, 0, { 53, 50 }, cfg);
    CHECK(std::find(g.begin(), g.end(), 1u) != g.end());
    /* target offset (12.5, 0) from s_j */
    g = pmc_candidates(db, 0, { 51.5, 50 }, cfg);
    CHECK(std::find(g.begin(), g.end(), 1u) == g.end());
    /* offset 15 in y is not strictly inside alpha */
    g = pmc_candidates(db, 0, { 50, 58 }, cfg);
    CHECK(std::find(g.begin(), g.end(), 2u) == g.end());

    CHECK_THROWS_AS(pmc_candidates(db, 9, { 0, 0 }, cfg), ValueError);
    PMCConfig bad;
    bad.alpha = 0.0;
    CHECK_THROWS_AS(pmc_candidates(db, 0, { 0, 0 }, bad), ValueError);
}

TEST_CASE("PMC candidate sets equal the exhaustive scan")
{
    const PMCConfig cfg;
    Rng rng(17);
    std::size_t nonempty = 0;
    for (int fixture = 0; fixture < 1000; ++fixture) {
        std::vector<data::Point2> centers;
        const std::size_t n = 1 + rng.index(60);
        for (std::size_t i = 0; i < n; ++i) {
            /* half on a 10 m lattice to hit exact-boundary distances */
            if (rng.index(2) == 0)
                centers.push_back({ 10.0 * static_cast<double>(rng.index(8)), 10.0 * static_cast<double>(rng.index(8)) });
            else
                centers.push_back({ rng.uniform(0, 80), rng.uniform(0, 80) });
        }
        const auto db = database_from_centers(centers);
        const PmcIndex index(db);
        for (int q = 0; q < 3; ++q) {
            const auto i = static_cast<std::uint32_t>(rng.index(n));
            const auto& si = db.submaps[i].center;
            data::Point2 c { si[0] + rng.uniform(-15, 15), si[1] + rng.uniform(-15, 15) };
            if (rng.index(3) == 0)
                c = { si[0] + 12.0 * static_cast<double>(rng.index(3)) - 12.0, si[1] };
            const auto got = index.candidates(i, c, cfg);
            CHECK(got == pmc_oracle(db, i, c, cfg));
            nonempty += got.empty() ? 0 : 1;
        }
    }
    CHECK(nonempty > 1000);

    /* boundaries at alpha = 15 and beta = 12 */
    for (double a : { 14.999, 15.0 }) {
        for (double b : { 11.999, 12.0 }) {
            for (int axis = 0; axis < 2; ++axis) {
                for (double sign : { 1.0, -1.0 }) {
                    data::Point2 sj { 50, 50 };
                    sj[axis] += sign * a;
                    const auto db = database_from_centers({ { 50, 50 }, sj });
                    data::Point2 c = sj;
                    c[axis] -= sign * b;
                    const auto got = pmc_candidates(db, 0, c, cfg);
                    CHECK(got == pmc_oracle(db, 0, c, cfg));
                    const bool expect = a < 15.0 && b < 12.0;
                    CHECK((std::find(got.begin(), got.end(), 1u) != got.end()) == expect);
                }
            }
        }
    }
}

TEST_CASE("PMC mismatch filter and sampling")
{
    const auto ds = small_dataset(3);
    const PMCConfig cfg;
    const auto& q = ds.train.front();
    const auto& gt = ds.database.submaps[q.gt_submap_id];
    /* every hinted instance sits in the gt submap */
    CHECK(pmc_mismatch(gt, q, ds.scene) == 0);

    data::Submap missing_two = gt;
    std::erase(missing_two.instance_ids, q.hints[0].instance_id);
    std::erase(missing_two.instance_ids, q.hints[1].instance_id);
    missing_two.id = 1000;
    CHECK(pmc_mismatch(missing_two, q, ds.scene) >= 2);

    /* sampling only returns qualifying candidates, and is seed-deterministic */
    const auto g = pmc_candidates(ds.database, q.gt_submap_id, q.target, cfg);
    std::set<std::uint32_t> seen;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng a(seed), b(seed);
        const auto pick = pmc_filter_and_sample(g, q, ds.scene, ds.database, cfg, a);
        CHECK(pick == pmc_filter_and_sample(g, q, ds.scene, ds.database, cfg, b));
        CHECK(pmc_mismatch(ds.database.submaps[pick], q, ds.scene) <= cfg.max_mismatch);
        seen.insert(pick);
    }
    std::size_t qualifying = 0;
    for (auto id : g)
        qualifying += pmc_mismatch(ds.database.submaps[id], q, ds.scene) <= 1 ? 1 : 0;
    CHECK(seen.size() == qualifying);

    /* empty filtered set falls back to the gt submap */
    Rng rng(1);
    CHECK(pmc_filter_and_sample({}, q, ds.scene, ds.database, cfg, rng) == q.gt_submap_id);
    PMCConfig strict;
    strict.max_mismatch = 0;
    data::Database lonely = ds.database;
    lonely.submaps.push_back(missing_two);
    lonely.submaps.back().id = static_cast<std::uint32_t>(lonely.submaps.size() - 1);
    const std::vector<std::uint32_t> only_bad { lonely.submaps.back().id };
    CHECK(pmc_filter_and_sample(only_bad, q, ds.scene, lonely, strict, rng) == q.gt_submap_id);
}

TEST_CASE("cross-attention transformer")
{
    Rng rng(5);
    for (std::size_t count : { 0u, 1u, 2u, 3u }) {
        auto cfg = small_config();
        cfg.ccat_count = count;
        const auto m = make_fine_model(cfg, vocab_size());
        const Mat text = random_mat(4, 8, rng);
        const Mat points = random_mat(7, 8, rng);
        const auto got = ccat(to_tensor(text), to_tensor(points), m, single_segment(4), single_segment(7));
        CHECK(max_abs_diff(to_mat(got), ccat_oracle(text, points, m)) < 1e-12);

        /* permuting text rows permutes the output rows identically */
        const Mat perm_text = { text[2], text[0], text[3], text[1] };
        const auto perm = to_mat(ccat(to_tensor(perm_text), to_tensor(points), m, single_segment(4), single_segment(7)));
        const auto base = to_mat(got);
        CHECK(max_abs_diff(perm, Mat { base[2], base[0], base[3], base[1] }) < 1e-10);
    }

    auto cfg = small_config();
    cfg.ccat_count = 0;
    const auto m = make_fine_model(cfg, vocab_size());
    const auto& block = *m.single_cat;
    const Mat q = random_mat(5, 8, rng);
    /* single key/value row: every query row takes that row's value */
    const Mat one = random_mat(1, 8, rng);
    CHECK(max_abs_diff(to_mat(cat(to_tensor(q), to_tensor(one), block, single_segment(5), single_segment(1))),
                       cross_block_oracle(q, one, m.params, "fine.cat", 2))
          < 1e-12);
    /* Q = K = V is the self-attention block */
    const auto self = cat(to_tensor(q), to_tensor(q), block, single_segment(5), single_segment(5));
    CHECK(max_abs_diff(to_mat(self), to_mat(transformer_rows(to_tensor(q), block, single_segment(5)))) < 1e-15);
    CHECK_THROWS_AS(cat(to_tensor(q), Tensor::zeros({ 0, 8 }), block, single_segment(5), single_segment(0)), ValueError);

    cfg.ccat_count = 4;
    CHECK_THROWS_AS(make_fine_model(cfg, vocab_size()), ValueError);
}

TEST_CASE("ccat ablation arms differ by exactly their units")
{
    std::vector<std::size_t> counts;
    for (std::size_t c = 0; c <= 3; ++c) {
        auto cfg = small_config();
        cfg.ccat_count = c;
        const auto m = make_fine_model(cfg, vocab_size());
        counts.push_back(m.params.scalar_count());
        CHECK(m.params.scalar_count("fine.ccat") == m.params.scalar_count("fine.ccat.0") * c);
        if (c == 0)
            CHECK(m.params.scalar_count("fine.cat.") > 0);
        else
            CHECK(m.params.scalar_count("fine.cat.") == 0);
    }
    auto unit = make_fine_model(small_config(), vocab_size()).params.scalar_count("fine.ccat.0");
    CHECK(counts[2] - counts[1] == unit);
    CHECK(counts[3] - counts[2] == unit);
    /* a unit holds two blocks; the plain CAT holds one */
    CHECK(counts[1] - counts[0] == unit / 2);
}

TEST_CASE("regression head and loss")
{
    Rng rng(6);
    auto m = make_fine_model(small_config(), vocab_size());
    const Mat fused = random_mat(5, 8, rng);
    const auto got = regress_offsets(to_tensor(fused), single_segment(5), m);
    const auto pooled = col_max(block_oracle(fused, m.params, "fine.pool", 2));
    const auto expected = mlp_oracle({ pooled }, m.params, "fine.regressor", 2);
    CHECK(max_abs_diff(to_mat(got), expected) < 1e-12);

    const Tensor gt({ 2, 2 }, { 1.0, 2.0, -3.0, 0.5 });
    CHECK(mse_loss(gt, gt).item() == 0.0);
    const Tensor shifted({ 1, 2 }, { 4.0, 6.0 });
    const Tensor origin({ 1, 2 }, { 1.0, 2.0 });
    CHECK(mse_loss(shifted, origin).item() == doctest::Approx(25.0).epsilon(1e-15));
    CHECK(fine::planar_error({ 4.0, 6.0 }, { 1.0, 2.0 }) == doctest::Approx(5.0).epsilon(1e-15));
    CHECK(fine::planar_error({ 1.0, 2.0 }, { 4.0, 6.0 }) == fine::planar_error({ 4.0, 6.0 }, { 1.0, 2.0 }));
    CHECK_THROWS_AS(mse_loss(gt, shifted), ShapeError);

    /* d/dpred = 2 (pred - gt) / n */
    const Tensor pred({ 2, 2 }, { 0.5, -1.0, 2.0, 3.0 }, true);
    backward(mse_loss(pred, gt));
    const std::vector<double> want = { (0.5 - 1.0), (-1.0 - 2.0), (2.0 + 3.0), (3.0 - 0.5) };
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(pred.grad()[i] == doctest::Approx(want[i]).epsilon(1e-14));
}

TEST_CASE("fusion and regression gradients match finite differences")
{
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        Rng rng(seed);
        auto cfg = small_config();
        cfg.ccat_count = seed % 4;
        cfg.seed = seed;
        const auto m = make_fine_model(cfg, vocab_size());
        const Tensor text = random_tensor({ 5, 8 }, rng, true);
        const Tensor points = random_tensor({ 7, 8 }, rng, true);
        const Offsets to { 0, 2, 5 };
        const Offsets po { 0, 3, 7 };
        const Tensor target = random_tensor({ 2, 2 }, rng);
        auto loss = [&] { return mse_loss(regress_offsets(ccat(text, points, m, to, po), to, m), target); };
        std::vector<Tensor> leaves { text, points };
        for (const auto& [name, t] : m.params.entries())
            if (name.rfind("fine.ccat", 0) == 0 || name.rfind("fine.cat", 0) == 0 || name.rfind("fine.pool", 0) == 0
                || name.rfind("fine.regressor", 0) == 0)
                leaves.push_back(t);
        const auto r = check_gradients(loss, leaves, rng, 16);
        CHECK(r.checked > 100);
        CHECK(r.max_rel_error < 1e-4);
    }
}

TEST_CASE("localization results and recall grid")
{
    const auto ds = small_dataset(4);
    auto cfg = small_config();
    const auto subs = submap::prepare_submaps(ds.scene, ds.database, cfg.max_points);
    auto m = make_fine_model(cfg, vocab_size());

    std::vector<std::vector<std::uint32_t>> cands;
    for (const auto& q : ds.test)
        cands.push_back({ q.gt_submap_id, static_cast<std::uint32_t>((q.gt_submap_id + 3) % subs.size()), 0u });
    const auto batched = localize_all(ds.test, cands, m, subs, ds.database);
    for (std::size_t i = 0; i < ds.test.size(); ++i) {
        CHECK(batched[i].ids == cands[i]);
        for (std::size_t c = 0; c < cands[i].size(); ++c) {
            /* per-candidate single-shot oracle */
            const auto one = localize(ds.test[i], { cands[i][c] }, m, subs, ds.database);
            CHECK(std::abs(one.positions[0][0] - batched[i].positions[c][0]) < 1e-12);
            CHECK(std::abs(one.positions[0][1] - batched[i].positions[c][1]) < 1e-12);
            CHECK(batched[i].errors[c] >= 0.0);
        }
    }
    const auto grid = localization_recall(batched);
    for (std::size_t k : { 1u, 5u, 10u }) {
        CHECK(grid.at({ k, 5.0 }) <= grid.at({ k, 10.0 }));
        CHECK(grid.at({ k, 10.0 }) <= grid.at({ k, 15.0 }));
    }
    for (double e : { 5.0, 10.0, 15.0 }) {
        CHECK(grid.at({ 1, e }) <= grid.at({ 5, e }));
        CHECK(grid.at({ 5, e }) <= grid.at({ 10, e }));
    }

    /* zeroed regressor output layer: prediction is the candidate center */
    auto& last = m.regressor.layers.back();
    std::fill(last.weight.mutable_values().begin(), last.weight.mutable_values().end(), 0.0);
    std::fill(last.bias.mutable_values().begin(), last.bias.mutable_values().end(), 0.0);
    const auto zeroed = localize_all(ds.test, cands, m, subs, ds.database);
    for (std::size_t i = 0; i < ds.test.size(); ++i) {
        const auto base = center_baseline(ds.test[i], cands[i], ds.database);
        CHECK(zeroed[i].positions == base.positions);
        CHECK(zeroed[i].errors == base.errors);
    }
    CHECK_THROWS_AS(localize(ds.test[0], {}, m, subs, ds.database), ValueError);
}

TEST_CASE("localization recall fixtures")
{
    auto make = [](std::vector<double> errors) {
        LocalizationResult r;
        r.errors = std::move(errors);
        r.ids.resize(r.errors.size());
        r.positions.resize(r.errors.size());
        return r;
    };
    std::vector<LocalizationResult> zero(4, make(std::vector<double>(10, 0.0)));
    for (auto [key, v] : localization_recall(zero))
        CHECK(v == 1.0);
    std::vector<LocalizationResult> far(4, make(std::vector<double>(10, 20.0)));
    for (auto [key, v] : localization_recall(far))
        CHECK(v == 0.0);

    /* hand-built: query A hits at rank 1 with 4 m; B at rank 3 with 9 m; C at rank 7 with exactly 5 m then 14.9 m */
    std::vector<double> a(10, 30.0), b(10, 30.0), c(10, 30.0);
    a[0] = 4.0;
    b[2] = 9.0;
    c[6] = 5.0;
    c[8] = 14.9;
    const auto grid = localization_recall({ make(a), make(b), make(c) });
    const double third = 1.0 / 3.0;
    CHECK(grid.at({ 1, 5.0 }) == third);
    CHECK(grid.at({ 1, 10.0 }) == third);
    CHECK(grid.at({ 1, 15.0 }) == third);
    CHECK(grid.at({ 5, 5.0 }) == third);
    CHECK(grid.at({ 5, 10.0 }) == 2 * third);
    CHECK(grid.at({ 5, 15.0 }) == 2 * third);
    CHECK(grid.at({ 10, 5.0 }) == third);
    CHECK(grid.at({ 10, 10.0 }) == 1.0);
    CHECK(grid.at({ 10, 15.0 }) == 1.0);
}

TEST_CASE("fine trainer is deterministic, resumes exactly and uses PMC clones")
{
    const auto ds = small_dataset(1);
    const auto cfg = small_config();
    const auto subs = submap::prepare_submaps(ds.scene, ds.database, cfg.max_points);

    FineTrainer a(cfg, ds, subs);
    FineTrainer b(cfg, ds, subs);
    while (!a.finished()) {
        a.run_epoch();
        b.run_epoch();
    }
    CHECK(a.loss_trace() == b.loss_trace());
    CHECK(encode_checkpoint(a.checkpoint()) == encode_checkpoint(b.checkpoint()));

    FineTrainer c(cfg, ds, subs);
    c.run_epoch();
    FineTrainer resumed(decode_checkpoint(encode_checkpoint(c.checkpoint())), ds, subs);
    CHECK(resumed.next_epoch() == 1);
    while (!resumed.finished())
        resumed.run_epoch();
    CHECK(resumed.loss_trace() == a.loss_trace());
    CHECK(encode_checkpoint(resumed.checkpoint()) == encode_checkpoint(a.checkpoint()));

    /* clones come from the candidate set; without PMC only gt submaps are used */
    bool cloned = false;
    for (std::size_t epoch = 0; epoch < 3; ++epoch) {
        const auto used = a.training_submaps(epoch);
        for (std::size_t q = 0; q < ds.train.size(); ++q) {
            const auto& query = ds.train[q];
            const auto g = pmc_candidates(ds.database, query.gt_submap_id, query.target, cfg.pmc);
            CHECK((used[q] == query.gt_submap_id || std::find(g.begin(), g.end(), used[q]) != g.end()));
            cloned = cloned || used[q] != query.gt_submap_id;
        }
    }
    CHECK(cloned);
    auto no_pmc = cfg;
    no_pmc.no_pmc = true;
    FineTrainer plain(no_pmc, ds, subs);
    for (std::size_t q = 0; q < ds.train.size(); ++q)
        CHECK(plain.training_submaps(0)[q] == ds.train[q].gt_submap_id);

    auto meta = to_metadata(cfg);
    CHECK(fine_config_from_metadata(meta).ccat_count == cfg.ccat_count);
    meta["stage"] = "coarse";
    CHECK_THROWS_AS(fine_config_from_metadata(meta), CheckpointError);
}
