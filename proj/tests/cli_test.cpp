#include <doctest.h>

#include <unistd.h>

#include <algorithm>
#include <filesystem>

#include "text2loc/cli/commands.hpp"
#include "text2loc/cli/evaluation.hpp"
#include "text2loc/common/binary_io.hpp"
#include "text2loc/common/errors.hpp"
#include "text2loc/common/text_format.hpp"
#include "text2loc/engine/checkpoint.hpp"

using namespace text2loc;
using namespace text2loc::cli;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json small_json()
{
    return json::parse(R"({
        "extent": 60, "max_instances": 10, "hints_per_query": 3,
        "train_queries": 24, "val_queries": 8, "test_queries": 8,
        "coarse_embed_dim": 8, "coarse_token_dim": 8, "coarse_heads": 2, "coarse_point_hidden": 6,
        "coarse_feature_dim": 6, "coarse_max_points": 8, "coarse_batch_size": 8, "coarse_epochs": 3,
        "coarse_decay_step": 2,
        "fine_embed_dim": 8, "fine_token_dim": 8, "fine_heads": 2, "fine_point_hidden": 6,
        "fine_feature_dim": 6, "fine_max_points": 8, "fine_batch_size": 8, "fine_epochs": 3
    })");
}

/* Scratch directory removed on scope exit */
struct TempDir
{
    fs::path path;
    explicit TempDir(const std::string& tag)
        : path(fs::temp_directory_path() / ("text2loc_cli_" + tag + "_" + std::to_string(::getpid())))
    {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

CommandOptions options_for(const json& j, const fs::path& out)
{
    CommandOptions o;
    o.config = parse_run_config(j);
    o.out = out;
    return o;
}

std::string bytes_of(const fs::path& p)
{
    return read_file_bytes(p);
}

std::size_t scalar_count(const engine::Checkpoint& ckpt, const std::string& prefix = "")
{
    std::size_t n = 0;
    for (const auto& [name, t] : ckpt.tensors) {
        if (name.rfind("adam.", 0) != 0 && name.rfind(prefix, 0) == 0) {
            n += t.size();
        }
    }
    return n;
}

/* Attention (3 bias-free projections + output linear) and a d -> h -> d feed-forward net */
std::size_t block_params(std::size_t d, std::size_t h)
{
    return 4 * d * d + d + 2 * d * h + h + d;
}

} // namespace

TEST_CASE("config parsing rejects unknown keys and bad types")
{
    CHECK_THROWS_AS(parse_run_config(json::parse(R"({"extent": 60, "bogus": 1})")), ConfigError);
    CHECK_THROWS_AS(parse_run_config(json::parse(R"({"coarse_epochs": -1})")), ConfigError);
    CHECK_THROWS_AS(parse_run_config(json::parse(R"({"coarse_epochs": 2.5})")), ConfigError);
    CHECK_THROWS_AS(parse_run_config(json::parse(R"({"no_pmc": 1})")), ConfigError);
    CHECK_THROWS_AS(parse_run_config(json::parse(R"({"class_mix": [1, 0]})")), ConfigError);
    CHECK_THROWS_AS(parse_run_config(json::parse(R"({"eval_split": "train"})")), ConfigError);
    CHECK_THROWS_AS(parse_run_config(json::parse(R"({"temperature": 0})")), ConfigError);
    CHECK_THROWS_AS(parse_run_config(json::parse(R"({"ccat_count": 4})")), ConfigError);
    CHECK_THROWS_AS(parse_run_config(json::parse(R"({"perturb_hints": 2})")), ConfigError);
    CHECK_THROWS_AS(parse_run_config(json::parse("[1, 2]")), ConfigError);

    const auto c = parse_run_config(json::parse(R"({"seed": 9, "no_pmc": true, "pmc_alpha": 20})"));
    CHECK(c.seed == 9);
    CHECK(c.coarse.seed == 9);
    CHECK(c.fine.seed == 9);
    CHECK(c.fine.no_pmc);
    CHECK(c.fine.pmc.alpha == 20.0);
    CHECK(c.has("pmc_alpha"));
    CHECK_FALSE(c.has("pmc_beta"));
}

TEST_CASE("config echo round-trips every key")
{
    const auto c = parse_run_config(small_json());
    const json echo = to_json(c);
    const auto again = parse_run_config(echo);
    CHECK(to_json(again) == echo);
    CHECK(dump_config(again) == dump_config(c));
    CHECK(echo.size() == again.explicit_keys.size());
}

TEST_CASE("defaults equal the published hyperparameters")
{
    const RunConfig c;
    CHECK(c.coarse.base_lr == 5e-4);
    CHECK(c.coarse.epochs == 20);
    CHECK(c.coarse.batch_size == 64);
    CHECK(c.coarse.lr_decay == 0.4);
    CHECK(c.coarse.decay_step == 7);
    CHECK(c.coarse.temperature == 0.1);
    CHECK(c.coarse.embed_dim == 256);
    CHECK(c.fine.lr == 3e-4);
    CHECK(c.fine.epochs == 35);
    CHECK(c.fine.batch_size == 32);
    CHECK(c.fine.embed_dim == 128);
    CHECK(c.fine.ccat_count == 2);
    CHECK(c.fine.pmc.alpha == 15.0);
    CHECK(c.fine.pmc.beta == 12.0);
    CHECK(c.dataset.cell == 30.0);
    CHECK(c.dataset.stride == 10.0);
    CHECK(c.dataset.max_instances == 28);
    CHECK_FALSE(c.coarse.no_htm);
    CHECK_FALSE(c.coarse.no_number_encoder);
    CHECK_FALSE(c.coarse.pairwise_ranking_loss);
    CHECK_FALSE(c.fine.no_pmc);
}

TEST_CASE("exit codes distinguish config, data and checkpoint failures")
{
    CHECK(run_guarded([] {}) == kExitOk);
    CHECK(run_guarded([] { throw ConfigError("x"); }) == kExitConfig);
    CHECK(run_guarded([] { throw DataError("x"); }) == kExitData);
    CHECK(run_guarded([] { throw ChecksumError("x"); }) == kExitData);
    CHECK(run_guarded([] { throw CheckpointError("x"); }) == kExitCheckpoint);
    CHECK(run_guarded([] { throw std::runtime_error("x"); }) == kExitFailure);

    TempDir tmp("exit");
    auto j = small_json();
    j.erase("extent");
    const auto no_extent = options_for(j, tmp.path / "a");
    CHECK(run_guarded([&] { cmd_gen_data(no_extent); }) == kExitConfig);

    const auto o = options_for(small_json(), tmp.path / "b");
    CHECK(run_guarded([&] { cmd_train_coarse(o); }) == kExitData);
    REQUIRE(run_guarded([&] { cmd_gen_data(o); }) == kExitOk);
    CHECK(run_guarded([&] { cmd_eval(o); }) == kExitCheckpoint);

    /* a corrupted dataset is a data error */
    auto bytes = bytes_of(tmp.path / "b" / kDatasetFile);
    bytes[bytes.size() / 2] ^= 0x5a;
    write_file_bytes(tmp.path / "b" / kDatasetFile, bytes);
    CHECK(run_guarded([&] { cmd_train_coarse(o); }) == kExitData);

    /* dataset keys that disagree with the file */
    REQUIRE(run_guarded([&] { cmd_gen_data(o); }) == kExitOk);
    auto k = small_json();
    k["train_queries"] = 30;
    auto mismatch = options_for(k, tmp.path / "b");
    CHECK(run_guarded([&] { cmd_train_coarse(mismatch); }) == kExitData);
}

TEST_CASE("gen-data is deterministic and matches the grid formula")
{
    TempDir tmp("gen");
    auto a = options_for(small_json(), tmp.path / "a");
    auto b = options_for(small_json(), tmp.path / "b");
    cmd_gen_data(a);
    cmd_gen_data(b);
    const auto bytes = bytes_of(tmp.path / "a" / kDatasetFile);
    CHECK(bytes == bytes_of(tmp.path / "b" / kDatasetFile));
    CHECK(bytes_of(tmp.path / "a" / "gen-data.manifest.json") == bytes_of(tmp.path / "b" / "gen-data.manifest.json"));

    const auto ds = data::load_dataset(tmp.path / "a" / kDatasetFile);
    /* floor((60 - 30) / 10) + 1 = 4 cells per axis */
    CHECK(ds.database.cells_x == 4);
    CHECK(ds.database.cells_y == 4);
    CHECK(ds.database.submaps.size() == 16);
    CHECK(ds.train.size() == 24);
    CHECK(ds.val.size() == 8);
    CHECK(ds.test.size() == 8);

    /* the resolved config lands next to the outputs */
    CHECK(parse_run_config(json::parse(bytes_of(tmp.path / "a" / kConfigFile))).seed == 1);

    auto c = options_for(small_json(), tmp.path / "c");
    c.config.set_seed(2);
    cmd_gen_data(c);
    CHECK(bytes_of(tmp.path / "c" / kDatasetFile) != bytes);

    const auto manifest = json::parse(bytes_of(tmp.path / "a" / "gen-data.manifest.json"));
    CHECK(manifest["outputs"].size() == 2);
    CHECK(manifest["outputs"][1]["file"] == kDatasetFile);
    CHECK(manifest["outputs"][1]["bytes"] == bytes.size());
    CHECK(manifest["outputs"][1]["sha256"].get<std::string>().size() == 64);
}

TEST_CASE("resumed training reproduces the uninterrupted run")
{
    TempDir tmp("resume");
    auto full = options_for(small_json(), tmp.path / "full");
    cmd_gen_data(full);
    cmd_train_coarse(full);
    cmd_train_fine(full);

    auto split = options_for(small_json(), tmp.path / "split");
    split.data = tmp.path / "full" / kDatasetFile;
    split.max_epochs = 1;
    cmd_train_coarse(split);
    cmd_train_fine(split);
    const auto first = engine::load_checkpoint(tmp.path / "split" / kCoarseCheckpoint);
    CHECK(first.metadata.at("next_epoch") == "1");

    split.max_epochs.reset();
    split.resume = tmp.path / "split" / "coarse.first.ckpt";
    fs::copy_file(tmp.path / "split" / kCoarseCheckpoint, *split.resume);
    cmd_train_coarse(split);
    split.resume = tmp.path / "split" / "fine.first.ckpt";
    fs::copy_file(tmp.path / "split" / kFineCheckpoint, *split.resume);
    cmd_train_fine(split);

    for (const char* f : { kCoarseCheckpoint, kFineCheckpoint, "coarse_loss.log", "fine_loss.log" }) {
        CAPTURE(f);
        CHECK(bytes_of(tmp.path / "full" / f) == bytes_of(tmp.path / "split" / f));
    }

    /* a checkpoint of another dataset is refused */
    auto other = options_for(small_json(), tmp.path / "other");
    other.config.set_seed(5);
    cmd_gen_data(other);
    other.resume = tmp.path / "full" / kCoarseCheckpoint;
    CHECK(run_guarded([&] { cmd_train_coarse(other); }) == kExitCheckpoint);
    other.resume = tmp.path / "full" / kCoarseCheckpoint;
    CHECK(run_guarded([&] { cmd_train_fine(other); }) == kExitCheckpoint);
}

TEST_CASE("ablation flags remove exactly their modules")
{
    TempDir tmp("ablate");
    auto base_json = small_json();
    base_json["coarse_epochs"] = 1;
    base_json["fine_epochs"] = 1;
    auto base = options_for(base_json, tmp.path / "base");
    cmd_gen_data(base);
    cmd_train_coarse(base);
    cmd_train_fine(base);
    const auto dataset = tmp.path / "base" / kDatasetFile;
    const auto coarse_full = engine::load_checkpoint(tmp.path / "base" / kCoarseCheckpoint);
    const auto fine_full = engine::load_checkpoint(tmp.path / "base" / kFineCheckpoint);
    const std::size_t td = 8; /* coarse token dim */
    const std::size_t fd = 8; /* fine embed dim */
    const std::size_t feat = 6;
    const std::size_t embed = 8;

    auto arm = [&](const std::string& key, json value, bool fine) {
        auto j = base_json;
        j[key] = value;
        auto o = options_for(j, tmp.path / (key + value.dump()));
        o.data = dataset;
        if (fine) {
            cmd_train_fine(o);
            return engine::load_checkpoint(o.out / kFineCheckpoint);
        }
        cmd_train_coarse(o);
        return engine::load_checkpoint(o.out / kCoarseCheckpoint);
    };

    const auto no_htm = arm("no_htm", true, false);
    CHECK(scalar_count(no_htm, "text.intra.") == 0);
    CHECK(scalar_count(no_htm, "text.inter.") == 0);
    CHECK(scalar_count(coarse_full) - scalar_count(no_htm) == 2 * block_params(td, 2 * td));

    const auto no_ne = arm("no_number_encoder", true, false);
    CHECK(scalar_count(no_ne, "submap.count.") == 0);
    CHECK(scalar_count(coarse_full) - scalar_count(no_ne)
          == scalar_count(coarse_full, "submap.count.") + feat * embed);

    const auto ranking = arm("pairwise_ranking_loss", true, false);
    CHECK(scalar_count(ranking) == scalar_count(coarse_full));

    const auto no_pmc = arm("no_pmc", true, true);
    CHECK(scalar_count(no_pmc) == scalar_count(fine_full));
    CHECK(no_pmc.metadata.at("no_pmc") == "true");

    std::vector<std::size_t> counts;
    for (std::size_t c = 0; c <= 3; ++c) {
        counts.push_back(scalar_count(arm("ccat_count", c, true)));
    }
    CHECK(counts[2] == scalar_count(fine_full));
    const std::size_t unit = 2 * block_params(fd, 2 * fd);
    CHECK(counts[1] - counts[0] == unit / 2);
    CHECK(counts[2] - counts[1] == unit);
    CHECK(counts[3] - counts[2] == unit);
}

TEST_CASE("eval reports are reproducible and agree with the fine module")
{
    TempDir tmp("eval");
    auto o = options_for(small_json(), tmp.path);
    cmd_gen_data(o);
    cmd_train_coarse(o);
    cmd_train_fine(o);
    cmd_eval(o);
    const auto report = bytes_of(tmp.path / "report.json");
    const auto text = bytes_of(tmp.path / "report.txt");
    const auto scatter = bytes_of(tmp.path / "scatter.tsv");
    cmd_eval(o);
    CHECK(bytes_of(tmp.path / "report.json") == report);
    CHECK(bytes_of(tmp.path / "report.txt") == text);
    CHECK(bytes_of(tmp.path / "scatter.tsv") == scatter);

    /* cross-check the grid against the fine module directly */
    const auto ds = data::load_dataset(tmp.path / kDatasetFile);
    const auto cm = coarse::load_coarse_model(engine::load_checkpoint(tmp.path / kCoarseCheckpoint));
    const auto fm = fine::load_fine_model(engine::load_checkpoint(tmp.path / kFineCheckpoint));
    const auto index = coarse::build_index(submap::prepare_submaps(ds.scene, ds.database, cm.config.max_points), cm);
    std::vector<std::vector<std::uint32_t>> cands;
    for (const auto& q : ds.test) {
        const auto d = coarse::encode_queries({ q }, cm);
        cands.push_back(coarse::retrieve_topk(d, index, 10).ids);
    }
    const auto results = fine::localize_all(ds.test, cands, fm,
                                            submap::prepare_submaps(ds.scene, ds.database, fm.config.max_points),
                                            ds.database);
    const auto grid = fine::localization_recall(results);
    const auto j = json::parse(report);
    CHECK(j["localization_recall"].size() == 3);
    for (const auto& [key, v] : grid) {
        const auto k = std::to_string(key.first);
        const auto eps = format_double(key.second);
        CHECK(j["localization_recall"][k][eps].get<double>() == v);
    }
    CHECK(j["mean_top1_error_m"].get<double>() == fine::mean_top1_error(results));

    /* coarse-only evaluation: no fine checkpoint in the output directory */
    TempDir only("eval_coarse");
    auto c = o;
    c.out = only.path;
    c.data = tmp.path / kDatasetFile;
    c.coarse = tmp.path / kCoarseCheckpoint;
    cmd_eval(c);
    const auto cj = json::parse(bytes_of(only.path / "report.json"));
    CHECK(cj["retrieval_recall"] == j["retrieval_recall"]);
    CHECK_FALSE(cj.contains("localization_recall"));

    /* an explicitly named fine checkpoint must exist */
    c.fine = only.path / "missing.ckpt";
    CHECK(run_guarded([&] { cmd_eval(c); }) == kExitCheckpoint);
}

TEST_CASE("perfect oracle fixture fills the tables with ones")
{
    /* five unit submap descriptors, each query equal to its gt row */
    std::vector<double> rows(25, 0.0);
    for (std::size_t i = 0; i < 5; ++i) {
        rows[i * 5 + i] = 1.0;
    }
    const auto index = coarse::make_index(rows, 5, { 0, 1, 2, 3, 4 });
    EvalReport r;
    r.split = "test";
    r.queries = 5;
    r.candidates = 5;
    r.retrieval = coarse::retrieval_recall(rows, { 0, 1, 2, 3, 4 }, index, { 1, 3, 5 });
    std::vector<fine::LocalizationResult> exact(5);
    for (std::uint32_t q = 0; q < 5; ++q) {
        exact[q] = { { q }, { data::Point2 { 1.0, 2.0 } }, { 0.0 } };
    }
    r.localization = fine::localization_recall(exact);
    r.mean_top1_error = 0.0;
    const auto j = report_json(r);
    for (const auto& [k, v] : j["retrieval_recall"].items()) {
        CAPTURE(k);
        CHECK(v.get<double>() == 1.0);
    }
    for (const auto& [k, row] : j["localization_recall"].items()) {
        for (const auto& [eps, v] : row.items()) {
            CHECK(v.get<double>() == 1.0);
        }
    }
    CHECK(report_text(r).find("1.0000") != std::string::npos);
}

TEST_CASE("perturbation replaces exactly one hint with an outside instance")
{
    TempDir tmp("perturb");
    auto o = options_for(small_json(), tmp.path);
    cmd_gen_data(o);
    const auto ds = data::load_dataset(tmp.path / kDatasetFile);

    const auto none = perturb_queries(ds.test, ds, 0, 3);
    CHECK(none.queries == ds.test);
    for (auto r : none.replaced) {
        CHECK(r == 0);
    }

    const auto p = perturb_queries(ds.test, ds, 1, 3);
    REQUIRE(p.queries.size() == ds.test.size());
    for (std::size_t q = 0; q < ds.test.size(); ++q) {
        const auto& before = ds.test[q];
        const auto& after = p.queries[q];
        CHECK(p.replaced[q] == 1);
        CHECK(after.target == before.target);
        CHECK(after.gt_submap_id == before.gt_submap_id);
        REQUIRE(after.hints.size() == before.hints.size());
        std::size_t changed = 0;
        for (std::size_t h = 0; h < before.hints.size(); ++h) {
            if (after.hints[h] == before.hints[h]) {
                continue;
            }
            ++changed;
            const auto id = after.hints[h].instance_id;
            const auto& inside = ds.database.submaps[before.gt_submap_id].instance_ids;
            CHECK(std::find(inside.begin(), inside.end(), id) == inside.end());
            for (const auto& old : before.hints) {
                CHECK(old.instance_id != id);
            }
            const auto& c = ds.scene.instances[id].center;
            CHECK(after.hints[h].direction == data::direction_of({ c[0], c[1] }, before.target));
        }
        CHECK(changed == 1);
    }
    CHECK(perturb_queries(ds.test, ds, 1, 3).queries == p.queries);
    CHECK_THROWS_AS(perturb_queries(ds.test, ds, 2, 3), ValueError);
}

TEST_CASE("zero perturbation reproduces eval")
{
    TempDir tmp("zero");
    auto j = small_json();
    j["perturb_hints"] = 0;
    auto o = options_for(j, tmp.path);
    cmd_gen_data(o);
    cmd_train_coarse(o);
    cmd_train_fine(o);
    cmd_eval(o);
    cmd_perturb_eval(o);
    const auto eval = json::parse(bytes_of(tmp.path / "report.json"));
    const auto cmp = json::parse(bytes_of(tmp.path / "perturb_report.json"));
    CHECK(cmp["original"] == eval);
    CHECK(cmp["perturbed"] == eval);
    CHECK(cmp["audit"]["replaced_total"] == 0);
    for (const auto& [k, v] : cmp["delta"]["retrieval_recall"].items()) {
        CHECK(v.get<double>() == 0.0);
    }

    o.config.perturb_hints = 1;
    cmd_perturb_eval(o);
    const auto one = json::parse(bytes_of(tmp.path / "perturb_report.json"));
    CHECK(one["original"] == eval);
    CHECK(one["audit"]["replaced_min"] == 1);
    CHECK(one["audit"]["replaced_max"] == 1);
    CHECK(one["audit"]["replaced_total"] == eval["queries"]);
}

TEST_CASE("pca scatter recovers the dominant axes")
{
    /* spread 3 along x, 1 along y, none along z */
    std::vector<double> text;
    std::vector<std::uint32_t> gt;
    const double xs[] = { -3, -1, 1, 3 };
    const double ys[] = { 1, -1, -1, 1 };
    for (int i = 0; i < 4; ++i) {
        text.insert(text.end(), { xs[i], ys[i], 0.0 });
        gt.push_back(static_cast<std::uint32_t>(i % 2));
    }
    coarse::RetrievalIndex index;
    index.dim = 3;
    index.descriptors = { 0.0, 0.0, 0.0, 0.0, 0.0, 0.0 };
    index.ids = { 7, 8 };
    const auto pts = pca_scatter(text, gt, index);
    REQUIRE(pts.size() == 6);
    /* mean is zero in x; the first axis is +x by the sign rule */
    for (int i = 0; i < 4; ++i) {
        CHECK(pts[i].kind == "text");
        CHECK(pts[i].label == gt[i]);
        CHECK(pts[i].x == doctest::Approx(xs[i]).epsilon(1e-12));
    }
    /* y mean is 0 over all six rows, so |y| is the offset itself */
    CHECK(std::abs(pts[0].y) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(pts[4].kind == "submap");
    CHECK(pts[4].id == 7);
    CHECK(pts[5].label == 8);
    CHECK(pts[4].x == doctest::Approx(0.0).epsilon(1e-12));

    const auto tsv = scatter_tsv(pts);
    CHECK(tsv.rfind("kind\tid\tlabel\tx\ty\n", 0) == 0);
    CHECK(std::count(tsv.begin(), tsv.end(), '\n') == 7);
    CHECK_THROWS_AS(pca_scatter({ 1.0 }, gt, index), ShapeError);
}
