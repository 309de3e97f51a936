#include "text2loc/cli/commands.hpp"

#include <cstdio>
#include <fstream>

#include <openssl/sha.h>
#include <spdlog/spdlog.h>

#include "text2loc/cli/evaluation.hpp"
#include "text2loc/coarse/model.hpp"
#include "text2loc/common/binary_io.hpp"
#include "text2loc/common/errors.hpp"
#include "text2loc/common/text_format.hpp"
#include "text2loc/engine/checkpoint.hpp"
#include "text2loc/fine/model.hpp"

namespace text2loc::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kToolVersion = "1.0.0";
constexpr std::uint64_t kPerturbStream = 0x5045525455524245ULL;

struct LoadedDataset
{
    data::Dataset dataset;
    json entry;
    std::string digest;
};

/* The binary formats end in their own CRC-32, which makes a CRC of the whole file a constant */
std::string sha256_hex(std::string_view bytes)
{
    unsigned char digest[SHA256_DIGEST_LENGTH];
    SHA256(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), digest);
    std::string hex;
    char byte[3];
    for (unsigned char c : digest) {
        std::snprintf(byte, sizeof byte, "%02x", c);
        hex += byte;
    }
    return hex;
}

json file_entry(const fs::path& path)
{
    const auto bytes = read_file_bytes(path);
    return { { "file", path.filename().string() }, { "bytes", bytes.size() }, { "sha256", sha256_hex(bytes) } };
}

void write_text(const fs::path& path, const std::string& text)
{
    write_file_bytes(path, text);
}

void prepare_out(const fs::path& out)
{
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec || !fs::is_directory(out)) {
        throw ConfigError("cannot create output directory " + out.string());
    }
}

void write_manifest(const fs::path& out, const std::string& command, const RunConfig& config,
                    const std::vector<json>& inputs, const std::vector<fs::path>& outputs)
{
    json m;
    m["command"] = command;
    m["tool_version"] = kToolVersion;
    m["dataset_format"] = data::kDatasetVersion;
    m["checkpoint_format"] = engine::kCheckpointVersion;
    m["config"] = to_json(config);
    m["inputs"] = inputs;
    json outs = json::array();
    const fs::path config_path = out / kConfigFile;
    write_text(config_path, dump_config(config));
    outs.push_back(file_entry(config_path));
    for (const auto& p : outputs) {
        outs.push_back(file_entry(p));
    }
    m["outputs"] = outs;
    write_text(out / (command + ".manifest.json"), m.dump(2) + "\n");
}

/* The config's explicit dataset keys must agree with the file's own config */
void check_dataset_keys(const RunConfig& config, const data::Dataset& dataset)
{
    RunConfig stored;
    stored.dataset = dataset.config;
    const json want = to_json(config);
    const json have = to_json(stored);
    for (const auto& key : dataset_keys()) {
        if (config.has(key) && want[key] != have[key]) {
            throw DataError("dataset was generated with " + key + " = " + have[key].dump() + ", config says "
                            + want[key].dump());
        }
    }
}

LoadedDataset load_run_dataset(const CommandOptions& o)
{
    const fs::path path = o.data.value_or(o.out / kDatasetFile);
    if (!fs::exists(path)) {
        throw DataError("dataset file not found: " + path.string());
    }
    const auto bytes = read_file_bytes(path);
    LoadedDataset d { data::decode_dataset(bytes), file_entry(path), "" };
    d.digest = d.entry["sha256"].get<std::string>();
    check_dataset_keys(o.config, d.dataset);
    spdlog::info("dataset {}: {} submaps, {}/{}/{} queries", path.string(), d.dataset.database.submaps.size(),
                 d.dataset.train.size(), d.dataset.val.size(), d.dataset.test.size());
    return d;
}

engine::Checkpoint load_for_dataset(const fs::path& path, const LoadedDataset& d)
{
    auto ckpt = engine::load_checkpoint(path);
    const auto it = ckpt.metadata.find("dataset_sha256");
    if (it == ckpt.metadata.end()) {
        spdlog::warn("checkpoint {} does not record its dataset", path.string());
    } else if (it->second != d.digest) {
        throw CheckpointError("checkpoint " + path.string() + " was trained on dataset " + it->second
                              + ", not " + d.digest);
    }
    return ckpt;
}

void save_atomic(const fs::path& path, engine::Checkpoint checkpoint, const std::string& dataset_sha256)
{
    checkpoint.metadata["dataset_sha256"] = dataset_sha256;
    const fs::path tmp = path.string() + ".tmp";
    engine::save_checkpoint(tmp, checkpoint);
    fs::rename(tmp, path);
}

const std::vector<data::QueryDescription>& split_queries(const data::Dataset& d, const std::string& split)
{
    return split == "val" ? d.val : d.test;
}

/* Shared epoch loop of both trainers */
template <typename Trainer>
void train_loop(Trainer& trainer, const CommandOptions& o, const fs::path& ckpt_path, const fs::path& log_path,
                const std::string& dataset_sha256, const char* stage)
{
    std::ofstream log(log_path, std::ios::trunc);
    if (!log) {
        throw ConfigError("cannot write " + log_path.string());
    }
    const auto& trace = trainer.loss_trace();
    for (std::size_t e = 0; e < trace.size(); ++e) {
        log << "epoch " << e << " loss " << format_double(trace[e]) << "\n";
    }
    log.flush();
    std::size_t done = 0;
    while (!trainer.finished() && (!o.max_epochs || done < *o.max_epochs)) {
        const std::size_t epoch = trainer.next_epoch();
        const double loss = trainer.run_epoch();
        ++done;
        log << "epoch " << epoch << " loss " << format_double(loss) << "\n";
        log.flush();
        spdlog::info("{} epoch {} loss {:.6f}", stage, epoch, loss);
        save_atomic(ckpt_path, trainer.checkpoint(), dataset_sha256);
    }
    if (done == 0) {
        save_atomic(ckpt_path, trainer.checkpoint(), dataset_sha256);
    }
}

} // namespace

void cmd_gen_data(const CommandOptions& o)
{
    if (!o.config.has("extent")) {
        throw ConfigError("gen-data needs the 'extent' key");
    }
    prepare_out(o.out);
    data::Dataset dataset;
    try {
        dataset = data::generate_dataset(o.config.dataset, o.config.seed);
    } catch (const ValueError& e) {
        throw ConfigError(std::string("dataset: ") + e.what());
    }
    const fs::path path = o.out / kDatasetFile;
    data::serialize_dataset(dataset, path);
    const auto& db = dataset.database;
    std::printf("submaps %zu (%zu x %zu), instances %zu, queries train %zu val %zu test %zu\n", db.submaps.size(),
                db.cells_x, db.cells_y, dataset.scene.instances.size(), dataset.train.size(), dataset.val.size(),
                dataset.test.size());
    write_manifest(o.out, "gen-data", o.config, {}, { path });
}

void cmd_train_coarse(const CommandOptions& o)
{
    prepare_out(o.out);
    const auto d = load_run_dataset(o);
    std::optional<engine::Checkpoint> resume;
    if (o.resume) {
        resume = load_for_dataset(*o.resume, d);
    }
    const std::size_t max_points
        = resume ? coarse::coarse_config_from_metadata(resume->metadata).max_points : o.config.coarse.max_points;
    const auto submaps = submap::prepare_submaps(d.dataset.scene, d.dataset.database, max_points);
    std::unique_ptr<coarse::CoarseTrainer> trainer;
    if (resume) {
        trainer = std::make_unique<coarse::CoarseTrainer>(*resume, d.dataset, submaps);
        spdlog::info("resuming coarse training at epoch {}", trainer->next_epoch());
    } else {
        trainer = std::make_unique<coarse::CoarseTrainer>(o.config.coarse, d.dataset, submaps);
    }
    RunConfig resolved = o.config;
    resolved.coarse = trainer->model().config;

    const fs::path ckpt = o.out / kCoarseCheckpoint;
    const fs::path log = o.out / "coarse_loss.log";
    train_loop(*trainer, o, ckpt, log, d.digest, "coarse");
    std::printf("coarse epochs %zu/%zu, last loss %s\n", trainer->next_epoch(), resolved.coarse.epochs,
                trainer->loss_trace().empty() ? "-" : format_double(trainer->loss_trace().back()).c_str());
    std::vector<json> inputs { d.entry };
    if (o.resume) {
        inputs.push_back(file_entry(*o.resume));
    }
    write_manifest(o.out, "train-coarse", resolved, inputs, { ckpt, log });
}

void cmd_train_fine(const CommandOptions& o)
{
    prepare_out(o.out);
    const auto d = load_run_dataset(o);
    std::optional<engine::Checkpoint> resume;
    if (o.resume) {
        resume = load_for_dataset(*o.resume, d);
    }
    const std::size_t max_points
        = resume ? fine::fine_config_from_metadata(resume->metadata).max_points : o.config.fine.max_points;
    const auto submaps = submap::prepare_submaps(d.dataset.scene, d.dataset.database, max_points);
    std::unique_ptr<fine::FineTrainer> trainer;
    if (resume) {
        trainer = std::make_unique<fine::FineTrainer>(*resume, d.dataset, submaps);
        spdlog::info("resuming fine training at epoch {}", trainer->next_epoch());
    } else {
        trainer = std::make_unique<fine::FineTrainer>(o.config.fine, d.dataset, submaps);
    }
    RunConfig resolved = o.config;
    resolved.fine = trainer->model().config;

    const fs::path ckpt = o.out / kFineCheckpoint;
    const fs::path log = o.out / "fine_loss.log";
    train_loop(*trainer, o, ckpt, log, d.digest, "fine");
    std::printf("fine epochs %zu/%zu, last loss %s\n", trainer->next_epoch(), resolved.fine.epochs,
                trainer->loss_trace().empty() ? "-" : format_double(trainer->loss_trace().back()).c_str());
    std::vector<json> inputs { d.entry };
    if (o.resume) {
        inputs.push_back(file_entry(*o.resume));
    }
    write_manifest(o.out, "train-fine", resolved, inputs, { ckpt, log });
}

namespace {

struct LoadedModels
{
    LoadedDataset data;
    coarse::CoarseModel coarse;
    std::optional<fine::FineModel> fine;
    std::vector<json> inputs;
};

LoadedModels load_models(const CommandOptions& o)
{
    LoadedModels m { load_run_dataset(o), {}, {}, {} };
    m.inputs.push_back(m.data.entry);
    const fs::path coarse_path = o.coarse.value_or(o.out / kCoarseCheckpoint);
    m.coarse = coarse::load_coarse_model(load_for_dataset(coarse_path, m.data));
    m.inputs.push_back(file_entry(coarse_path));

    std::optional<fs::path> fine_path = o.fine;
    if (!fine_path && fs::exists(o.out / kFineCheckpoint)) {
        fine_path = o.out / kFineCheckpoint;
    }
    if (fine_path) {
        m.fine = fine::load_fine_model(load_for_dataset(*fine_path, m.data));
        m.inputs.push_back(file_entry(*fine_path));
    } else {
        spdlog::info("no fine checkpoint, evaluating retrieval only");
    }
    return m;
}

} // namespace

void cmd_eval(const CommandOptions& o)
{
    prepare_out(o.out);
    const auto m = load_models(o);
    const auto& queries = split_queries(m.data.dataset, o.config.eval_split);
    const auto art = evaluate(m.data.dataset, queries, o.config.eval_split, m.coarse,
                              m.fine ? &*m.fine : nullptr, o.config.eval_candidates);

    std::vector<std::uint32_t> gt_ids;
    for (const auto& q : queries) {
        gt_ids.push_back(q.gt_submap_id);
    }
    const fs::path txt = o.out / "report.txt";
    const fs::path js = o.out / "report.json";
    const fs::path scatter = o.out / "scatter.tsv";
    const std::string text = report_text(art.report);
    write_text(txt, text);
    write_text(js, report_json(art.report).dump(2) + "\n");
    write_text(scatter, scatter_tsv(pca_scatter(art.text_descriptors, gt_ids, art.index)));
    std::fputs(text.c_str(), stdout);
    write_manifest(o.out, "eval", o.config, m.inputs, { txt, js, scatter });
}

void cmd_perturb_eval(const CommandOptions& o)
{
    prepare_out(o.out);
    const auto m = load_models(o);
    const auto& queries = split_queries(m.data.dataset, o.config.eval_split);
    const auto* fine_model = m.fine ? &*m.fine : nullptr;
    const auto base = evaluate(m.data.dataset, queries, o.config.eval_split, m.coarse, fine_model,
                               o.config.eval_candidates);
    const auto pert = perturb_queries(queries, m.data.dataset, o.config.perturb_hints,
                                      Rng::derive(o.config.seed, kPerturbStream).next());
    const auto changed = evaluate(m.data.dataset, pert.queries, o.config.eval_split, m.coarse, fine_model,
                                  o.config.eval_candidates);

    const fs::path txt = o.out / "perturb_report.txt";
    const fs::path js = o.out / "perturb_report.json";
    const std::string text = comparison_text(base.report, changed.report, pert.replaced);
    write_text(txt, text);
    write_text(js, comparison_json(base.report, changed.report, pert.replaced).dump(2) + "\n");
    std::fputs(text.c_str(), stdout);
    write_manifest(o.out, "perturb-eval", o.config, m.inputs, { txt, js });
}

int run_guarded(const std::function<void()>& body)
{
    try {
        body();
        return kExitOk;
    } catch (const ConfigError& e) {
        spdlog::error("config error: {}", e.what());
        return kExitConfig;
    } catch (const DataError& e) {
        spdlog::error("data error: {}", e.what());
        return kExitData;
    } catch (const CheckpointError& e) {
        spdlog::error("checkpoint error: {}", e.what());
        return kExitCheckpoint;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return kExitFailure;
    }
}

} // namespace text2loc::cli
