#include "text2loc/cli/run_config.hpp"

#include <algorithm>
#include <fstream>
#include <functional>

#include "text2loc/common/errors.hpp"

namespace text2loc::cli {

using nlohmann::json;

namespace {

struct Field
{
    std::string key;
    std::function<void(RunConfig&, const json&)> set;
    std::function<json(const RunConfig&)> get;
};

std::size_t as_size(const std::string& key, const json& v)
{
    if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
        throw ConfigError("'" + key + "' must be a non-negative integer");
    }
    return v.get<std::size_t>();
}

double as_double(const std::string& key, const json& v)
{
    if (!v.is_number()) {
        throw ConfigError("'" + key + "' must be a number");
    }
    return v.get<double>();
}

bool as_bool(const std::string& key, const json& v)
{
    if (!v.is_boolean()) {
        throw ConfigError("'" + key + "' must be true or false");
    }
    return v.get<bool>();
}

template <typename Ref, typename Get>
Field size_field(std::string key, Ref ref, Get get)
{
    return { key, [key, ref](RunConfig& c, const json& v) { ref(c) = as_size(key, v); }, get };
}

template <typename Ref, typename Get>
Field double_field(std::string key, Ref ref, Get get)
{
    return { key, [key, ref](RunConfig& c, const json& v) { ref(c) = as_double(key, v); }, get };
}

template <typename Ref, typename Get>
Field bool_field(std::string key, Ref ref, Get get)
{
    return { key, [key, ref](RunConfig& c, const json& v) { ref(c) = as_bool(key, v); }, get };
}

#define T2L_REF(expr) [](RunConfig& c) -> auto& { return expr; }, [](const RunConfig& c) { return json(expr); }

const std::vector<Field>& fields()
{
    static const std::vector<Field> table = [] {
        std::vector<Field> f;
        f.push_back({ "seed",
                      [](RunConfig& c, const json& v) {
                          c.set_seed(as_size("seed", v));
                      },
                      [](const RunConfig& c) { return json(c.seed); } });

        f.push_back(double_field("extent", T2L_REF(c.dataset.extent)));
        f.push_back(double_field("cell", T2L_REF(c.dataset.cell)));
        f.push_back(double_field("stride", T2L_REF(c.dataset.stride)));
        f.push_back(double_field("density", T2L_REF(c.dataset.density)));
        f.push_back({ "class_mix",
                      [](RunConfig& c, const json& v) {
                          if (!v.is_array() || v.size() != data::kClassCount) {
                              throw ConfigError("'class_mix' must be an array of "
                                                + std::to_string(data::kClassCount) + " numbers");
                          }
                          for (std::size_t i = 0; i < data::kClassCount; ++i) {
                              c.dataset.class_mix[i] = as_double("class_mix", v[i]);
                          }
                      },
                      [](const RunConfig& c) { return json(c.dataset.class_mix); } });
        f.push_back(size_field("max_instances", T2L_REF(c.dataset.max_instances)));
        f.push_back(size_field("hints_per_query", T2L_REF(c.dataset.hints_per_query)));
        f.push_back(double_field("hint_radius", T2L_REF(c.dataset.hint_radius)));
        f.push_back(size_field("train_queries", T2L_REF(c.dataset.train_queries)));
        f.push_back(size_field("val_queries", T2L_REF(c.dataset.val_queries)));
        f.push_back(size_field("test_queries", T2L_REF(c.dataset.test_queries)));

        f.push_back(size_field("coarse_embed_dim", T2L_REF(c.coarse.embed_dim)));
        f.push_back(size_field("coarse_token_dim", T2L_REF(c.coarse.token_dim)));
        f.push_back(size_field("coarse_max_len", T2L_REF(c.coarse.max_len)));
        f.push_back(size_field("coarse_heads", T2L_REF(c.coarse.heads)));
        f.push_back(size_field("coarse_point_hidden", T2L_REF(c.coarse.point_hidden)));
        f.push_back(size_field("coarse_feature_dim", T2L_REF(c.coarse.feature_dim)));
        f.push_back(size_field("coarse_max_points", T2L_REF(c.coarse.max_points)));
        f.push_back(size_field("coarse_batch_size", T2L_REF(c.coarse.batch_size)));
        f.push_back(size_field("coarse_epochs", T2L_REF(c.coarse.epochs)));
        f.push_back(double_field("coarse_lr", T2L_REF(c.coarse.base_lr)));
        f.push_back(double_field("coarse_lr_decay", T2L_REF(c.coarse.lr_decay)));
        f.push_back(size_field("coarse_decay_step", T2L_REF(c.coarse.decay_step)));
        f.push_back(double_field("temperature", T2L_REF(c.coarse.temperature)));
        f.push_back(double_field("margin", T2L_REF(c.coarse.margin)));
        f.push_back(bool_field("no_htm", T2L_REF(c.coarse.no_htm)));
        f.push_back(bool_field("no_number_encoder", T2L_REF(c.coarse.no_number_encoder)));
        f.push_back(bool_field("pairwise_ranking_loss", T2L_REF(c.coarse.pairwise_ranking_loss)));

        f.push_back(size_field("fine_embed_dim", T2L_REF(c.fine.embed_dim)));
        f.push_back(size_field("fine_token_dim", T2L_REF(c.fine.token_dim)));
        f.push_back(size_field("fine_max_len", T2L_REF(c.fine.max_len)));
        f.push_back(size_field("fine_heads", T2L_REF(c.fine.heads)));
        f.push_back(size_field("fine_point_hidden", T2L_REF(c.fine.point_hidden)));
        f.push_back(size_field("fine_feature_dim", T2L_REF(c.fine.feature_dim)));
        f.push_back(size_field("fine_max_points", T2L_REF(c.fine.max_points)));
        f.push_back(size_field("fine_batch_size", T2L_REF(c.fine.batch_size)));
        f.push_back(size_field("fine_epochs", T2L_REF(c.fine.epochs)));
        f.push_back(double_field("fine_lr", T2L_REF(c.fine.lr)));
        f.push_back(size_field("ccat_count", T2L_REF(c.fine.ccat_count)));
        f.push_back(bool_field("no_pmc", T2L_REF(c.fine.no_pmc)));
        f.push_back(double_field("pmc_alpha", T2L_REF(c.fine.pmc.alpha)));
        f.push_back(double_field("pmc_beta", T2L_REF(c.fine.pmc.beta)));
        f.push_back(size_field("pmc_max_mismatch", T2L_REF(c.fine.pmc.max_mismatch)));

        f.push_back({ "eval_split",
                      [](RunConfig& c, const json& v) {
                          if (!v.is_string()) {
                              throw ConfigError("'eval_split' must be a string");
                          }
                          c.eval_split = v.get<std::string>();
                      },
                      [](const RunConfig& c) { return json(c.eval_split); } });
        f.push_back(size_field("eval_candidates", T2L_REF(c.eval_candidates)));
        f.push_back(size_field("perturb_hints", T2L_REF(c.perturb_hints)));
        return f;
    }();
    return table;
}

#undef T2L_REF

} // namespace

void RunConfig::set_seed(std::uint64_t s)
{
    seed = s;
    coarse.seed = s;
    fine.seed = s;
}

void RunConfig::validate() const
{
    if (dataset.cell <= 0.0 || dataset.stride <= 0.0 || dataset.extent < dataset.cell) {
        throw ConfigError("dataset needs cell > 0, stride > 0 and extent >= cell");
    }
    if (dataset.hints_per_query == 0) {
        throw ConfigError("hints_per_query must be positive");
    }
    if (dataset.train_queries == 0) {
        throw ConfigError("train_queries must be positive");
    }
    try {
        coarse.validate();
    } catch (const ValueError& e) {
        throw ConfigError(std::string("coarse: ") + e.what());
    }
    try {
        fine.validate();
    } catch (const ValueError& e) {
        throw ConfigError(std::string("fine: ") + e.what());
    }
    if (eval_split != "val" && eval_split != "test") {
        throw ConfigError("eval_split must be \"val\" or \"test\"");
    }
    if (eval_candidates == 0) {
        throw ConfigError("eval_candidates must be positive");
    }
    if (perturb_hints > 1) {
        throw ConfigError("perturb_hints must be 0 or 1");
    }
}

const std::vector<std::string>& dataset_keys()
{
    static const std::vector<std::string> keys { "extent", "cell", "stride", "density", "class_mix",
                                                 "max_instances", "hints_per_query", "hint_radius",
                                                 "train_queries", "val_queries", "test_queries" };
    return keys;
}

RunConfig parse_run_config(const json& j)
{
    if (!j.is_object()) {
        throw ConfigError("config must be a JSON object");
    }
    RunConfig c;
    for (const auto& [key, value] : j.items()) {
        const auto it = std::find_if(fields().begin(), fields().end(),
                                     [&](const Field& f) { return f.key == key; });
        if (it == fields().end()) {
            throw ConfigError("unknown config key '" + key + "'");
        }
        it->set(c, value);
        c.explicit_keys.insert(key);
    }
    c.validate();
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config " + path.string());
    }
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return parse_run_config(j);
}

json to_json(const RunConfig& config)
{
    json j = json::object();
    for (const auto& f : fields()) {
        j[f.key] = f.get(config);
    }
    return j;
}

std::string dump_config(const RunConfig& config)
{
    return to_json(config).dump(2) + "\n";
}

} // namespace text2loc::cli
