#include "text2loc/engine/checkpoint.hpp"

#include <charconv>
#include <cstring>

#include "text2loc/common/binary_io.hpp"
#include "text2loc/common/errors.hpp"

namespace text2loc::engine {

namespace {

constexpr std::string_view kMagic { "T2LCKPT\0", 8 };

std::string format_double(double v)
{
    char buf[64];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, end);
}

double parse_double(const std::string& s)
{
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw CheckpointError("malformed number in checkpoint metadata: " + s);
    return v;
}

} // namespace

const Tensor* Checkpoint::find(const std::string& name) const
{
    for (const auto& [n, t] : tensors)
        if (n == name)
            return &t;
    return nullptr;
}

std::string encode_checkpoint(const Checkpoint& checkpoint)
{
    ByteWriter w;
    w.put_bytes(kMagic);
    w.put_u32(kCheckpointVersion);
    w.put_u32(static_cast<std::uint32_t>(checkpoint.metadata.size()));
    for (const auto& [key, value] : checkpoint.metadata) {
        w.put_string(key);
        w.put_string(value);
    }
    w.put_u32(static_cast<std::uint32_t>(checkpoint.tensors.size()));
    for (const auto& [name, t] : checkpoint.tensors) {
        w.put_string(name);
        w.put_u32(static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape())
            w.put_u64(d);
        for (double v : t.values())
            w.put_f64(v);
    }
    w.put_u32(crc32_of(w.bytes()));
    return std::move(w.bytes());
}

Checkpoint decode_checkpoint(std::string_view bytes)
{
    if (bytes.size() < kMagic.size() + 4 + 4 || bytes.substr(0, kMagic.size()) != kMagic)
        throw CheckpointError("not a checkpoint file (bad magic)");
    const auto body = bytes.substr(0, bytes.size() - 4);
    ByteReader trailer(bytes.substr(bytes.size() - 4));
    if (crc32_of(body) != trailer.get_u32())
        throw CheckpointError("checkpoint checksum mismatch");

    try {
        ByteReader r(body);
        r.get_bytes(kMagic.size());
        const auto version = r.get_u32();
        if (version != kCheckpointVersion)
            throw CheckpointError("unsupported checkpoint version " + std::to_string(version));

        Checkpoint checkpoint;
        const auto meta_count = r.get_u32();
        for (std::uint32_t i = 0; i < meta_count; ++i) {
            auto key = r.get_string();
            checkpoint.metadata[key] = r.get_string();
        }
        const auto tensor_count = r.get_u32();
        for (std::uint32_t i = 0; i < tensor_count; ++i) {
            auto name = r.get_string();
            const auto rank = r.get_u32();
            if (rank > 2)
                throw CheckpointError("tensor " + name + " has unsupported rank");
            Shape shape(rank);
            for (auto& d : shape)
                d = r.get_u64();
            const auto n = shape_size(shape);
            if (n > r.remaining() / 8)
                throw CheckpointError("tensor " + name + " overruns the file");
            std::vector<double> values(n);
            for (auto& v : values)
                v = r.get_f64();
            checkpoint.tensors.emplace_back(std::move(name),
                                            Tensor(std::move(shape), std::move(values)));
        }
        if (!r.at_end())
            throw CheckpointError("trailing bytes after checkpoint tensors");
        return checkpoint;
    } catch (const DataError& e) {
        throw CheckpointError(std::string("corrupt checkpoint: ") + e.what());
    }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint)
{
    write_file_bytes(path, encode_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    if (!std::filesystem::exists(path))
        throw CheckpointError("checkpoint not found: " + path.string());
    return decode_checkpoint(read_file_bytes(path));
}

Checkpoint make_checkpoint(const ParameterSet& params, const AdamState* adam,
                           std::map<std::string, std::string> metadata)
{
    Checkpoint checkpoint;
    checkpoint.metadata = std::move(metadata);
    for (const auto& [name, t] : params.entries())
        checkpoint.tensors.emplace_back(name, t.detach());
    if (adam && !adam->first_moment.empty()) {
        checkpoint.metadata["adam.step"] = std::to_string(adam->step);
        checkpoint.metadata["adam.beta1"] = format_double(adam->beta1);
        checkpoint.metadata["adam.beta2"] = format_double(adam->beta2);
        checkpoint.metadata["adam.epsilon"] = format_double(adam->epsilon);
        const auto& entries = params.entries();
        for (std::size_t i = 0; i < entries.size(); ++i) {
            const auto& shape = entries[i].second.shape();
            checkpoint.tensors.emplace_back("adam.m/" + entries[i].first,
                                            Tensor(shape, adam->first_moment[i]));
            checkpoint.tensors.emplace_back("adam.v/" + entries[i].first,
                                            Tensor(shape, adam->second_moment[i]));
        }
    }
    return checkpoint;
}

void restore_parameters(const Checkpoint& checkpoint, ParameterSet& params)
{
    for (const auto& [name, t] : params.entries()) {
        const auto* stored = checkpoint.find(name);
        if (!stored)
            throw CheckpointError("checkpoint lacks parameter " + name);
        if (stored->shape() != t.shape())
            throw CheckpointError("parameter " + name + " has shape " +
                                  shape_string(stored->shape()) + " in checkpoint, model expects " +
                                  shape_string(t.shape()));
        auto dst = Tensor(t).mutable_values();
        std::copy(stored->values().begin(), stored->values().end(), dst.begin());
    }
    for (const auto& [name, t] : checkpoint.tensors) {
        if (name.rfind("adam.", 0) != 0 && !params.contains(name))
            throw CheckpointError("checkpoint parameter " + name + " is not part of this model");
    }
}

AdamState restore_adam(const Checkpoint& checkpoint, const ParameterSet& params)
{
    AdamState state;
    const auto it = checkpoint.metadata.find("adam.step");
    if (it == checkpoint.metadata.end())
        return state;
    state.step = std::stoull(it->second);
    state.beta1 = parse_double(checkpoint.metadata.at("adam.beta1"));
    state.beta2 = parse_double(checkpoint.metadata.at("adam.beta2"));
    state.epsilon = parse_double(checkpoint.metadata.at("adam.epsilon"));
    for (const auto& [name, t] : params.entries()) {
        const auto* m = checkpoint.find("adam.m/" + name);
        const auto* v = checkpoint.find("adam.v/" + name);
        if (!m || !v || m->shape() != t.shape() || v->shape() != t.shape())
            throw CheckpointError("optimizer state missing or misshapen for " + name);
        state.first_moment.emplace_back(m->values().begin(), m->values().end());
        state.second_moment.emplace_back(v->values().begin(), v->values().end());
    }
    return state;
}

} // namespace text2loc::engine
