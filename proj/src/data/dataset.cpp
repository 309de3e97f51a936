#include "text2loc/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "text2loc/common/binary_io.hpp"
#include "text2loc/common/errors.hpp"

namespace text2loc::data {

namespace {

constexpr char kMagic[8] = { 'T', '2', 'L', 'D', 'A', 'T', 'A', '\0' };
constexpr double kColorNoise = 0.03;

enum RecordTag : std::uint32_t {
    kSceneRecord = 1,
    kDatabaseRecord = 2,
    kTrainRecord = 3,
    kValRecord = 4,
    kTestRecord = 5,
};

double planar_dist2(const Point3& a, double x, double y)
{
    const double dx = a[0] - x;
    const double dy = a[1] - y;
    return dx * dx + dy * dy;
}

void validate_config(const DatasetConfig& c)
{
    auto finite_positive = [](double v) { return std::isfinite(v) && v > 0.0; };
    if (!std::isfinite(c.extent) || c.extent < 60.0) {
        throw ValueError("scene extent must be at least 60 m, got " + std::to_string(c.extent));
    }
    if (!finite_positive(c.cell) || c.cell > c.extent) {
        throw ValueError("submap cell must be positive and no larger than the extent");
    }
    if (!finite_positive(c.stride)) {
        throw ValueError("submap stride must be positive");
    }
    if (!finite_positive(c.density) || c.density * c.cell * c.cell / 100.0 < 1.0) {
        throw ValueError("density " + std::to_string(c.density)
                         + " gives fewer than one instance per submap cell");
    }
    double total = 0.0;
    for (double w : c.class_mix) {
        if (!std::isfinite(w) || w < 0.0) {
            throw ValueError("class mix weights must be finite and non-negative");
        }
        total += w;
    }
    if (std::abs(total - 1.0) > 1e-6) {
        throw ValueError("class mix must sum to 1, got " + std::to_string(total));
    }
    if (c.max_instances == 0) {
        throw ValueError("max_instances must be positive");
    }
    if (c.hints_per_query == 0 || c.hints_per_query > c.max_instances) {
        throw ValueError("hints_per_query must be in [1, max_instances]");
    }
    if (!finite_positive(c.hint_radius)) {
        throw ValueError("hint radius must be positive");
    }
}

std::uint32_t sample_class(const std::array<double, kClassCount>& mix, Rng& rng)
{
    const double u = rng.uniform();
    double acc = 0.0;
    std::uint32_t last = 0;
    for (std::uint32_t k = 0; k < kClassCount; ++k) {
        if (mix[k] <= 0.0) {
            continue;
        }
        last = k;
        acc += mix[k];
        if (u < acc) {
            return k;
        }
    }
    return last;
}

/* Geometry is laid out in a local frame, rotated by yaw and moved to the anchor */
class ShapeBuilder
{
public:
    ShapeBuilder(double ax, double ay, double yaw, std::vector<double>& out)
        : ax_(ax), ay_(ay), c_(std::cos(yaw)), s_(std::sin(yaw)), out_(out)
    { }

    void add(double u, double v, double z)
    {
        out_.push_back(ax_ + c_ * u - s_ * v);
        out_.push_back(ay_ + s_ * u + c_ * v);
        out_.push_back(z);
        out_.insert(out_.end(), 3, 0.0);
    }

private:
    double ax_, ay_, c_, s_;
    std::vector<double>& out_;
};

void add_pole(ShapeBuilder& b, std::size_t n, double radius, double height, Rng& rng)
{
    for (std::size_t i = 0; i < n; ++i) {
        const double t = rng.uniform(0.0, 2.0 * std::numbers::pi);
        b.add(radius * std::cos(t), radius * std::sin(t), rng.uniform(0.0, height));
    }
}

void add_flat(ShapeBuilder& b, std::size_t n, double length, double width, double z, Rng& rng)
{
    for (std::size_t i = 0; i < n; ++i) {
        b.add(rng.uniform(-length / 2, length / 2), rng.uniform(-width / 2, width / 2),
              z + rng.normal(0.0, 0.01));
    }
}

void add_building(ShapeBuilder& b, std::size_t n, Rng& rng)
{
    const double w = rng.uniform(6.0, 12.0);
    const double d = rng.uniform(6.0, 12.0);
    const double h = rng.uniform(6.0, 15.0);
    /* four walls then the roof, chosen by area */
    const std::array<double, 5> area { w * h, w * h, d * h, d * h, w * d };
    const double total = std::accumulate(area.begin(), area.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double u = rng.uniform(0.0, total);
        std::size_t face = 0;
        while (face < 4 && u >= area[face]) {
            u -= area[face];
            ++face;
        }
        const double p = rng.uniform(-0.5, 0.5);
        const double z = rng.uniform(0.0, h);
        switch (face) {
        case 0: b.add(p * w, -d / 2, z); break;
        case 1: b.add(p * w, d / 2, z); break;
        case 2: b.add(-w / 2, p * d, z); break;
        case 3: b.add(w / 2, p * d, z); break;
        default: b.add(p * w, rng.uniform(-0.5, 0.5) * d, h); break;
        }
    }
}

void add_vegetation(ShapeBuilder& b, std::size_t n, Rng& rng)
{
    const double rx = rng.uniform(1.5, 3.0);
    const double ry = rng.uniform(1.5, 3.0);
    const double rz = rng.uniform(1.2, 2.5);
    const double cz = rng.uniform(2.0, 5.0);
    for (std::size_t i = 0; i < n; ++i) {
        double x = rng.normal(0.0, 1.0);
        double y = rng.normal(0.0, 1.0);
        double z = rng.normal(0.0, 1.0);
        const double len = std::max(std::sqrt(x * x + y * y + z * z), 1e-9);
        const double r = rng.uniform(0.8, 1.0) / len;
        b.add(rx * x * r, ry * y * r, cz + rz * z * r);
    }
}

void add_fence(ShapeBuilder& b, std::size_t n, Rng& rng)
{
    const double length = rng.uniform(4.0, 10.0);
    const double height = rng.uniform(1.0, 2.0);
    for (std::size_t i = 0; i < n; ++i) {
        b.add(rng.uniform(-length / 2, length / 2), rng.normal(0.0, 0.03), rng.uniform(0.0, height));
    }
}

void add_traffic_sign(ShapeBuilder& b, std::size_t n, Rng& rng)
{
    const double height = rng.uniform(2.2, 2.8);
    const std::size_t pole = (n * 3) / 5;
    add_pole(b, pole, 0.05, height, rng);
    for (std::size_t i = pole; i < n; ++i) {
        b.add(rng.uniform(-0.35, 0.35), rng.normal(0.0, 0.01),
              height + rng.uniform(0.0, 0.7));
    }
}

ObjectInstance make_instance(std::uint32_t class_id, std::uint32_t color_id, double ax, double ay,
                             Rng& rng)
{
    ObjectInstance inst;
    inst.class_id = class_id;
    inst.color_id = color_id;
    const auto [lo, hi] = class_point_range(class_id);
    const std::size_t n = lo + rng.index(hi - lo + 1);
    inst.points.reserve(n * kPointWidth);
    const double yaw = rng.uniform(0.0, std::numbers::pi);
    ShapeBuilder b(ax, ay, yaw, inst.points);
    switch (class_id) {
    case 0: add_pole(b, n, rng.uniform(0.12, 0.2), rng.uniform(4.0, 8.0), rng); break;
    case 1: add_building(b, n, rng); break;
    case 2: add_vegetation(b, n, rng); break;
    case 3: add_flat(b, n, rng.uniform(12.0, 20.0), rng.uniform(4.0, 7.0), 0.0, rng); break;
    case 4: add_flat(b, n, rng.uniform(8.0, 15.0), rng.uniform(1.5, 3.0), 0.15, rng); break;
    case 5: add_fence(b, n, rng); break;
    case 6: add_traffic_sign(b, n, rng); break;
    default: add_flat(b, n, rng.uniform(5.0, 8.0), rng.uniform(5.0, 8.0), 0.05, rng); break;
    }

    const auto& rgb = kColorPalette[color_id];
    Point3 sum {};
    for (std::size_t i = 0; i < n; ++i) {
        double* p = inst.points.data() + i * kPointWidth;
        for (int k = 0; k < 3; ++k) {
            sum[k] += p[k];
            p[3 + k] = std::clamp(rgb[k] + rng.normal(0.0, kColorNoise), 0.0, 1.0);
        }
    }
    for (int k = 0; k < 3; ++k) {
        inst.center[k] = sum[k] / static_cast<double>(n);
    }
    return inst;
}

void write_config(ByteWriter& w, const DatasetConfig& c)
{
    w.put_f64(c.extent);
    w.put_f64(c.cell);
    w.put_f64(c.stride);
    w.put_f64(c.density);
    for (double v : c.class_mix) {
        w.put_f64(v);
    }
    w.put_u64(c.max_instances);
    w.put_u64(c.hints_per_query);
    w.put_f64(c.hint_radius);
    w.put_u64(c.train_queries);
    w.put_u64(c.val_queries);
    w.put_u64(c.test_queries);
}

DatasetConfig read_config(ByteReader& r)
{
    DatasetConfig c;
    c.extent = r.get_f64();
    c.cell = r.get_f64();
    c.stride = r.get_f64();
    c.density = r.get_f64();
    for (double& v : c.class_mix) {
        v = r.get_f64();
    }
    c.max_instances = r.get_u64();
    c.hints_per_query = r.get_u64();
    c.hint_radius = r.get_f64();
    c.train_queries = r.get_u64();
    c.val_queries = r.get_u64();
    c.test_queries = r.get_u64();
    return c;
}

void put_point(ByteWriter& w, const Point3& p)
{
    for (double v : p) {
        w.put_f64(v);
    }
}

Point3 get_point(ByteReader& r)
{
    Point3 p {};
    for (double& v : p) {
        v = r.get_f64();
    }
    return p;
}

void put_record(ByteWriter& w, std::uint32_t tag, const ByteWriter& payload)
{
    w.put_u32(tag);
    w.put_u64(payload.size());
    w.put_bytes(payload.bytes());
}

std::string_view get_record(ByteReader& r, std::uint32_t expected_tag)
{
    const std::uint32_t tag = r.get_u32();
    if (tag != expected_tag) {
        throw DataError("dataset record " + std::to_string(tag) + " where "
                        + std::to_string(expected_tag) + " was expected");
    }
    const std::uint64_t length = r.get_u64();
    if (length > r.remaining()) {
        throw DataError("dataset record length exceeds file size");
    }
    return r.get_bytes(static_cast<std::size_t>(length));
}

void expect_consumed(const ByteReader& r, const char* what)
{
    if (!r.at_end()) {
        throw DataError(std::string("trailing bytes in ") + what + " record");
    }
}

std::size_t checked_count(ByteReader& r, std::size_t min_bytes_each)
{
    const std::uint64_t n = r.get_u64();
    if (min_bytes_each > 0 && n > r.remaining() / min_bytes_each) {
        throw DataError("record count exceeds payload size");
    }
    return static_cast<std::size_t>(n);
}

ByteWriter encode_queries(const std::vector<QueryDescription>& queries)
{
    ByteWriter w;
    w.put_u64(queries.size());
    for (const auto& q : queries) {
        w.put_f64(q.target[0]);
        w.put_f64(q.target[1]);
        w.put_u32(q.gt_submap_id);
        w.put_u32(static_cast<std::uint32_t>(q.hints.size()));
        for (const auto& h : q.hints) {
            w.put_u32(h.instance_id);
            w.put_u32(h.direction);
            w.put_u32(static_cast<std::uint32_t>(h.tokens.size()));
            for (auto t : h.tokens) {
                w.put_u32(t);
            }
        }
    }
    return w;
}

std::vector<QueryDescription> decode_queries(std::string_view bytes, std::size_t instance_count,
                                             std::size_t submap_count)
{
    ByteReader r(bytes);
    const std::size_t n = checked_count(r, 24);
    std::vector<QueryDescription> queries(n);
    for (auto& q : queries) {
        q.target[0] = r.get_f64();
        q.target[1] = r.get_f64();
        q.gt_submap_id = r.get_u32();
        if (q.gt_submap_id >= submap_count) {
            throw DataError("query references unknown submap " + std::to_string(q.gt_submap_id));
        }
        q.hints.resize(r.get_u32());
        for (auto& h : q.hints) {
            h.instance_id = r.get_u32();
            h.direction = r.get_u32();
            if (h.instance_id >= instance_count || h.direction >= kDirectionCount) {
                throw DataError("hint references unknown instance or direction");
            }
            const std::uint32_t tokens = r.get_u32();
            if (tokens > r.remaining() / 4) {
                throw DataError("hint token count exceeds payload size");
            }
            h.tokens.resize(tokens);
            for (auto& t : h.tokens) {
                t = r.get_u32();
            }
        }
    }
    expect_consumed(r, "query");
    return queries;
}

} // namespace

std::array<std::size_t, 2> class_point_range(std::uint32_t class_id)
{
    static constexpr std::array<std::array<std::size_t, 2>, kClassCount> ranges { {
        { 40, 400 },     // pole
        { 1000, 2500 },  // building
        { 300, 900 },    // vegetation
        { 1100, 2500 },  // road
        { 500, 1000 },   // sidewalk
        { 150, 500 },    // fence
        { 30, 250 },     // traffic-sign
        { 300, 800 },    // parking
    } };
    if (class_id >= kClassCount) {
        throw ValueError("unknown class id " + std::to_string(class_id));
    }
    return ranges[class_id];
}

Scene generate_scene(const DatasetConfig& config, std::uint64_t seed)
{
    validate_config(config);
    Rng rng(seed);
    const auto count = static_cast<std::size_t>(
        std::llround(config.density * config.extent * config.extent / 100.0));
    Scene scene;
    scene.extent = config.extent;
    scene.instances.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::uint32_t cls = sample_class(config.class_mix, rng);
        const auto color = static_cast<std::uint32_t>(rng.index(kColorCount));
        const double ax = rng.uniform(0.0, config.extent);
        const double ay = rng.uniform(0.0, config.extent);
        scene.instances.push_back(make_instance(cls, color, ax, ay, rng));
    }
    return scene;
}

std::size_t grid_cells(double extent, double cell, double stride)
{
    if (!(stride > 0.0) || !(cell > 0.0) || extent < cell) {
        throw ValueError("grid needs stride > 0, cell > 0 and extent >= cell");
    }
    /* tolerance so that exact multiples survive rounding in the division */
    return static_cast<std::size_t>(std::floor((extent - cell) / stride + 1e-9)) + 1;
}

bool cube_contains(const Point3& cube_center, double cell, const Point3& p)
{
    const double half = cell / 2.0;
    for (int k = 0; k < 3; ++k) {
        if (std::abs(p[k] - cube_center[k]) > half) {
            return false;
        }
    }
    return true;
}

Database slice_submaps(const Scene& scene, double cell, double stride, std::size_t max_instances)
{
    Database db;
    db.cell = cell;
    db.stride = stride;
    db.max_instances = max_instances;
    db.cells_x = grid_cells(scene.extent, cell, stride);
    db.cells_y = db.cells_x;
    db.submaps.reserve(db.cells_x * db.cells_y);
    for (std::size_t iy = 0; iy < db.cells_y; ++iy) {
        for (std::size_t ix = 0; ix < db.cells_x; ++ix) {
            Submap s;
            s.id = static_cast<std::uint32_t>(db.submaps.size());
            s.center = { cell / 2 + static_cast<double>(ix) * stride,
                         cell / 2 + static_cast<double>(iy) * stride, cell / 2 };
            std::vector<std::pair<double, std::uint32_t>> members;
            for (std::uint32_t i = 0; i < scene.instances.size(); ++i) {
                const auto& c = scene.instances[i].center;
                if (cube_contains(s.center, cell, c)) {
                    members.emplace_back(planar_dist2(c, s.center[0], s.center[1]), i);
                }
            }
            std::sort(members.begin(), members.end());
            if (members.size() > max_instances) {
                members.resize(max_instances);
            }
            for (const auto& m : members) {
                s.instance_ids.push_back(m.second);
            }
            db.submaps.push_back(std::move(s));
        }
    }
    return db;
}

std::uint32_t direction_of(const Point2& from, const Point2& target)
{
    const double angle = std::atan2(target[1] - from[1], target[0] - from[0]);
    const auto bin = static_cast<long>(std::floor(angle / (std::numbers::pi / 4) + 0.5));
    return static_cast<std::uint32_t>(((bin % 8) + 8) % 8);
}

std::string hint_text(std::uint32_t direction, std::uint32_t color_id, std::uint32_t class_id)
{
    if (direction >= kDirectionCount || color_id >= kColorCount || class_id >= kClassCount) {
        throw ValueError("hint field outside its vocabulary");
    }
    std::string s = "the pose is ";
    s += kDirectionNames[direction];
    s += " of a ";
    s += kColorNames[color_id];
    s += ' ';
    s += kClassNames[class_id];
    return s;
}

std::uint32_t ground_truth_submap(const Database& database, const Point2& target)
{
    const Point3 probe { target[0], target[1], 0.0 };
    double best = 0.0;
    std::int64_t best_id = -1;
    for (const auto& s : database.submaps) {
        const Point3 planar { s.center[0], s.center[1], 0.0 };
        if (!cube_contains(planar, database.cell, probe)) {
            continue;
        }
        const double d = planar_dist2(s.center, target[0], target[1]);
        if (best_id < 0 || d < best) {
            best = d;
            best_id = s.id;
        }
    }
    if (best_id < 0) {
        throw DataError("target lies outside every submap");
    }
    return static_cast<std::uint32_t>(best_id);
}

Hint make_hint(const Scene& scene, std::uint32_t instance_id, const Point2& target,
               const Vocabulary& vocab)
{
    const auto& inst = scene.instances.at(instance_id);
    Hint h;
    h.instance_id = instance_id;
    h.direction = direction_of({ inst.center[0], inst.center[1] }, target);
    h.tokens = tokenize(hint_text(h.direction, inst.color_id, inst.class_id), vocab);
    return h;
}

QueryDescription generate_query(const Scene& scene, const Database& database,
                                const DatasetConfig& config, const Vocabulary& vocab, Rng& rng)
{
    if (database.submaps.empty()) {
        throw DataError("cannot draw queries from an empty database");
    }
    const auto& first = database.submaps.front().center;
    const auto& last = database.submaps.back().center;
    const double radius2 = config.hint_radius * config.hint_radius;
    constexpr int kMaxAttempts = 10000;
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        QueryDescription q;
        q.target = { rng.uniform(first[0], last[0]), rng.uniform(first[1], last[1]) };
        q.gt_submap_id = ground_truth_submap(database, q.target);
        std::vector<std::pair<double, std::uint32_t>> near;
        for (auto id : database.submaps[q.gt_submap_id].instance_ids) {
            const double d = planar_dist2(scene.instances[id].center, q.target[0], q.target[1]);
            if (d <= radius2) {
                near.emplace_back(d, id);
            }
        }
        if (near.size() < config.hints_per_query) {
            continue;
        }
        std::sort(near.begin(), near.end());
        near.resize(config.hints_per_query);
        rng.shuffle(near.begin(), near.end());
        for (const auto& [d, id] : near) {
            q.hints.push_back(make_hint(scene, id, q.target, vocab));
        }
        return q;
    }
    throw DataError("no target with enough instances within the hint radius");
}

QueryDescription generate_query(const Scene& scene, const Database& database,
                                const DatasetConfig& config, std::uint64_t seed)
{
    Rng rng(seed);
    return generate_query(scene, database, config, Vocabulary::build_default(), rng);
}

Dataset generate_dataset(const DatasetConfig& config, std::uint64_t seed)
{
    Dataset ds;
    ds.config = config;
    ds.seed = seed;
    ds.scene = generate_scene(config, Rng::derive(seed, 0).next());
    ds.database = slice_submaps(ds.scene, config.cell, config.stride, config.max_instances);
    const auto vocab = Vocabulary::build_default();
    auto fill = [&](std::vector<QueryDescription>& out, std::size_t n, std::uint64_t stream) {
        Rng rng = Rng::derive(seed, stream);
        out.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            out.push_back(generate_query(ds.scene, ds.database, config, vocab, rng));
        }
    };
    fill(ds.train, config.train_queries, 1);
    fill(ds.val, config.val_queries, 2);
    fill(ds.test, config.test_queries, 3);
    return ds;
}

std::string encode_dataset(const Dataset& ds)
{
    ByteWriter w;
    w.put_bytes(std::string_view(kMagic, sizeof kMagic));
    w.put_u32(kDatasetVersion);
    w.put_u64(ds.seed);
    write_config(w, ds.config);

    ByteWriter scene;
    scene.put_f64(ds.scene.extent);
    scene.put_u64(ds.scene.instances.size());
    for (const auto& inst : ds.scene.instances) {
        scene.put_u32(inst.class_id);
        scene.put_u32(inst.color_id);
        scene.put_u64(inst.point_count());
        put_point(scene, inst.center);
        for (double v : inst.points) {
            scene.put_f64(v);
        }
    }
    put_record(w, kSceneRecord, scene);

    ByteWriter db;
    db.put_f64(ds.database.cell);
    db.put_f64(ds.database.stride);
    db.put_u64(ds.database.cells_x);
    db.put_u64(ds.database.cells_y);
    db.put_u64(ds.database.max_instances);
    db.put_u64(ds.database.submaps.size());
    for (const auto& s : ds.database.submaps) {
        db.put_u32(s.id);
        put_point(db, s.center);
        db.put_u32(static_cast<std::uint32_t>(s.instance_ids.size()));
        for (auto id : s.instance_ids) {
            db.put_u32(id);
        }
    }
    put_record(w, kDatabaseRecord, db);

    put_record(w, kTrainRecord, encode_queries(ds.train));
    put_record(w, kValRecord, encode_queries(ds.val));
    put_record(w, kTestRecord, encode_queries(ds.test));

    w.put_u32(crc32_of(w.bytes()));
    return std::move(w.bytes());
}

Dataset decode_dataset(std::string_view bytes)
{
    if (bytes.size() >= sizeof kMagic && bytes.substr(0, sizeof kMagic) != std::string_view(kMagic, sizeof kMagic)) {
        throw DataError("not a dataset file (bad magic)");
    }
    if (bytes.size() < sizeof kMagic + 8) {
        throw ChecksumError("dataset file truncated");
    }
    const std::string_view body = bytes.substr(0, bytes.size() - 4);
    ByteReader trailer(bytes.substr(bytes.size() - 4));
    if (crc32_of(body) != trailer.get_u32()) {
        throw ChecksumError("dataset checksum mismatch (file truncated or corrupted)");
    }

    ByteReader r(body);
    r.get_bytes(sizeof kMagic);
    const std::uint32_t version = r.get_u32();
    if (version != kDatasetVersion) {
        throw DataError("dataset format version " + std::to_string(version) + " is not supported (expected "
                        + std::to_string(kDatasetVersion) + ")");
    }
    Dataset ds;
    ds.seed = r.get_u64();
    ds.config = read_config(r);

    {
        ByteReader s(get_record(r, kSceneRecord));
        ds.scene.extent = s.get_f64();
        ds.scene.instances.resize(checked_count(s, 40));
        for (auto& inst : ds.scene.instances) {
            inst.class_id = s.get_u32();
            inst.color_id = s.get_u32();
            if (inst.class_id >= kClassCount || inst.color_id >= kColorCount) {
                throw DataError("instance class or color outside the vocabulary");
            }
            const std::uint64_t n = s.get_u64();
            inst.center = get_point(s);
            if (n > s.remaining() / (8 * kPointWidth)) {
                throw DataError("instance point count exceeds payload size");
            }
            inst.points.resize(static_cast<std::size_t>(n) * kPointWidth);
            for (double& v : inst.points) {
                v = s.get_f64();
            }
        }
        expect_consumed(s, "scene");
    }
    {
        ByteReader d(get_record(r, kDatabaseRecord));
        ds.database.cell = d.get_f64();
        ds.database.stride = d.get_f64();
        ds.database.cells_x = d.get_u64();
        ds.database.cells_y = d.get_u64();
        ds.database.max_instances = d.get_u64();
        ds.database.submaps.resize(checked_count(d, 32));
        for (std::size_t i = 0; i < ds.database.submaps.size(); ++i) {
            auto& s = ds.database.submaps[i];
            s.id = d.get_u32();
            if (s.id != i) {
                throw DataError("submap ids must be dense and ordered");
            }
            s.center = get_point(d);
            const std::uint32_t valid = d.get_u32();
            if (valid > ds.database.max_instances || valid > d.remaining() / 4) {
                throw DataError("submap instance count out of range");
            }
            s.instance_ids.resize(valid);
            for (auto& id : s.instance_ids) {
                id = d.get_u32();
                if (id >= ds.scene.instances.size()) {
                    throw DataError("submap references unknown instance");
                }
            }
        }
        expect_consumed(d, "database");
    }
    const std::size_t ni = ds.scene.instances.size();
    const std::size_t ns = ds.database.submaps.size();
    ds.train = decode_queries(get_record(r, kTrainRecord), ni, ns);
    ds.val = decode_queries(get_record(r, kValRecord), ni, ns);
    ds.test = decode_queries(get_record(r, kTestRecord), ni, ns);
    if (!r.at_end()) {
        throw DataError("unexpected bytes after the last dataset record");
    }
    return ds;
}

void serialize_dataset(const Dataset& dataset, const std::filesystem::path& path)
{
    write_file_bytes(path, encode_dataset(dataset));
}

Dataset load_dataset(const std::filesystem::path& path)
{
    if (!std::filesystem::exists(path)) {
        throw DataError("dataset file not found: " + path.string());
    }
    return decode_dataset(read_file_bytes(path));
}

} // namespace text2loc::data
