#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "text2loc/common/rng.hpp"
#include "text2loc/data/vocabulary.hpp"

namespace text2loc::data {

using Point3 = std::array<double, 3>;
using Point2 = std::array<double, 2>;

inline constexpr std::size_t kClassCount = 8;
inline constexpr std::size_t kColorCount = 8;
inline constexpr std::size_t kDirectionCount = 8;
/* x, y, z, r, g, b */
inline constexpr std::size_t kPointWidth = 6;

/* Class vocabulary; ids index kClassNames */
inline constexpr std::array<std::string_view, kClassCount> kClassNames {
    "pole", "building", "vegetation", "road", "sidewalk", "fence", "traffic-sign", "parking"
};

inline constexpr std::array<std::string_view, kColorCount> kColorNames {
    "red", "green", "blue", "yellow", "gray", "white", "black", "brown"
};

/* Reference RGB of each color word, components in [0, 1] */
inline constexpr std::array<std::array<double, 3>, kColorCount> kColorPalette { {
    { 0.85, 0.15, 0.15 },
    { 0.20, 0.70, 0.25 },
    { 0.15, 0.30, 0.85 },
    { 0.90, 0.85, 0.20 },
    { 0.50, 0.50, 0.50 },
    { 0.95, 0.95, 0.95 },
    { 0.08, 0.08, 0.08 },
    { 0.55, 0.35, 0.15 },
} };

/* Compass bins counter-clockwise from east, each 45 degrees wide */
inline constexpr std::array<std::string_view, kDirectionCount> kDirectionNames {
    "east", "north-east", "north", "north-west", "west", "south-west", "south", "south-east"
};

struct ObjectInstance
{
    std::uint32_t class_id = 0;
    std::uint32_t color_id = 0;
    /* n x 6 row-major (x, y, z, r, g, b); coordinates in meters, colors in [0, 1] */
    std::vector<double> points;
    /* Mean of the point coordinates */
    Point3 center {};

    std::size_t point_count() const { return points.size() / kPointWidth; }
    bool operator==(const ObjectInstance&) const = default;
};

struct Submap
{
    std::uint32_t id = 0;
    Point3 center {};
    /* Scene instance indices, nearest to the cube center first */
    std::vector<std::uint32_t> instance_ids;

    std::size_t valid_count() const { return instance_ids.size(); }
    bool operator==(const Submap&) const = default;
};

struct Database
{
    double cell = 30.0;
    double stride = 10.0;
    std::size_t cells_x = 0;
    std::size_t cells_y = 0;
    std::size_t max_instances = 28;
    std::vector<Submap> submaps;

    bool operator==(const Database&) const = default;
};

struct Hint
{
    std::uint32_t instance_id = 0;
    std::uint32_t direction = 0;
    std::vector<std::uint32_t> tokens;

    bool operator==(const Hint&) const = default;
};

struct QueryDescription
{
    std::vector<Hint> hints;
    /* World-frame planar target, meters */
    Point2 target {};
    std::uint32_t gt_submap_id = 0;

    bool operator==(const QueryDescription&) const = default;
};

struct DatasetConfig
{
    double extent = 100.0;
    double cell = 30.0;
    double stride = 10.0;
    /* Instances per 100 m^2 of scene area */
    double density = 3.0;
    std::array<double, kClassCount> class_mix { 0.18, 0.10, 0.18, 0.06, 0.10, 0.12, 0.14, 0.12 };
    std::size_t max_instances = 28;
    std::size_t hints_per_query = 6;
    double hint_radius = 15.0;
    std::size_t train_queries = 512;
    std::size_t val_queries = 256;
    std::size_t test_queries = 256;

    bool operator==(const DatasetConfig&) const = default;
};

struct Scene
{
    double extent = 0.0;
    std::vector<ObjectInstance> instances;

    bool operator==(const Scene&) const = default;
};

struct Dataset
{
    DatasetConfig config;
    std::uint64_t seed = 0;
    Scene scene;
    Database database;
    std::vector<QueryDescription> train;
    std::vector<QueryDescription> val;
    std::vector<QueryDescription> test;

    bool operator==(const Dataset&) const = default;
};

/* Per-class point-count range [lo, hi] */
std::array<std::size_t, 2> class_point_range(std::uint32_t class_id);

/*
 * Random city scene. Rejects extents below 60 m, a class mix that is not a
 * distribution, and densities giving fewer than one instance per cell.
 */
Scene generate_scene(const DatasetConfig& config, std::uint64_t seed);

/* Cells along one axis: floor((extent - cell) / stride) + 1 */
std::size_t grid_cells(double extent, double cell, double stride);

/* Closed-cube membership */
bool cube_contains(const Point3& cube_center, double cell, const Point3& p);

/*
 * Overlapping cubes of side `cell` every `stride` meters. Each keeps the
 * instances whose centers lie in the closed cube, truncated to the
 * max_instances nearest (planar) to the cube center.
 */
Database slice_submaps(const Scene& scene, double cell, double stride, std::size_t max_instances);

/* Compass bin of (target - from); 8 bins with boundaries at odd multiples of 22.5 degrees */
std::uint32_t direction_of(const Point2& from, const Point2& target);

std::string hint_text(std::uint32_t direction, std::uint32_t color_id, std::uint32_t class_id);

/*
 * Submap containing the target whose center is nearest to it (planar),
 * ties to the lowest id. Throws DataError when no submap contains it.
 */
std::uint32_t ground_truth_submap(const Database& database, const Point2& target);

Hint make_hint(const Scene& scene, std::uint32_t instance_id, const Point2& target,
               const Vocabulary& vocab);

/*
 * Draws a target inside the span of submap centers and describes it by
 * hints about the nearest instances of its ground-truth submap within the
 * hint radius; resamples the target when too few instances qualify.
 */
QueryDescription generate_query(const Scene& scene, const Database& database,
                                const DatasetConfig& config, const Vocabulary& vocab, Rng& rng);
QueryDescription generate_query(const Scene& scene, const Database& database,
                                const DatasetConfig& config, std::uint64_t seed);

Dataset generate_dataset(const DatasetConfig& config, std::uint64_t seed);

/*
 * Dataset file layout (little-endian):
 *
 *   bytes 0-7  magic "T2LDATA\0"
 *   u32        format version (kDatasetVersion)
 *   u64        seed
 *   config     f64 extent, cell, stride, density, class_mix[8];
 *              u64 max_instances, hints_per_query; f64 hint_radius;
 *              u64 train_queries, val_queries, test_queries
 *   records    u32 tag, u64 payload length, payload; tags in order:
 *     1 scene     f64 extent, u64 count; per instance u32 class, u32 color, u64 n,
 *                 f64 center[3], f64 points[6n]
 *     2 database  f64 cell, stride; u64 cells_x, cells_y, max_instances, count;
 *                 per submap u32 id, f64 center[3], u32 valid, u32 ids[valid]
 *     3,4,5       train/val/test queries: u64 count; per query f64 target[2],
 *                 u32 gt_submap, u32 hints; per hint u32 instance, u32 direction,
 *                 u32 n_tokens, u32 tokens[n_tokens]
 *   u32        CRC-32 of every preceding byte
 */
inline constexpr std::uint32_t kDatasetVersion = 1;

std::string encode_dataset(const Dataset& dataset);
/* ChecksumError on truncation/corruption, DataError on version or layout errors */
Dataset decode_dataset(std::string_view bytes);

void serialize_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

} // namespace text2loc::data
