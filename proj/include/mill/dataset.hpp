#pragma once

// Manifests, scene-disjoint splits, tiling/resizing and triplet sampling.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "mill/image.hpp"
#include "mill/png_io.hpp"
#include "mill/scene_sim.hpp"

namespace mill::data {

enum class Split { train, val, test };

inline const char* to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        default: return "test";
    }
}

inline Split parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw std::invalid_argument("unknown split '" + s + "' (expected train, val or test)");
}

struct SplitCounts {
    int train = 30;
    int val = 12;
    int test = 8;

    int total() const { return train + val + test; }
    bool operator==(const SplitCounts&) const = default;
};

/// 30/12/8 proportions scaled to n scenes, each split holding at least one scene.
inline SplitCounts proportional_splits(int n_scenes) {
    if (n_scenes < 3) throw std::invalid_argument("proportional_splits: need at least 3 scenes");
    SplitCounts c;
    c.val = std::max(1, static_cast<int>(std::lround(n_scenes * 12.0 / 50.0)));
    c.test = std::max(1, static_cast<int>(std::lround(n_scenes * 8.0 / 50.0)));
    c.train = n_scenes - c.val - c.test;
    if (c.train < 1) {  // only reachable for tiny n
        c.train = 1;
        c.val = n_scenes - 2;
        c.test = 1;
    }
    return c;
}

struct ManifestEntry {
    int scene_id = 0;
    int level_index = 0;  // 1..10, sim::kGtLevel for the ground truth
    double i_in = 0.0;
    double lux = 0.0;
    std::string path;  // relative to the manifest's directory
    Split split = Split::train;

    bool is_gt() const { return level_index == sim::kGtLevel; }
    bool operator==(const ManifestEntry&) const = default;
};

inline constexpr int kManifestVersion = 1;

struct Manifest {
    int version = kManifestVersion;
    std::vector<ManifestEntry> entries;

    std::vector<int> scenes(Split split) const {
        std::vector<int> ids;
        for (const auto& e : entries)
            if (e.split == split && std::find(ids.begin(), ids.end(), e.scene_id) == ids.end())
                ids.push_back(e.scene_id);
        return ids;
    }

    const ManifestEntry& find(int scene_id, int level_index) const {
        for (const auto& e : entries)
            if (e.scene_id == scene_id && e.level_index == level_index) return e;
        throw std::out_of_range("manifest has no entry for scene " + std::to_string(scene_id) +
                                " level " + std::to_string(level_index));
    }

    bool operator==(const Manifest&) const = default;
};

inline std::string capture_path(int scene_id, int level_index) {
    char buf[64];
    if (level_index == sim::kGtLevel)
        std::snprintf(buf, sizeof buf, "scene_%04d/gt.png", scene_id);
    else
        std::snprintf(buf, sizeof buf, "scene_%04d/level_%02d.png", scene_id, level_index);
    return buf;
}

/// Throws if any scene spans more than one split or lacks its 11 captures.
inline void validate(const Manifest& m) {
    std::map<int, std::pair<Split, int>> seen;
    for (const auto& e : m.entries) {
        if (e.level_index < 1 || e.level_index > sim::kGtLevel)
            throw std::invalid_argument("manifest: bad level_index " + std::to_string(e.level_index));
        auto [it, inserted] = seen.try_emplace(e.scene_id, e.split, 0);
        if (!inserted && it->second.first != e.split)
            throw std::invalid_argument("manifest: scene " + std::to_string(e.scene_id) +
                                        " appears in more than one split");
        ++it->second.second;
    }
    for (const auto& [id, info] : seen)
        if (info.second != sim::kCapturesPerScene)
            throw std::invalid_argument("manifest: scene " + std::to_string(id) + " has " +
                                        std::to_string(info.second) + " entries, expected 11");
}

/// Scene-disjoint split after a seeded shuffle of the scene order.
inline Manifest build_manifest(const std::vector<sim::CaptureSet>& sets, SplitCounts counts,
                               std::uint64_t seed) {
    if (counts.train < 0 || counts.val < 0 || counts.test < 0 ||
        counts.total() != static_cast<int>(sets.size()))
        throw std::invalid_argument("build_manifest: split counts (" + std::to_string(counts.train) +
                                    "," + std::to_string(counts.val) + "," +
                                    std::to_string(counts.test) + ") do not sum to " +
                                    std::to_string(sets.size()) + " scenes");
    std::vector<std::size_t> order(sets.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937_64 rng(sim::mix_seed(seed, 0x5b117));
    std::shuffle(order.begin(), order.end(), rng);

    std::map<int, Split> assignment;
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
        const int r = static_cast<int>(rank);
        const Split s = r < counts.train ? Split::train
                        : r < counts.train + counts.val ? Split::val
                                                        : Split::test;
        const int id = sets[order[rank]].scene.scene_id;
        if (!assignment.emplace(id, s).second)
            throw std::invalid_argument("build_manifest: duplicate scene_id " + std::to_string(id));
    }

    Manifest m;
    for (const auto& set : sets)
        for (const auto& cap : set.captures)
            m.entries.push_back({set.scene.scene_id, cap.level_index, cap.i_in, cap.lux,
                                 capture_path(set.scene.scene_id, cap.level_index),
                                 assignment.at(set.scene.scene_id)});
    validate(m);
    return m;
}

// Line-delimited JSON: one header line, then one record per image.

inline std::string serialize(const Manifest& m) {
    std::ostringstream out;
    out << nlohmann::json{{"format", "mill-manifest"}, {"version", m.version}}.dump() << '\n';
    for (const auto& e : m.entries) {
        nlohmann::ordered_json j;
        j["scene_id"] = e.scene_id;
        j["level_index"] = e.level_index;
        j["i_in"] = e.i_in;
        j["lux"] = e.lux;
        j["path"] = e.path;
        j["split"] = to_string(e.split);
        out << j.dump() << '\n';
    }
    return out.str();
}

inline Manifest parse_manifest(std::istream& in) {
    Manifest m;
    std::string line;
    if (!std::getline(in, line)) throw std::invalid_argument("manifest: empty input");
    const auto header = nlohmann::json::parse(line);
    if (header.value("format", "") != "mill-manifest")
        throw std::invalid_argument("manifest: missing mill-manifest header");
    m.version = header.at("version").get<int>();
    if (m.version != kManifestVersion)
        throw std::invalid_argument("manifest: unsupported version " + std::to_string(m.version));
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        m.entries.push_back({j.at("scene_id").get<int>(), j.at("level_index").get<int>(),
                             j.at("i_in").get<double>(), j.at("lux").get<double>(),
                             j.at("path").get<std::string>(),
                             parse_split(j.at("split").get<std::string>())});
    }
    validate(m);
    return m;
}

inline void save_manifest(const std::filesystem::path& path, const Manifest& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write manifest " + path.string());
    out << serialize(m);
}

inline Manifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read manifest " + path.string());
    return parse_manifest(in);
}

/// FNV-1a of the serialized manifest, as 16 hex digits.
inline std::string manifest_id(const Manifest& m) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : serialize(m)) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

/// In-memory images keyed by (scene_id, level_index).
class ImageStore {
public:
    void put(int scene_id, int level_index, ImageBuffer img) {
        images_[{scene_id, level_index}] = std::move(img);
    }

    const ImageBuffer& get(int scene_id, int level_index) const {
        const auto it = images_.find({scene_id, level_index});
        if (it == images_.end())
            throw std::out_of_range("image store: missing scene " + std::to_string(scene_id) +
                                    " level " + std::to_string(level_index));
        return it->second;
    }

    bool contains(int scene_id, int level_index) const {
        return images_.count({scene_id, level_index}) > 0;
    }

    const ImageBuffer& get(const ManifestEntry& e) const { return get(e.scene_id, e.level_index); }

    static ImageStore from_sets(const std::vector<sim::CaptureSet>& sets) {
        ImageStore s;
        for (const auto& set : sets)
            for (const auto& cap : set.captures) s.put(set.scene.scene_id, cap.level_index, cap.image);
        return s;
    }

    static ImageStore load(const Manifest& m, const std::filesystem::path& root) {
        ImageStore s;
        for (const auto& e : m.entries) s.put(e.scene_id, e.level_index, io::read_png(root / e.path));
        return s;
    }

private:
    std::map<std::pair<int, int>, ImageBuffer> images_;
};

struct TileGeometry {
    int tile_height = 0;
    int tile_width = 0;
};

/// Tile size for a rows x cols grid; edge remainders are truncated.
inline TileGeometry tile_geometry(int height, int width, int rows, int cols) {
    if (rows < 1 || cols < 1 || rows > height || cols > width)
        throw std::invalid_argument("tile: grid " + std::to_string(rows) + "x" + std::to_string(cols) +
                                    " does not fit a " + std::to_string(height) + "x" +
                                    std::to_string(width) + " image");
    return {height / rows, width / cols};
}

/// Non-overlapping tiles in row-major order.
inline std::vector<ImageBuffer> tile(const ImageBuffer& img, int rows, int cols) {
    const auto g = tile_geometry(img.height(), img.width(), rows, cols);
    std::vector<ImageBuffer> tiles;
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            ImageBuffer t(g.tile_height, g.tile_width, img.encoding());
            for (int y = 0; y < g.tile_height; ++y)
                for (int x = 0; x < g.tile_width; ++x)
                    for (int ch = 0; ch < 3; ++ch)
                        t.at(y, x, ch) = img.at(r * g.tile_height + y, c * g.tile_width + x, ch);
            tiles.push_back(std::move(t));
        }
    return tiles;
}

/// Separable bilinear resampling with half-pixel-centered coordinates (edge clamped).
inline ImageBuffer resize_bilinear(const ImageBuffer& img, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) throw std::invalid_argument("resize_bilinear: output dims must be >= 1");
    struct Tap {
        int i0, i1;
        double w1;
    };
    const auto taps = [](int in, int out) {
        std::vector<Tap> t(out);
        const double scale = static_cast<double>(in) / out;
        for (int o = 0; o < out; ++o) {
            const double src = std::clamp((o + 0.5) * scale - 0.5, 0.0, static_cast<double>(in - 1));
            const int i0 = static_cast<int>(std::floor(src));
            const int i1 = std::min(i0 + 1, in - 1);
            t[o] = {i0, i1, src - i0};
        }
        return t;
    };
    const auto ty = taps(img.height(), out_h), tx = taps(img.width(), out_w);
    ImageBuffer out(out_h, out_w, img.encoding());
    for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x)
            for (int c = 0; c < 3; ++c) {
                const auto& a = ty[y];
                const auto& b = tx[x];
                const double top = img.at(a.i0, b.i0, c) * (1 - b.w1) + img.at(a.i0, b.i1, c) * b.w1;
                const double bot = img.at(a.i1, b.i0, c) * (1 - b.w1) + img.at(a.i1, b.i1, c) * b.w1;
                out.at(y, x, c) = top * (1 - a.w1) + bot * a.w1;
            }
    return out;
}

/// Indices of a (query, positive, negative) triple plus the query's ground truth.
struct TripletSpec {
    ManifestEntry query;
    ManifestEntry positive;
    ManifestEntry negative;
    ManifestEntry gt_query;
};

struct Sample {
    ManifestEntry entry;
    ImageBuffer image;
};

struct TripletBatch {
    Sample query;
    Sample positive;
    Sample negative;
    ImageBuffer gt_query;
};

/// Draws triplets from the train split: query level uniform over 1..10,
/// positive = same scene at one of the 9 other levels, negative = another
/// train scene at the query's level.
class TripletSampler {
public:
    explicit TripletSampler(const Manifest& m, Split split = Split::train)
        : manifest_(&m), scenes_(m.scenes(split)) {
        if (scenes_.size() < 2)
            throw std::invalid_argument("sample_triplet: split '" + std::string(to_string(split)) +
                                        "' has fewer than 2 scenes");
    }

    template <class Rng>
    TripletSpec sample(Rng& rng) const {
        const auto pick = [&rng](int n) { return std::uniform_int_distribution<int>(0, n - 1)(rng); };
        const int qi = pick(static_cast<int>(scenes_.size()));
        const int q_scene = scenes_[qi];
        const int q_level = 1 + pick(sim::kLowLightLevels);
        int p_level = 1 + pick(sim::kLowLightLevels - 1);
        if (p_level >= q_level) ++p_level;
        int ni = pick(static_cast<int>(scenes_.size()) - 1);
        if (ni >= qi) ++ni;
        const int n_scene = scenes_[ni];
        return {manifest_->find(q_scene, q_level), manifest_->find(q_scene, p_level),
                manifest_->find(n_scene, q_level), manifest_->find(q_scene, sim::kGtLevel)};
    }

private:
    const Manifest* manifest_;
    std::vector<int> scenes_;
};

inline TripletSpec sample_triplet(const Manifest& m, std::uint64_t rng_seed) {
    std::mt19937_64 rng(rng_seed);
    return TripletSampler(m).sample(rng);
}

inline TripletBatch materialize(const TripletSpec& spec, const ImageStore& store) {
    return {{spec.query, store.get(spec.query)},
            {spec.positive, store.get(spec.positive)},
            {spec.negative, store.get(spec.negative)},
            store.get(spec.gt_query)};
}

}  // namespace mill::data
