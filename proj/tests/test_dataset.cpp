#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "mill/dataset.hpp"
#include "mill/png_io.hpp"
#include "oracles.hpp"

using mill::ImageBuffer;
namespace data = mill::data;
namespace sim = mill::sim;

namespace {

std::vector<sim::CaptureSet> small_sets(int n, int size = 32) {
    std::vector<sim::CaptureSet> sets;
    for (int i = 0; i < n; ++i)
        sets.push_back(sim::capture_set(sim::generate_scene(1000 + i, size, size, i), {}, 10, 110, 77 + i));
    return sets;
}

}  // namespace

TEST(Splits, ProportionalToFiftyScenePartition) {
    EXPECT_EQ(data::proportional_splits(50), (data::SplitCounts{30, 12, 8}));
    EXPECT_EQ(data::proportional_splits(10), (data::SplitCounts{6, 2, 2}));
    EXPECT_EQ(data::proportional_splits(8), (data::SplitCounts{5, 2, 1}));
    EXPECT_EQ(data::proportional_splits(3), (data::SplitCounts{1, 1, 1}));
    EXPECT_THROW(data::proportional_splits(2), std::invalid_argument);
}

TEST(Manifest, ScenesNeverCrossSplits) {
    const auto sets = small_sets(10);
    const auto m = data::build_manifest(sets, data::proportional_splits(10), 4);
    std::set<int> all;
    std::size_t total = 0;
    for (auto s : {data::Split::train, data::Split::val, data::Split::test}) {
        const auto ids = m.scenes(s);
        total += ids.size();
        all.insert(ids.begin(), ids.end());
    }
    EXPECT_EQ(total, 10u);
    EXPECT_EQ(all.size(), 10u);
    EXPECT_EQ(m.scenes(data::Split::train).size(), 6u);
    EXPECT_EQ(m.entries.size(), 110u);
}

TEST(Manifest, RejectsMismatchedCounts) {
    const auto sets = small_sets(3);
    EXPECT_THROW(data::build_manifest(sets, {2, 1, 1}, 0), std::invalid_argument);
}

TEST(Manifest, ValidateCatchesLeakageAndMissingCaptures) {
    const auto m = data::build_manifest(small_sets(3), {1, 1, 1}, 0);
    auto leaked = m;
    leaked.entries[0].split = leaked.entries[0].split == data::Split::train ? data::Split::test : data::Split::train;
    EXPECT_THROW(data::validate(leaked), std::invalid_argument);
    auto short_scene = m;
    short_scene.entries.pop_back();
    EXPECT_THROW(data::validate(short_scene), std::invalid_argument);
}

TEST(Manifest, SerializationRoundTrips) {
    const auto m = data::build_manifest(small_sets(4), {2, 1, 1}, 9);
    const std::string text = data::serialize(m);
    std::istringstream in(text);
    const auto back = data::parse_manifest(in);
    EXPECT_EQ(back, m);
    EXPECT_EQ(data::serialize(back), text);
    EXPECT_EQ(data::manifest_id(back), data::manifest_id(m));
}

TEST(Manifest, SeedChangesAssignmentNotContent) {
    const auto sets = small_sets(6);
    const auto a = data::build_manifest(sets, {4, 1, 1}, 1);
    const auto b = data::build_manifest(sets, {4, 1, 1}, 1);
    EXPECT_EQ(a, b);
    bool differs = false;
    for (std::uint64_t seed = 2; seed < 10 && !differs; ++seed)
        differs = data::build_manifest(sets, {4, 1, 1}, seed).scenes(data::Split::val) != a.scenes(data::Split::val);
    EXPECT_TRUE(differs);
}

TEST(Manifest, ParseRejectsForeignHeader) {
    std::istringstream in("{\"format\":\"other\",\"version\":1}\n");
    EXPECT_THROW(data::parse_manifest(in), std::exception);
}

TEST(CapturePath, StableNames) {
    EXPECT_EQ(data::capture_path(3, 1), "scene_0003/level_01.png");
    EXPECT_EQ(data::capture_path(12, sim::kGtLevel), "scene_0012/gt.png");
}

TEST(Png, SixteenBitRoundTrip) {
    const auto dir = oracle::scratch_dir("png");
    std::mt19937_64 rng(8);
    const ImageBuffer img = oracle::random_image(rng, 5, 7);
    mill::io::write_png16(dir / "a.png", img);
    const ImageBuffer back = mill::io::read_png(dir / "a.png");
    ASSERT_TRUE(back.same_shape(img));
    for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(back.values()[i], img.values()[i], 0.5 / 65535 + 1e-12);
    EXPECT_THROW(mill::io::read_png(dir / "missing.png"), std::runtime_error);
}

TEST(Tiles, PaperSensorGridGeometry) {
    const auto g = data::tile_geometry(4020, 6036, 3, 3);
    EXPECT_EQ(g.tile_height, 1340);
    EXPECT_EQ(g.tile_width, 2012);
    EXPECT_THROW(data::tile_geometry(2, 2, 3, 3), std::invalid_argument);
}

TEST(Tiles, RowMajorAndTruncated) {
    ImageBuffer img(7, 10);
    for (int y = 0; y < 7; ++y)
        for (int x = 0; x < 10; ++x) img.at(y, x, 0) = y * 100 + x;
    const auto tiles = data::tile(img, 3, 3);
    ASSERT_EQ(tiles.size(), 9u);
    EXPECT_EQ(tiles[0].height(), 2);
    EXPECT_EQ(tiles[0].width(), 3);
    EXPECT_EQ(tiles[4].at(0, 0, 0), 203.0);
    EXPECT_EQ(tiles[8].at(1, 2, 0), 508.0);
}

TEST(Resize, HalfPixelCentersOnTwoColumnRamp) {
    ImageBuffer img(1, 2);
    for (int c = 0; c < 3; ++c) img.at(0, 1, c) = 1.0;
    const ImageBuffer out = data::resize_bilinear(img, 1, 3);
    EXPECT_DOUBLE_EQ(out.at(0, 1, 0), 0.5);
    EXPECT_DOUBLE_EQ(out.at(0, 0, 0), 0.0);  // clamped to the first center
    EXPECT_DOUBLE_EQ(out.at(0, 2, 0), 1.0);
}

TEST(Resize, IdentitySizeIsExactAndConstantsStayConstant) {
    std::mt19937_64 rng(1);
    const ImageBuffer img = oracle::random_image(rng, 6, 9);
    EXPECT_EQ(data::resize_bilinear(img, 6, 9), img);
    const ImageBuffer flat = oracle::constant_image(5, 5, 0.25, 0.5, 0.75);
    const ImageBuffer big = data::resize_bilinear(flat, 13, 8);
    for (int y = 0; y < 13; ++y)
        for (int x = 0; x < 8; ++x) EXPECT_NEAR(big.at(y, x, 1), 0.5, 1e-15);
    EXPECT_THROW(data::resize_bilinear(img, 0, 3), std::invalid_argument);
}

class TripletTest : public ::testing::Test {
protected:
    void SetUp() override {
        sets = small_sets(6);
        manifest = data::build_manifest(sets, {4, 1, 1}, 3);
    }
    std::vector<sim::CaptureSet> sets;
    data::Manifest manifest;
};

TEST_F(TripletTest, StructuralInvariants) {
    const data::TripletSampler sampler(manifest);
    std::mt19937_64 rng(5);
    const auto train = manifest.scenes(data::Split::train);
    for (int i = 0; i < 2000; ++i) {
        const auto t = sampler.sample(rng);
        EXPECT_EQ(t.positive.scene_id, t.query.scene_id);
        EXPECT_NE(t.positive.level_index, t.query.level_index);
        EXPECT_NE(t.negative.scene_id, t.query.scene_id);
        EXPECT_EQ(t.negative.level_index, t.query.level_index);
        EXPECT_EQ(t.gt_query.scene_id, t.query.scene_id);
        EXPECT_EQ(t.gt_query.level_index, sim::kGtLevel);
        EXPECT_LE(t.query.level_index, sim::kLowLightLevels);
        EXPECT_LE(t.positive.level_index, sim::kLowLightLevels);
        for (int id : {t.query.scene_id, t.negative.scene_id})
            EXPECT_NE(std::find(train.begin(), train.end(), id), train.end());
    }
}

TEST_F(TripletTest, QueryLevelsPassChiSquareUniformity) {
    const data::TripletSampler sampler(manifest);
    std::mt19937_64 rng(2024);
    const int n = 10000;
    std::vector<int> counts(10, 0);
    for (int i = 0; i < n; ++i) ++counts[sampler.sample(rng).query.level_index - 1];
    double chi2 = 0;
    for (int c : counts) chi2 += (c - n / 10.0) * (c - n / 10.0) / (n / 10.0);
    EXPECT_LT(chi2, 27.877);  // 9 dof, p = 0.001
}

TEST_F(TripletTest, SeededSamplingIsReproducible) {
    const auto a = data::sample_triplet(manifest, 12);
    const auto b = data::sample_triplet(manifest, 12);
    EXPECT_EQ(a.query, b.query);
    EXPECT_EQ(a.negative, b.negative);
}

TEST_F(TripletTest, MaterializeFetchesMatchingImages) {
    const auto store = data::ImageStore::from_sets(sets);
    const auto t = data::sample_triplet(manifest, 1);
    const auto batch = data::materialize(t, store);
    EXPECT_EQ(batch.query.image, store.get(t.query));
    EXPECT_EQ(batch.gt_query, store.get(t.query.scene_id, sim::kGtLevel));
}

TEST(Triplet, NeedsTwoTrainScenes) {
    const auto m = data::build_manifest(small_sets(3), {1, 1, 1}, 0);
    EXPECT_THROW(data::TripletSampler{m}, std::invalid_argument);
}
