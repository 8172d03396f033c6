#include <gtest/gtest.h>

#include <sstream>

#include "mill/pipeline.hpp"
#include "oracles.hpp"

namespace cli = mill::cli;
namespace fs = std::filesystem;

namespace {

cli::GenerateOptions tiny_generate(const fs::path& out, int n = 4) {
    cli::GenerateOptions g;
    g.n_scenes = n;
    g.height = 32;
    g.width = 32;
    g.seed = 5;
    g.out = out.string();
    return g;
}

std::vector<std::string> files_under(const fs::path& root) {
    std::vector<std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) out.push_back(fs::relative(e.path(), root).string());
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

TEST(Generate, WritesElevenPngsPerSceneAndManifest) {
    const auto dir = oracle::scratch_dir("gen");
    const auto m = cli::cmd_generate(tiny_generate(dir));
    EXPECT_EQ(m.entries.size(), 44u);
    int pngs = 0;
    for (const auto& f : files_under(dir)) pngs += f.ends_with(".png");
    EXPECT_EQ(pngs, 44);
    EXPECT_TRUE(fs::exists(dir / "manifest.jsonl"));
    EXPECT_TRUE(fs::exists(dir / "generate_config.json"));
    const auto loaded = cli::load_data(dir / "manifest.jsonl");
    EXPECT_EQ(loaded.manifest, m);
    EXPECT_TRUE(loaded.store.contains(0, mill::sim::kGtLevel));
}

TEST(Generate, FixedSeedIsByteIdentical) {
    const auto a = oracle::scratch_dir("gen_a"), b = oracle::scratch_dir("gen_b");
    cli::cmd_generate(tiny_generate(a));
    auto gb = tiny_generate(b);
    cli::cmd_generate(gb);
    const auto fa = files_under(a);
    ASSERT_EQ(fa, files_under(b));
    for (const auto& f : fa) {
        if (f == "generate_config.json") continue;  // records its own output path
        EXPECT_EQ(cli::read_file(a / f), cli::read_file(b / f)) << f;
    }
}

TEST(Generate, RejectsTooFewScenesAndUnknownDevice) {
    const auto dir = oracle::scratch_dir("gen_bad");
    EXPECT_THROW(cli::cmd_generate(tiny_generate(dir, 2)), std::invalid_argument);
    auto g = tiny_generate(dir);
    g.device = "webcam";
    EXPECT_THROW(cli::cmd_generate(g), std::invalid_argument);
}

TEST(ConfigEcho, ReplaysOptions) {
    const auto dir = oracle::scratch_dir("echo");
    cli::TrainCommandOptions t;
    t.variant = "scene_only";
    t.steps = 7;
    t.learning_rate = 3e-4;
    cli::write_config_echo(dir / "c.json", "train", t);
    const auto back = cli::read_config_echo<cli::TrainCommandOptions>(dir / "c.json", "train");
    EXPECT_EQ(nlohmann::json(back), nlohmann::json(t));
    EXPECT_THROW(cli::read_config_echo<cli::EvalOptions>(dir / "c.json", "eval"), std::invalid_argument);
}

TEST(Pipeline, DryRunTouchesNothing) {
    const auto dir = oracle::scratch_dir("dry");
    cli::PipelineOptions o;
    o.out = (dir / "run").string();
    o.dry_run = true;
    std::ostringstream log;
    const auto res = cli::cmd_pipeline(o, log);
    EXPECT_FALSE(fs::exists(dir / "run"));
    EXPECT_EQ(res.plan.size(), 2u + 3u * 4u);
    EXPECT_NE(log.str().find("train[combined]"), std::string::npos);
}

TEST(Pipeline, FailingStageIsNamed) {
    const auto dir = oracle::scratch_dir("fail");
    cli::PipelineOptions o;
    o.out = dir.string();
    o.generate = tiny_generate(dir / "ignored", 5);
    o.train.crop_size = 64;  // larger than the 32x32 scenes
    o.train.steps = 1;
    o.variants = {"baseline"};
    std::ostringstream log;
    try {
        cli::cmd_pipeline(o, log);
        FAIL() << "expected a stage failure";
    } catch (const cli::StageError& e) {
        EXPECT_EQ(e.stage(), "train[baseline]");
    }
}

TEST(Pipeline, RejectsUnknownVariantBeforeRunning) {
    const auto dir = oracle::scratch_dir("badvariant");
    cli::PipelineOptions o;
    o.out = (dir / "run").string();
    o.variants = {"combined", "everything"};
    std::ostringstream log;
    EXPECT_THROW(cli::cmd_pipeline(o, log), std::invalid_argument);
    EXPECT_FALSE(fs::exists(dir / "run"));
}

TEST(Commands, TrainEvalProbeOnTinyData) {
    const auto dir = oracle::scratch_dir("cmds");
    cli::cmd_generate(tiny_generate(dir / "data", 10));
    cli::TrainCommandOptions t;
    t.manifest = (dir / "data" / "manifest.jsonl").string();
    t.steps = 2;
    t.batch_size = 1;
    t.crop_size = 16;
    t.base_channels = 4;
    t.latent_channels = 4;
    t.depth = 1;
    t.out = (dir / "train").string();
    const auto s = cli::cmd_train(t);
    EXPECT_EQ(s.step, 2);
    EXPECT_EQ(cli::read_loss_log(dir / "train" / "loss_log.jsonl").size(), 2u);

    // Resume to 4 steps appends to the log.
    t.resume = (dir / "train" / "checkpoint.bin").string();
    t.steps = 4;
    cli::cmd_train(t);
    const auto log = cli::read_loss_log(dir / "train" / "loss_log.jsonl");
    ASSERT_EQ(log.size(), 4u);
    EXPECT_EQ(log.back().step, 3);

    cli::EvalOptions e;
    e.checkpoint = t.resume;
    e.manifest = t.manifest;
    e.out = (dir / "eval1").string();
    cli::cmd_eval(e);
    e.out = (dir / "eval2").string();
    cli::cmd_eval(e);
    EXPECT_EQ(cli::read_file(dir / "eval1" / "report.csv"), cli::read_file(dir / "eval2" / "report.csv"));
    EXPECT_EQ(cli::read_file(dir / "eval1" / "report.md"), cli::read_file(dir / "eval2" / "report.md"));

    cli::ProbeOptions p;
    p.checkpoint = t.resume;
    p.manifest = t.manifest;
    p.out = (dir / "probe").string();
    const auto r = cli::cmd_probe(p);
    EXPECT_TRUE(std::isfinite(r.ratio_scene));
    EXPECT_TRUE(fs::exists(dir / "probe" / "probe.json"));

    e.format = "pdf";
    EXPECT_THROW(cli::cmd_eval(e), std::invalid_argument);
}
