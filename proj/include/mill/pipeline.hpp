#pragma once

// Command implementations behind the `mill` CLI. Each command takes a plain
// options struct (JSON round-trippable, so every run can echo its config and
// be replayed from it) and writes its outputs under `out`.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "mill/bench.hpp"
#include "mill/checkpoint.hpp"
#include "mill/dataset.hpp"
#include "mill/png_io.hpp"
#include "mill/scene_sim.hpp"
#include "mill/trainer.hpp"

namespace mill::cli {

namespace fs = std::filesystem;

inline sim::SensorConfig sensor_for_device(const std::string& device) {
    if (device == "dslr") return sim::SensorConfig::dslr();
    if (device == "smartphone") return sim::SensorConfig::smartphone();
    throw std::invalid_argument("unknown device '" + device + "' (expected dslr or smartphone)");
}

struct GenerateOptions {
    int n_scenes = 50;
    int height = 64;
    int width = 64;
    std::uint64_t seed = 0;
    std::string device = "dslr";
    double lux_min = 10.0;
    double lux_gt = 110.0;
    std::string out = "mill_data";
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GenerateOptions, n_scenes, height, width, seed, device, lux_min,
                                                lux_gt, out)

struct TrainCommandOptions {
    std::string manifest;
    std::string variant = "combined";
    int steps = 1000;
    int batch_size = 4;
    double learning_rate = 2e-4;
    double lr_floor = 1e-6;
    int crop_size = 64;
    std::uint64_t seed = 0;
    int checkpoint_every = 0;
    int base_channels = 16;
    int latent_channels = 32;
    int depth = 2;
    bool attention = true;
    std::string resume;  // checkpoint to continue from
    std::string out = "mill_train";
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainCommandOptions, manifest, variant, steps, batch_size,
                                                learning_rate, lr_floor, crop_size, seed, checkpoint_every,
                                                base_channels, latent_channels, depth, attention, resume, out)

struct EvalOptions {
    std::string checkpoint;  // empty: passthrough (unprocessed inputs)
    std::string manifest;
    std::string split = "test";
    std::string format = "both";  // csv, markdown or both
    std::string timestamp = "none";
    bool odd_levels_only = false;
    std::string out = "mill_eval";
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EvalOptions, checkpoint, manifest, split, format, timestamp,
                                                odd_levels_only, out)

struct BlendStudyOptions {
    std::string checkpoint;
    std::string manifest;
    std::string split = "test";
    std::vector<double> alphas{0.2, 0.5};
    std::string timestamp = "none";
    std::string out = "mill_blend";
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(BlendStudyOptions, checkpoint, manifest, split, alphas, timestamp,
                                                out)

struct ProbeOptions {
    std::string checkpoint;
    std::string manifest;
    std::string split = "val";
    std::string out = "mill_probe";
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ProbeOptions, checkpoint, manifest, split, out)

struct PipelineOptions {
    GenerateOptions generate;
    TrainCommandOptions train;
    std::vector<std::string> variants{"baseline", "intensity_only", "scene_only", "combined"};
    std::string eval_split = "test";
    std::vector<double> alphas{0.2, 0.5};
    bool dry_run = false;
    std::string out = "mill_run";
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PipelineOptions, generate, train, variants, eval_split, alphas,
                                                dry_run, out)

/// Writes {"command": ..., "options": ...}; `mill <command> --config <file>` replays it.
template <class Options>
void write_config_echo(const fs::path& path, const std::string& command, const Options& opt) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write config echo " + path.string());
    nlohmann::json j;
    j["command"] = command;
    j["options"] = opt;
    out << j.dump(2) << '\n';
}

template <class Options>
Options read_config_echo(const fs::path& path, const std::string& command) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read config " + path.string());
    const auto j = nlohmann::json::parse(in);
    if (j.value("command", command) != command)
        throw std::invalid_argument("config " + path.string() + " is for '" + j.at("command").get<std::string>() +
                                    "', not '" + command + "'");
    return j.contains("options") ? j.at("options").get<Options>() : j.get<Options>();
}

inline std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// ---------------------------------------------------------------- generate

inline std::vector<sim::CaptureSet> generate_sets(const GenerateOptions& o) {
    if (o.n_scenes < 3) throw std::invalid_argument("generate: n_scenes must be >= 3 to populate three splits");
    const sim::SensorConfig sensor = sensor_for_device(o.device);
    std::vector<sim::CaptureSet> sets;
    for (int i = 0; i < o.n_scenes; ++i) {
        const auto scene = sim::generate_scene(sim::mix_seed(o.seed, 2 * static_cast<std::uint64_t>(i)), o.height,
                                               o.width, i);
        sets.push_back(sim::capture_set(scene, sensor, o.lux_min, o.lux_gt,
                                        sim::mix_seed(o.seed, 2 * static_cast<std::uint64_t>(i) + 1)));
    }
    return sets;
}

inline fs::path manifest_path(const fs::path& dir) { return dir / "manifest.jsonl"; }

/// Renders n_scenes capture sets, writes 16-bit PNGs and the manifest.
inline data::Manifest cmd_generate(const GenerateOptions& o) {
    const auto sets = generate_sets(o);
    const data::Manifest m = data::build_manifest(sets, data::proportional_splits(o.n_scenes), o.seed);
    const fs::path root(o.out);
    for (const auto& set : sets)
        for (const auto& cap : set.captures) {
            const fs::path p = root / data::capture_path(set.scene.scene_id, cap.level_index);
            fs::create_directories(p.parent_path());
            io::write_png16(p, cap.image);
        }
    data::save_manifest(manifest_path(root), m);
    write_config_echo(root / "generate_config.json", "generate", o);
    return m;
}

struct LoadedData {
    data::Manifest manifest;
    data::ImageStore store;
};

inline LoadedData load_data(const fs::path& manifest_file) {
    LoadedData d;
    d.manifest = data::load_manifest(manifest_file);
    d.store = data::ImageStore::load(d.manifest, manifest_file.parent_path());
    return d;
}

// ---------------------------------------------------------------- train

inline model::ModelConfig model_config(const TrainCommandOptions& o) {
    return {o.base_channels, o.latent_channels, o.depth, o.attention};
}

inline train::TrainConfig train_config(const TrainCommandOptions& o) {
    train::TrainConfig c;
    c.variant = train::parse_variant(o.variant);
    c.steps = o.steps;
    c.batch_size = o.batch_size;
    c.learning_rate = o.learning_rate;
    c.lr_floor = o.lr_floor;
    c.crop_size = o.crop_size;
    c.seed = o.seed;
    c.checkpoint_every = o.checkpoint_every;
    return c;
}

inline fs::path checkpoint_path(const fs::path& dir) { return dir / "checkpoint.bin"; }
inline fs::path loss_log_path(const fs::path& dir) { return dir / "loss_log.jsonl"; }

inline train::TrainState cmd_train(const TrainCommandOptions& o, const LoadedData& d) {
    const model::ModelConfig mc = model_config(o);
    const train::TrainConfig tc = train_config(o);
    tc.validate(mc);  // reject before touching the output directory
    const fs::path out(o.out);
    fs::create_directories(out);
    write_config_echo(out / "train_config.json", "train", o);

    train::TrainState state = train::initial_state(mc, tc);
    std::ios::openmode mode = std::ios::binary;
    if (!o.resume.empty()) {
        state = train::load_state(o.resume);
        if (!(state.model.config() == mc))
            throw std::invalid_argument("train: --resume checkpoint has a different model config");
        state.config.steps = tc.steps;
        mode |= std::ios::app;  // the loss log is append-only across resumes
    }
    std::ofstream log(loss_log_path(out), mode);
    if (!log) throw std::runtime_error("cannot write " + loss_log_path(out).string());
    train::TrainOptions opt;
    opt.log = &log;
    opt.checkpoint_path = checkpoint_path(out);
    train::run(state, d.manifest, d.store, opt);
    return state;
}

inline train::TrainState cmd_train(const TrainCommandOptions& o) { return cmd_train(o, load_data(o.manifest)); }

inline std::vector<train::LossRecord> read_loss_log(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + p.string());
    std::vector<train::LossRecord> out;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) out.push_back(train::loss_record_from_json(nlohmann::json::parse(line)));
    return out;
}

// ---------------------------------------------------------------- eval

inline void write_report(const bench::MetricReport& r, const std::string& format, const fs::path& stem,
                         const bench::MarkdownOptions& md = {}) {
    if (format != "csv" && format != "markdown" && format != "md" && format != "both")
        throw std::invalid_argument("unknown format '" + format + "' (expected csv, markdown or both)");
    fs::create_directories(stem.parent_path());
    if (format == "csv" || format == "both") {
        auto p = stem;
        p += ".csv";
        bench::emit_report(r, bench::ReportFormat::csv, p);
    }
    if (format != "csv") {
        auto p = stem;
        p += ".md";
        bench::emit_report(r, bench::ReportFormat::markdown, p, md);
    }
}

inline bench::MetricReport cmd_eval(const EvalOptions& o, const LoadedData& d) {
    const data::Split split = data::parse_split(o.split);
    bench::MetricReport r;
    if (o.checkpoint.empty()) {
        r = bench::evaluate_per_level(bench::passthrough, d.manifest, d.store, split, "passthrough");
    } else {
        const auto m = ckpt::load_model<train::Scalar>(o.checkpoint);
        r = bench::evaluate_per_level(train::enhancer(m), d.manifest, d.store, split, fs::path(o.checkpoint).filename().string());
    }
    r.timestamp = o.timestamp;
    const fs::path out(o.out);
    fs::create_directories(out);
    write_config_echo(out / "eval_config.json", "eval", o);
    write_report(r, o.format, out / "report", {o.odd_levels_only, 3});
    return r;
}

inline bench::MetricReport cmd_eval(const EvalOptions& o) { return cmd_eval(o, load_data(o.manifest)); }

inline bench::MetricReport cmd_blend_study(const BlendStudyOptions& o, const LoadedData& d) {
    const data::Split split = data::parse_split(o.split);
    bench::MetricReport r;
    if (o.checkpoint.empty()) {
        r = bench::blend_study(bench::passthrough, d.manifest, d.store, split, o.alphas, "passthrough");
    } else {
        const auto m = ckpt::load_model<train::Scalar>(o.checkpoint);
        r = bench::blend_study(train::enhancer(m), d.manifest, d.store, split, o.alphas,
                               fs::path(o.checkpoint).filename().string());
    }
    r.timestamp = o.timestamp;
    const fs::path out(o.out);
    fs::create_directories(out);
    write_config_echo(out / "blend_study_config.json", "blend-study", o);
    write_report(r, "both", out / "blend_report");
    return r;
}

inline bench::MetricReport cmd_blend_study(const BlendStudyOptions& o) {
    return cmd_blend_study(o, load_data(o.manifest));
}

inline train::ProbeResult cmd_probe(const ProbeOptions& o, const LoadedData& d) {
    if (o.checkpoint.empty()) throw std::invalid_argument("probe: a checkpoint is required");
    const auto m = ckpt::load_model<train::Scalar>(o.checkpoint);
    const auto r = train::disentanglement_probe(m, d.manifest, d.store, data::parse_split(o.split));
    const fs::path out(o.out);
    fs::create_directories(out);
    write_config_echo(out / "probe_config.json", "probe", o);
    std::ofstream f(out / "probe.json", std::ios::binary);
    nlohmann::ordered_json j;
    j["corr_intensity"] = r.corr_intensity;
    j["ratio_scene"] = r.ratio_scene;
    j["degenerate_intensity"] = r.degenerate_intensity;
    f << j.dump(2) << '\n';
    return r;
}

inline train::ProbeResult cmd_probe(const ProbeOptions& o) { return cmd_probe(o, load_data(o.manifest)); }

// ---------------------------------------------------------------- pipeline

class StageError : public std::runtime_error {
public:
    StageError(const std::string& stage, const std::string& what)
        : std::runtime_error("pipeline stage '" + stage + "' failed: " + what), stage_(stage) {}
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

struct PipelineLayout {
    fs::path root;
    fs::path data_dir() const { return root / "data"; }
    fs::path manifest() const { return manifest_path(data_dir()); }
    fs::path run_dir(const std::string& variant) const { return root / "runs" / variant; }
    fs::path ablation_stem() const { return root / "ablation"; }
    fs::path config_echo() const { return root / "config_echo.json"; }
};

inline std::vector<std::string> pipeline_plan(const PipelineOptions& o) {
    const PipelineLayout L{o.out};
    std::vector<std::string> plan;
    plan.push_back("generate: " + std::to_string(o.generate.n_scenes) + " scenes (" + o.generate.device + ") -> " +
                   L.manifest().string());
    for (const auto& v : o.variants) {
        plan.push_back("train[" + v + "]: " + std::to_string(o.train.steps) + " steps -> " +
                       checkpoint_path(L.run_dir(v)).string());
        plan.push_back("eval[" + v + "]: split " + o.eval_split + " -> " + (L.run_dir(v) / "report.csv").string());
        plan.push_back("blend-study[" + v + "] -> " + (L.run_dir(v) / "blend_report.csv").string());
    }
    plan.push_back("summary -> " + L.ablation_stem().string() + ".md");
    return plan;
}

struct PipelineResult {
    std::vector<std::string> plan;
    bench::MetricReport ablation;  // one series per variant, level "avg"
};

/// generate -> train each variant -> eval -> blend-study -> ablation summary.
inline PipelineResult cmd_pipeline(const PipelineOptions& o, std::ostream& progress = std::cout) {
    PipelineResult result;
    result.plan = pipeline_plan(o);
    if (o.dry_run) {
        for (const auto& s : result.plan) progress << "[plan] " << s << '\n';
        return result;
    }
    for (const auto& v : o.variants) train::parse_variant(v);
    data::parse_split(o.eval_split);

    const PipelineLayout L{o.out};
    const auto stage = [&](const std::string& name, auto&& fn) {
        progress << "[stage] " << name << '\n' << std::flush;
        try {
            return fn();
        } catch (const std::exception& e) {
            throw StageError(name, e.what());
        }
    };

    fs::create_directories(L.root);
    write_config_echo(L.config_echo(), "pipeline", o);

    GenerateOptions g = o.generate;
    g.out = L.data_dir().string();
    stage("generate", [&] { return cmd_generate(g); });
    const LoadedData d = stage("load", [&] { return load_data(L.manifest()); });

    result.ablation.model_id = "ablation";
    result.ablation.manifest_id = data::manifest_id(d.manifest);
    result.ablation.timestamp = "none";
    for (const auto& v : o.variants) {
        TrainCommandOptions t = o.train;
        t.variant = v;
        t.manifest = L.manifest().string();
        t.out = L.run_dir(v).string();
        t.resume.clear();
        stage("train[" + v + "]", [&] { return cmd_train(t, d); });

        EvalOptions e;
        e.checkpoint = checkpoint_path(L.run_dir(v)).string();
        e.manifest = t.manifest;
        e.split = o.eval_split;
        e.out = t.out;
        const auto report = stage("eval[" + v + "]", [&] { return cmd_eval(e, d); });

        BlendStudyOptions b;
        b.checkpoint = e.checkpoint;
        b.manifest = t.manifest;
        b.split = o.eval_split;
        b.alphas = o.alphas;
        b.out = t.out;
        stage("blend-study[" + v + "]", [&] { return cmd_blend_study(b, d); });

        for (const auto& metric : bench::metric_names())
            result.ablation.rows.push_back(
                {v, bench::kAverageLabel, metric, report.value(bench::kModelSeries, bench::kAverageLabel, metric)});
    }
    stage("summary", [&] {
        write_report(result.ablation, "both", L.ablation_stem());
        return 0;
    });
    return result;
}

}  // namespace mill::cli
