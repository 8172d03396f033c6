// mill: command-line front end for the simulator, trainer and benchmark.
//
//   mill generate    --n-scenes 50 --seed 0 --out data
//   mill train       --manifest data/manifest.jsonl --variant combined --out run
//   mill eval        --checkpoint run/checkpoint.bin --manifest data/manifest.jsonl --out eval
//   mill blend-study --checkpoint run/checkpoint.bin --manifest data/manifest.jsonl --alphas 0.2,0.5
//   mill probe       --checkpoint run/checkpoint.bin --manifest data/manifest.jsonl
//   mill pipeline    --out runs/toy [--dry-run]
//
// Every command writes a <command>_config.json echo into its output directory;
// passing it back with --config reruns with the same options (explicit flags
// still win).

#include <cstring>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "mill/pipeline.hpp"

namespace {

using namespace mill::cli;

// The config file supplies defaults, so it must be read before the flags are bound.
std::string find_config(int argc, char** argv) {
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--config") == 0 && i + 1 < argc) return argv[i + 1];
        if (std::strncmp(argv[i], "--config=", 9) == 0) return argv[i] + 9;
    }
    return {};
}

std::string find_command(int argc, char** argv) {
    for (int i = 1; i < argc; ++i)
        if (argv[i][0] != '-') return argv[i];
    return {};
}

template <class Options>
Options initial(const std::string& config, const std::string& cmd, const std::string& name) {
    return (!config.empty() && cmd == name) ? read_config_echo<Options>(config, name) : Options{};
}

void add_train_flags(CLI::App* sub, TrainCommandOptions& t) {
    sub->add_option("--variant", t.variant, "baseline | intensity_only | scene_only | combined")->capture_default_str();
    sub->add_option("--steps", t.steps, "Optimizer steps")->capture_default_str();
    sub->add_option("--batch-size", t.batch_size, "Triplets per step")->capture_default_str();
    sub->add_option("--lr", t.learning_rate, "Base learning rate (cosine decay)")->capture_default_str();
    sub->add_option("--lr-floor", t.lr_floor, "Final learning rate")->capture_default_str();
    sub->add_option("--crop", t.crop_size, "Training crop size")->capture_default_str();
    sub->add_option("--seed", t.seed, "Training seed")->capture_default_str();
    sub->add_option("--checkpoint-every", t.checkpoint_every, "Steps between checkpoints (0: end only)")
        ->capture_default_str();
    sub->add_option("--base-channels", t.base_channels)->capture_default_str();
    sub->add_option("--latent-channels", t.latent_channels)->capture_default_str();
    sub->add_option("--depth", t.depth, "Encoder downsampling stages")->capture_default_str();
    sub->add_flag("--attention,!--no-attention", t.attention, "Channel attention at the bottleneck");
}

}  // namespace

int main(int argc, char** argv) {
    const std::string config = find_config(argc, argv);
    const std::string cmd = find_command(argc, argv);

    CLI::App app{"Multi-illumination low-light enhancement toolkit"};
    app.require_subcommand(1);

    GenerateOptions gen;
    TrainCommandOptions tr;
    EvalOptions ev;
    BlendStudyOptions bl;
    ProbeOptions pr;
    PipelineOptions pl;
    std::string unused_config;
    try {
        gen = initial<GenerateOptions>(config, cmd, "generate");
        tr = initial<TrainCommandOptions>(config, cmd, "train");
        ev = initial<EvalOptions>(config, cmd, "eval");
        bl = initial<BlendStudyOptions>(config, cmd, "blend-study");
        pr = initial<ProbeOptions>(config, cmd, "probe");
        pl = initial<PipelineOptions>(config, cmd, "pipeline");
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    const auto config_flag = [&](CLI::App* sub) {
        sub->add_option("--config", unused_config, "Options JSON (a previous run's config echo)");
    };

    auto* g = app.add_subcommand("generate", "Render a synthetic multi-illumination dataset");
    config_flag(g);
    g->add_option("--n-scenes", gen.n_scenes, "Number of scenes (>= 3)")->capture_default_str();
    g->add_option("--height", gen.height)->capture_default_str();
    g->add_option("--width", gen.width)->capture_default_str();
    g->add_option("--seed", gen.seed)->capture_default_str();
    g->add_option("--device", gen.device, "dslr | smartphone")->capture_default_str();
    g->add_option("--lux-min", gen.lux_min, "Illuminance of level 1")->capture_default_str();
    g->add_option("--lux-gt", gen.lux_gt, "Illuminance of the ground-truth capture")->capture_default_str();
    g->add_option("--out", gen.out, "Output directory")->capture_default_str();

    auto* t = app.add_subcommand("train", "Train one loss variant");
    config_flag(t);
    t->add_option("--manifest", tr.manifest, "manifest.jsonl written by generate");
    add_train_flags(t, tr);
    t->add_option("--resume", tr.resume, "Continue from a training checkpoint");
    t->add_option("--out", tr.out, "Output directory")->capture_default_str();

    auto* e = app.add_subcommand("eval", "Per-level metrics report");
    config_flag(e);
    e->add_option("--checkpoint", ev.checkpoint, "Model checkpoint (omit to score unprocessed inputs)");
    e->add_option("--manifest", ev.manifest);
    e->add_option("--split", ev.split, "train | val | test")->capture_default_str();
    e->add_option("--format", ev.format, "csv | markdown | both")->capture_default_str();
    e->add_option("--timestamp", ev.timestamp, "Value recorded in the report's timestamp column")
        ->capture_default_str();
    e->add_flag("--odd-levels", ev.odd_levels_only, "Markdown grid shows odd levels only");
    e->add_option("--out", ev.out)->capture_default_str();

    auto* b = app.add_subcommand("blend-study", "Metrics of inputs blended toward the ground truth");
    config_flag(b);
    b->add_option("--checkpoint", bl.checkpoint);
    b->add_option("--manifest", bl.manifest);
    b->add_option("--split", bl.split)->capture_default_str();
    b->add_option("--alphas", bl.alphas, "Blend ratios in [0,1]")->delimiter(',');
    b->add_option("--timestamp", bl.timestamp)->capture_default_str();
    b->add_option("--out", bl.out)->capture_default_str();

    auto* p = app.add_subcommand("probe", "Disentanglement probe of the latent split");
    config_flag(p);
    p->add_option("--checkpoint", pr.checkpoint, "Model checkpoint (required)");
    p->add_option("--manifest", pr.manifest);
    p->add_option("--split", pr.split)->capture_default_str();
    p->add_option("--out", pr.out)->capture_default_str();

    auto* pipe = app.add_subcommand("pipeline", "generate, train every variant, eval, blend-study, summary");
    config_flag(pipe);
    pipe->add_option("--n-scenes", pl.generate.n_scenes)->capture_default_str();
    int pipe_size = 0;
    auto* size_opt = pipe->add_option("--size", pipe_size, "Scene height and width");
    pipe->add_option("--device", pl.generate.device)->capture_default_str();
    pipe->add_option("--data-seed", pl.generate.seed)->capture_default_str();
    add_train_flags(pipe, pl.train);
    pipe->add_option("--variants", pl.variants)->delimiter(',');
    pipe->add_option("--split", pl.eval_split)->capture_default_str();
    pipe->add_option("--alphas", pl.alphas)->delimiter(',');
    pipe->add_flag("--dry-run", pl.dry_run, "Print the stage plan and exit");
    pipe->add_option("--out", pl.out)->capture_default_str();

    CLI11_PARSE(app, argc, argv);
    if (size_opt->count() > 0) pl.generate.height = pl.generate.width = pipe_size;

    try {
        if (*g) {
            const auto m = cmd_generate(gen);
            std::cout << "wrote " << m.entries.size() << " captures to " << gen.out << '\n';
        } else if (*t) {
            const auto s = cmd_train(tr);
            std::cout << "trained to step " << s.step << "; checkpoint " << checkpoint_path(tr.out).string() << '\n';
        } else if (*e) {
            const auto r = cmd_eval(ev);
            std::cout << "avg psnr_l " << r.value(mill::bench::kModelSeries, mill::bench::kAverageLabel, "psnr_l")
                      << " dB; report in " << ev.out << '\n';
        } else if (*b) {
            cmd_blend_study(bl);
            std::cout << "blend report in " << bl.out << '\n';
        } else if (*p) {
            const auto r = cmd_probe(pr);
            std::cout << "corr_intensity " << r.corr_intensity << "  ratio_scene " << r.ratio_scene << '\n';
        } else if (*pipe) {
            cmd_pipeline(pl);
        }
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << '\n';
        return 1;
    }
    return 0;
}
