#pragma once

// Training loop, validation and the latent disentanglement probe.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "mill/bench.hpp"
#include "mill/checkpoint.hpp"
#include "mill/dataset.hpp"
#include "mill/losses.hpp"
#include "mill/model.hpp"
#include "mill/optim.hpp"

namespace mill::train {

using Scalar = float;
using nn::Tensor;

enum class Variant { baseline, intensity_only, scene_only, combined };

inline const char* to_string(Variant v) {
    switch (v) {
        case Variant::baseline: return "baseline";
        case Variant::intensity_only: return "intensity_only";
        case Variant::scene_only: return "scene_only";
        default: return "combined";
    }
}

inline Variant parse_variant(const std::string& s) {
    if (s == "baseline") return Variant::baseline;
    if (s == "intensity_only") return Variant::intensity_only;
    if (s == "scene_only") return Variant::scene_only;
    if (s == "combined") return Variant::combined;
    throw std::invalid_argument("unknown variant '" + s +
                                "' (expected baseline, intensity_only, scene_only or combined)");
}

inline loss::LossTerms loss_terms(Variant v) {
    loss::LossTerms t;
    t.intensity = v == Variant::intensity_only || v == Variant::combined;
    t.scene = v == Variant::scene_only || v == Variant::combined;
    return t;
}

struct TrainConfig {
    Variant variant = Variant::combined;
    int steps = 1000;
    int batch_size = 4;  // triplets per step
    double learning_rate = 2e-4;
    double lr_floor = 1e-6;
    int crop_size = 64;
    std::uint64_t seed = 0;
    int checkpoint_every = 0;  // 0: only at the end
    double margin = loss::kDefaultMargin;

    void validate(const model::ModelConfig& mc) const {
        if (steps < 0) throw std::invalid_argument("TrainConfig: steps must be >= 0");
        if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
        if (!(learning_rate >= 0.0) || !(lr_floor >= 0.0))
            throw std::invalid_argument("TrainConfig: learning rates must be >= 0");
        if (checkpoint_every < 0) throw std::invalid_argument("TrainConfig: checkpoint_every must be >= 0");
        if (!(margin > 0.0)) throw std::invalid_argument("TrainConfig: margin must be > 0");
        const int m = 1 << mc.depth;
        if (crop_size < m || crop_size % m != 0)
            throw std::invalid_argument("TrainConfig: crop_size " + std::to_string(crop_size) +
                                        " must be a positive multiple of " + std::to_string(m));
    }
};

inline nlohmann::json to_json(const TrainConfig& c) {
    return {{"variant", to_string(c.variant)}, {"steps", c.steps},
            {"batch_size", c.batch_size},     {"learning_rate", c.learning_rate},
            {"lr_floor", c.lr_floor},         {"crop_size", c.crop_size},
            {"seed", c.seed},                 {"checkpoint_every", c.checkpoint_every},
            {"margin", c.margin}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.variant = parse_variant(j.at("variant").get<std::string>());
    c.steps = j.at("steps").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.lr_floor = j.at("lr_floor").get<double>();
    c.crop_size = j.at("crop_size").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.checkpoint_every = j.at("checkpoint_every").get<int>();
    c.margin = j.at("margin").get<double>();
    return c;
}

struct LossRecord {
    int step = 0;
    loss::LossBreakdown losses;
    double lr = 0.0;
};

inline std::string to_jsonl(const LossRecord& r) {
    nlohmann::ordered_json j;
    j["step"] = r.step;
    j["l_re"] = r.losses.l_re;
    j["l_i"] = r.losses.l_i;
    j["l_s"] = r.losses.l_s;
    j["total"] = r.losses.total;
    j["lr"] = r.lr;
    return j.dump();
}

inline LossRecord loss_record_from_json(const nlohmann::json& j) {
    LossRecord r;
    r.step = j.at("step").get<int>();
    r.losses = {j.at("l_re").get<double>(), j.at("l_i").get<double>(), j.at("l_s").get<double>(),
                j.at("total").get<double>()};
    r.lr = j.at("lr").get<double>();
    return r;
}

/// Everything needed to continue training bit-for-bit. The sampling RNG for
/// step k is derived from (seed, k), so the step counter is the RNG state.
struct TrainState {
    TrainConfig config;
    model::Model<Scalar> model;
    optim::Adam<Scalar> optimizer;
    int step = 0;
    double best_val_psnr_l = -std::numeric_limits<double>::infinity();
    int best_step = -1;

    TrainState(const model::ModelConfig& mc, const TrainConfig& tc) : config(tc), model(mc) {}
};

inline std::uint64_t init_seed(std::uint64_t seed) { return sim::mix_seed(seed, 0x1417); }

inline TrainState initial_state(const model::ModelConfig& mc, const TrainConfig& tc) {
    mc.validate();
    tc.validate(mc);
    TrainState s(mc, tc);
    s.model.initialize(init_seed(tc.seed));
    return s;
}

inline void save_state(const std::filesystem::path& path, const TrainState& s) {
    ckpt::Checkpoint ck;
    ck.config = s.model.config();
    ck.params = ckpt::widen(s.model.params());
    ck.adam_m = ckpt::widen(s.optimizer.m);
    ck.adam_v = ckpt::widen(s.optimizer.v);
    ck.meta = {{"step", s.step},
               {"adam_t", s.optimizer.t},
               {"best_val_psnr_l", std::isfinite(s.best_val_psnr_l) ? nlohmann::json(s.best_val_psnr_l) : nlohmann::json()},
               {"best_step", s.best_step},
               {"train_config", to_json(s.config)}};
    ckpt::save(path, ck);
}

inline TrainState load_state(const std::filesystem::path& path) {
    const ckpt::Checkpoint ck = ckpt::load(path);
    const auto& meta = ck.meta;
    if (!meta.contains("train_config")) throw std::runtime_error("checkpoint has no training state: " + path.string());
    TrainState s(ck.config, train_config_from_json(meta.at("train_config")));
    s.model.params() = ckpt::narrow<Scalar>(ck.params);
    s.optimizer.m = ckpt::narrow<Scalar>(ck.adam_m);
    s.optimizer.v = ckpt::narrow<Scalar>(ck.adam_v);
    s.optimizer.t = meta.at("adam_t").get<std::int64_t>();
    s.step = meta.at("step").get<int>();
    s.best_val_psnr_l = meta.at("best_val_psnr_l").is_null() ? -std::numeric_limits<double>::infinity()
                                                              : meta.at("best_val_psnr_l").get<double>();
    s.best_step = meta.at("best_step").get<int>();
    return s;
}

class NonFiniteLoss : public std::runtime_error {
public:
    NonFiniteLoss(int step, const loss::LossBreakdown& b, const std::string& snapshot)
        : std::runtime_error("non-finite loss at step " + std::to_string(step) + " (l_re=" + std::to_string(b.l_re) +
                             ", l_i=" + std::to_string(b.l_i) + ", l_s=" + std::to_string(b.l_s) + ")" +
                             (snapshot.empty() ? std::string() : "; snapshot written to " + snapshot)),
          step_(step) {}
    int step() const { return step_; }

private:
    int step_;
};

/// Runs the model on an image of any size, edge-padding to the required multiple.
template <class T>
ImageBuffer enhance(const model::Model<T>& m, const ImageBuffer& input) {
    const int mult = 1 << m.config().depth;
    const int ph = (input.height() + mult - 1) / mult * mult, pw = (input.width() + mult - 1) / mult * mult;
    if (ph == input.height() && pw == input.width()) return m.forward(input).output;
    ImageBuffer padded(ph, pw, input.encoding());
    for (int y = 0; y < ph; ++y)
        for (int x = 0; x < pw; ++x)
            for (int c = 0; c < 3; ++c)
                padded.at(y, x, c) = input.at(std::min(y, input.height() - 1), std::min(x, input.width() - 1), c);
    return nn::crop(m.forward(padded).output, 0, 0, input.height(), input.width());
}

template <class T>
bench::Enhancer enhancer(const model::Model<T>& m) {
    return [&m](const ImageBuffer& img) { return enhance(m, img); };
}

/// Per-level metrics of the model on the validation split.
inline bench::MetricReport validate(const model::Model<Scalar>& m, const data::Manifest& manifest,
                                    const data::ImageStore& store, const std::string& model_id = "model") {
    return bench::evaluate_per_level(enhancer(m), manifest, store, data::Split::val, model_id);
}

inline bench::MetricReport validate(const TrainState& s, const data::Manifest& manifest,
                                    const data::ImageStore& store) {
    return validate(s.model, manifest, store);
}

struct TrainOptions {
    std::ostream* log = nullptr;              // JSONL loss records, one per step
    std::filesystem::path checkpoint_path;    // empty: no checkpoints written
    bool validate_at_checkpoints = true;
    std::function<void(const LossRecord&)> on_step;
    int stop_at = -1;  // >= 0: return (after checkpointing) once this step is reached
};

namespace detail {

struct CropWindow {
    int y = 0, x = 0;
};

template <class Rng>
CropWindow random_window(const ImageBuffer& img, int size, Rng& rng) {
    if (size > img.height() || size > img.width())
        throw std::invalid_argument("train: crop_size " + std::to_string(size) + " exceeds image size " +
                                    std::to_string(img.height()) + "x" + std::to_string(img.width()));
    std::uniform_int_distribution<int> uy(0, img.height() - size), ux(0, img.width() - size);
    const int y = uy(rng);
    return {y, ux(rng)};
}

}  // namespace detail

/// One optimization step over `batch_size` triplets; returns the mean losses.
inline loss::LossBreakdown train_step(TrainState& s, const data::TripletSampler& sampler,
                                      const data::ImageStore& store, std::vector<Scalar>& grads) {
    const TrainConfig& cfg = s.config;
    const loss::LossTerms terms{loss_terms(cfg.variant).intensity, loss_terms(cfg.variant).scene, cfg.margin};
    const bool need_pn = terms.intensity || terms.scene;
    std::mt19937_64 rng(sim::mix_seed(cfg.seed, static_cast<std::uint64_t>(s.step) + 1));
    grads.assign(s.model.parameter_count(), Scalar(0));
    loss::LossBreakdown mean;
    const Tensor<Scalar> none;

    for (int b = 0; b < cfg.batch_size; ++b) {
        const data::TripletBatch batch = data::materialize(sampler.sample(rng), store);
        const auto wq = detail::random_window(batch.query.image, cfg.crop_size, rng);
        const auto wp = detail::random_window(batch.positive.image, cfg.crop_size, rng);
        const auto wn = detail::random_window(batch.negative.image, cfg.crop_size, rng);
        const auto cropped = [&](const ImageBuffer& img, detail::CropWindow w) {
            return nn::to_tensor<Scalar>(nn::crop(img, w.y, w.x, cfg.crop_size, cfg.crop_size));
        };
        const Tensor<Scalar> gt = cropped(batch.gt_query, wq);
        const auto cq = s.model.forward_cached(cropped(batch.query.image, wq));
        model::ForwardCache<Scalar> cp, cn;
        if (need_pn) {
            cp = s.model.forward_cached(cropped(batch.positive.image, wp));
            cn = s.model.forward_cached(cropped(batch.negative.image, wn));
        } else {
            cp.latent = cq.latent;  // placeholders; unused by the reconstruction-only objective
            cn.latent = cq.latent;
        }
        loss::TripletGrads<Scalar> g;
        const auto breakdown = loss::total_loss<Scalar>({&cq.output, &cq.latent, batch.query.entry.i_in},
                                                        {nullptr, &cp.latent, batch.positive.entry.i_in},
                                                        {nullptr, &cn.latent, batch.negative.entry.i_in}, gt, terms, &g);
        mean.l_re += breakdown.l_re;
        mean.l_i += breakdown.l_i;
        mean.l_s += breakdown.l_s;
        if (!std::isfinite(breakdown.total)) {
            mean.total = breakdown.total;
            return mean;
        }
        s.model.backward(cq, g.output_query, need_pn ? g.latent_query : none, grads);
        if (need_pn) {
            s.model.backward(cp, none, g.latent_positive, grads);
            s.model.backward(cn, none, g.latent_negative, grads);
        }
    }
    const double inv_b = 1.0 / cfg.batch_size;
    mean.l_re *= inv_b;
    mean.l_i *= inv_b;
    mean.l_s *= inv_b;
    mean.total = mean.l_re + mean.l_i + mean.l_s;
    for (Scalar& v : grads) v *= static_cast<Scalar>(inv_b);
    return mean;
}

/// Continues training `s` until s.step == s.config.steps.
inline std::vector<LossRecord> run(TrainState& s, const data::Manifest& manifest, const data::ImageStore& store,
                                   const TrainOptions& opt = {}) {
    s.config.validate(s.model.config());
    data::validate(manifest);
    const data::TripletSampler sampler(manifest);
    const bool can_validate = !manifest.scenes(data::Split::val).empty();
    std::vector<LossRecord> records;
    std::vector<Scalar> grads;

    const auto checkpoint = [&] {
        if (opt.validate_at_checkpoints && can_validate) {
            const double psnr = validate(s.model, manifest, store).value(bench::kModelSeries, bench::kAverageLabel, "psnr_l");
            if (psnr > s.best_val_psnr_l) {
                s.best_val_psnr_l = psnr;
                s.best_step = s.step;
            }
        }
        if (!opt.checkpoint_path.empty()) save_state(opt.checkpoint_path, s);
    };

    const int last = opt.stop_at >= 0 ? std::min(opt.stop_at, s.config.steps) : s.config.steps;
    while (s.step < last) {
        const double lr = optim::cosine_lr(s.config.learning_rate, std::min(s.config.lr_floor, s.config.learning_rate),
                                           s.step, s.config.steps);
        const loss::LossBreakdown b = train_step(s, sampler, store, grads);
        const LossRecord rec{s.step, b, lr};
        if (!std::isfinite(b.total)) {
            std::string snapshot;
            if (!opt.checkpoint_path.empty()) {
                auto p = opt.checkpoint_path;
                p += ".nonfinite";
                save_state(p, s);
                snapshot = p.string();
            }
            throw NonFiniteLoss(s.step, b, snapshot);
        }
        s.optimizer.step(s.model.params(), grads, lr);
        ++s.step;
        records.push_back(rec);
        if (opt.log) *opt.log << to_jsonl(rec) << '\n' << std::flush;
        if (opt.on_step) opt.on_step(rec);
        if (s.config.checkpoint_every > 0 && s.step % s.config.checkpoint_every == 0 && s.step < s.config.steps)
            checkpoint();
    }
    checkpoint();
    return records;
}

inline TrainState train(const data::Manifest& manifest, const data::ImageStore& store, const model::ModelConfig& mc,
                        const TrainConfig& tc, const TrainOptions& opt = {},
                        std::vector<LossRecord>* records = nullptr) {
    TrainState s = initial_state(mc, tc);
    auto r = run(s, manifest, store, opt);
    if (records) *records = std::move(r);
    return s;
}

// ------------------------------------------------------------ probe

struct ProbeResult {
    double corr_intensity = 0.0;
    double ratio_scene = 0.0;
    bool degenerate_intensity = false;  // Z_I had zero variance; correlation reported as 0
};

inline double pearson(const std::vector<double>& a, const std::vector<double>& b, bool* degenerate = nullptr) {
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa <= 0.0 || sbb <= 0.0) {
        if (degenerate) *degenerate = true;
        return 0.0;
    }
    if (degenerate) *degenerate = false;
    return sab / std::sqrt(saa * sbb);
}

/// Latent summary of one capture, as the probe needs it.
struct ProbeSample {
    int scene_id = 0;
    int level = 0;
    double i_in = 0.0;
    double mean_intensity = 0.0;  // spatial mean of Z_I
    Tensor<double> scene;         // Z_S
};

/// corr_intensity: Pearson correlation of spatial-mean Z_I with i_in.
/// ratio_scene: mean Z_S distance (mean squared difference) over
/// different-scene/same-level pairs divided by that over
/// same-scene/different-level pairs.
inline ProbeResult probe_from_samples(const std::vector<ProbeSample>& samples) {
    ProbeResult r;
    std::vector<double> zi, target;
    for (const auto& s : samples) {
        zi.push_back(s.mean_intensity);
        target.push_back(s.i_in);
    }
    r.corr_intensity = pearson(zi, target, &r.degenerate_intensity);
    double across = 0, within = 0;
    long n_across = 0, n_within = 0;
    for (std::size_t i = 0; i < samples.size(); ++i)
        for (std::size_t j = i + 1; j < samples.size(); ++j) {
            const auto& a = samples[i];
            const auto& b = samples[j];
            if (a.scene_id != b.scene_id && a.level == b.level) {
                across += loss::mean_squared_distance(a.scene, b.scene);
                ++n_across;
            } else if (a.scene_id == b.scene_id && a.level != b.level) {
                within += loss::mean_squared_distance(a.scene, b.scene);
                ++n_within;
            }
        }
    if (n_across == 0 || n_within == 0) throw std::invalid_argument("disentanglement_probe: no comparable pairs");
    const double mean_within = within / n_within;
    r.ratio_scene = mean_within > 0.0 ? (across / n_across) / mean_within : std::numeric_limits<double>::infinity();
    return r;
}

template <class T>
ProbeResult disentanglement_probe(const model::Model<T>& m, const data::Manifest& manifest,
                                  const data::ImageStore& store, data::Split split = data::Split::val) {
    const auto scenes = manifest.scenes(split);
    if (scenes.size() < 2) throw std::invalid_argument("disentanglement_probe: split needs at least 2 scenes");
    std::vector<ProbeSample> samples;
    for (int scene : scenes)
        for (int level = 1; level <= sim::kLowLightLevels; ++level) {
            const auto& entry = manifest.find(scene, level);
            const auto res = m.forward(store.get(entry));
            ProbeSample s;
            s.scene_id = scene;
            s.level = level;
            s.i_in = entry.i_in;
            const auto zi = res.latent.intensity_span();
            double sum = 0;
            for (T v : zi) sum += static_cast<double>(v);
            s.mean_intensity = sum / static_cast<double>(zi.size());
            const Tensor<T> zs = res.latent.scene();
            s.scene = Tensor<double>(zs.channels, zs.height, zs.width);
            for (std::size_t i = 0; i < zs.size(); ++i) s.scene.data[i] = static_cast<double>(zs.data[i]);
            samples.push_back(std::move(s));
        }
    return probe_from_samples(samples);
}

inline ProbeResult disentanglement_probe(const TrainState& s, const data::Manifest& manifest,
                                         const data::ImageStore& store) {
    return disentanglement_probe(s.model, manifest, store);
}

}  // namespace mill::train
