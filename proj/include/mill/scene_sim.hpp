#pragma once

// Procedural multi-illumination capture simulator.
//
// A scene is a reflectance field. Each capture set renders it at eleven
// lux-equispaced illumination levels through one fixed sensor model:
// Poisson shot noise, Gaussian read noise, black level, clipping and
// bit-depth quantization, followed by sRGB encoding.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "mill/colorimetry.hpp"
#include "mill/image.hpp"

namespace mill::sim {

inline constexpr int kLowLightLevels = 10;
inline constexpr int kGtLevel = 11;  // level_index used for the ground-truth capture
inline constexpr int kCapturesPerScene = 11;
inline constexpr double kGtSaturationFraction = 0.95;
inline constexpr double kMinReflectance = 0.02;
inline constexpr double kMaxReflectance = 0.98;
inline constexpr int kBackgroundCount = 6;
inline constexpr int kMinSceneSize = 32;

/// SplitMix64 finalizer; used to derive independent sub-seeds.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

struct SceneSpec {
    int scene_id = 0;
    std::uint64_t seed = 0;
    int background_id = 0;
    ImageBuffer reflectance;  // linear albedo in [0.02, 0.98]
};

struct SensorConfig {
    double full_well_electrons = 4000.0;
    double read_noise_sigma = 4.0;  // electrons
    double black_level = 0.002;     // normalized
    int bit_depth = 12;
    double saturation_point = 1.0;

    static SensorConfig dslr() { return {}; }
    static SensorConfig smartphone() { return {1500.0, 8.0, 0.004, 10, 1.0}; }

    void validate() const {
        if (!(full_well_electrons > 0.0))
            throw std::invalid_argument("SensorConfig: full_well_electrons must be > 0");
        if (!(read_noise_sigma >= 0.0))
            throw std::invalid_argument("SensorConfig: read_noise_sigma must be >= 0");
        if (!(black_level >= 0.0))
            throw std::invalid_argument("SensorConfig: black_level must be >= 0");
        if (bit_depth < 8 || bit_depth > 16)
            throw std::invalid_argument("SensorConfig: bit_depth must be in [8, 16]");
        if (saturation_point != 1.0)
            throw std::invalid_argument("SensorConfig: saturation_point must be 1.0");
    }

    bool operator==(const SensorConfig&) const = default;
};

struct LevelCapture {
    ImageBuffer image;  // noisy, sRGB
    ImageBuffer clean;  // noise-free render through the same sensor, sRGB
    int level_index = 0;
    double lux = 0.0;
    double i_in = 0.0;

    bool is_gt() const { return level_index == kGtLevel; }
};

struct CaptureSet {
    SceneSpec scene;
    SensorConfig sensor;
    std::vector<LevelCapture> captures;  // levels 1..10 then GT
    std::vector<double> lux_levels;

    const LevelCapture& gt() const { return captures.back(); }
    const LevelCapture& level(int k) const { return captures.at(static_cast<std::size_t>(k - 1)); }
};

namespace detail {

inline double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

// Background pattern in [0,1].
class BackgroundPattern {
public:
    BackgroundPattern(int id, int height, int width, std::mt19937_64& rng)
        : id_(id), height_(height), width_(width) {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        cell_ = 6.0 + 10.0 * u(rng);
        angle_ = 3.14159265358979323846 * u(rng);
        freq_ = 0.08 + 0.25 * u(rng);
        cx_ = width * u(rng);
        cy_ = height * u(rng);
        for (double& v : lattice_) v = u(rng);
    }

    double operator()(int y, int x) const {
        switch (id_) {
            case 0: {  // checker
                const int cx = static_cast<int>(x / cell_), cy = static_cast<int>(y / cell_);
                return ((cx + cy) % 2 == 0) ? 1.0 : 0.0;
            }
            case 1: {  // oriented stripes
                const double t = x * std::cos(angle_) + y * std::sin(angle_);
                return 0.5 + 0.5 * std::sin(freq_ * t);
            }
            case 2: {  // value noise on an 8x8 lattice
                const double fx = 7.0 * x / std::max(1, width_ - 1);
                const double fy = 7.0 * y / std::max(1, height_ - 1);
                const int ix = std::min(6, static_cast<int>(fx)), iy = std::min(6, static_cast<int>(fy));
                const double tx = smoothstep(fx - ix), ty = smoothstep(fy - iy);
                const auto l = [&](int a, int b) { return lattice_[b * 8 + a]; };
                const double top = l(ix, iy) * (1 - tx) + l(ix + 1, iy) * tx;
                const double bot = l(ix, iy + 1) * (1 - tx) + l(ix + 1, iy + 1) * tx;
                return top * (1 - ty) + bot * ty;
            }
            case 3: {  // radial falloff
                const double d = std::hypot(x - cx_, y - cy_) / std::hypot(width_, height_);
                return std::clamp(1.0 - 1.5 * d, 0.0, 1.0);
            }
            case 4: {  // linear ramp
                const double t = (x * std::cos(angle_) + y * std::sin(angle_)) /
                                 (std::abs(width_ * std::cos(angle_)) + std::abs(height_ * std::sin(angle_)) + 1.0);
                return std::clamp(std::abs(t), 0.0, 1.0);
            }
            default: {  // dot grid
                const double px = std::fmod(x, cell_) - cell_ / 2, py = std::fmod(y, cell_) - cell_ / 2;
                return std::hypot(px, py) < cell_ / 4 ? 1.0 : 0.0;
            }
        }
    }

private:
    int id_, height_, width_;
    double cell_, angle_, freq_, cx_, cy_;
    std::array<double, 64> lattice_{};
};

}  // namespace detail

/// Textured background plus 2-8 colored shapes, deterministic in `seed`.
inline SceneSpec generate_scene(std::uint64_t seed, int height, int width, int scene_id = -1) {
    if (height < kMinSceneSize || width < kMinSceneSize)
        throw std::invalid_argument("generate_scene: height and width must be >= 32, got " +
                                    std::to_string(height) + "x" + std::to_string(width));
    std::mt19937_64 rng(mix_seed(seed, 0x5ce7e));
    std::uniform_real_distribution<double> u(0.0, 1.0);

    SceneSpec scene;
    scene.seed = seed;
    scene.scene_id = scene_id >= 0 ? scene_id : static_cast<int>(seed);
    scene.background_id = static_cast<int>(rng() % kBackgroundCount);
    scene.reflectance = ImageBuffer(height, width, Encoding::linear);

    std::array<double, 3> color_a{}, color_b{};
    for (int c = 0; c < 3; ++c) {
        color_a[c] = 0.15 + 0.6 * u(rng);
        color_b[c] = 0.15 + 0.6 * u(rng);
    }
    const detail::BackgroundPattern pattern(scene.background_id, height, width, rng);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const double p = pattern(y, x);
            for (int c = 0; c < 3; ++c)
                scene.reflectance.at(y, x, c) = color_a[c] * (1.0 - p) + color_b[c] * p;
        }

    const int shapes = 2 + static_cast<int>(rng() % 7);
    const double min_dim = std::min(height, width);
    for (int s = 0; s < shapes; ++s) {
        const int kind = static_cast<int>(rng() % 3);  // 0 disc, 1 box, 2 ellipse
        const double cx = width * u(rng), cy = height * u(rng);
        const double rx = min_dim * (0.08 + 0.2 * u(rng));
        const double ry = kind == 0 ? rx : min_dim * (0.08 + 0.2 * u(rng));
        const double shade = 0.3 * (u(rng) - 0.5);  // horizontal shading across the shape
        std::array<double, 3> col{};
        for (double& v : col) v = 0.05 + 0.9 * u(rng);
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) {
                const double dx = (x - cx) / rx, dy = (y - cy) / ry;
                const bool inside = kind == 1 ? (std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0)
                                              : (dx * dx + dy * dy <= 1.0);
                if (!inside) continue;
                for (int c = 0; c < 3; ++c) scene.reflectance.at(y, x, c) = col[c] * (1.0 + shade * dx);
            }
    }
    for (double& v : scene.reflectance.values()) v = std::clamp(v, kMinReflectance, kMaxReflectance);
    return scene;
}

/// Gain that places the brightest reflectance at 95% of saturation at lux_gt.
inline double gt_exposure_gain(const SceneSpec& scene) {
    const auto v = scene.reflectance.values();
    return kGtSaturationFraction / *std::max_element(v.begin(), v.end());
}

inline ImageBuffer render_radiance(const SceneSpec& scene, double lux, double lux_gt) {
    if (!(lux > 0.0)) throw std::invalid_argument("render_radiance: lux must be > 0");
    if (!(lux_gt > 0.0) || lux > lux_gt)
        throw std::invalid_argument("render_radiance: require 0 < lux <= lux_gt");
    const double scale = (lux / lux_gt) * gt_exposure_gain(scene);
    ImageBuffer out = scene.reflectance;
    for (double& v : out.values()) v *= scale;
    out.set_encoding(Encoding::linear);
    return out;
}

namespace detail {

inline void require_radiance(const ImageBuffer& radiance, const char* where) {
    require_finite(radiance, where);
    for (double v : radiance.values())
        if (v < 0.0) throw std::invalid_argument(std::string(where) + ": negative radiance");
}

inline double quantize(double v, const SensorConfig& s) {
    const double levels = std::ldexp(1.0, s.bit_depth) - 1.0;
    const double clippedv = std::clamp(v, 0.0, s.saturation_point);
    return std::round(clippedv / s.saturation_point * levels) / levels * s.saturation_point;
}

}  // namespace detail

/// Noisy sensor response in the linear domain (clipped and quantized, not encoded).
inline ImageBuffer apply_sensor_linear(const ImageBuffer& radiance, const SensorConfig& sensor,
                                       std::uint64_t noise_seed) {
    sensor.validate();
    detail::require_radiance(radiance, "apply_sensor");
    std::mt19937_64 rng(mix_seed(noise_seed, 0x5e2502));
    std::normal_distribution<double> read(0.0, 1.0);
    const double fw = sensor.full_well_electrons;
    ImageBuffer out = radiance;
    for (double& v : out.values()) {
        double electrons = 0.0;
        if (v > 0.0) electrons = static_cast<double>(std::poisson_distribution<std::int64_t>(v * fw)(rng));
        const double signal = electrons / fw + read(rng) * (sensor.read_noise_sigma / fw) + sensor.black_level;
        v = detail::quantize(signal, sensor);
    }
    out.set_encoding(Encoding::linear);
    return out;
}

inline ImageBuffer apply_sensor(const ImageBuffer& radiance, const SensorConfig& sensor,
                                std::uint64_t noise_seed) {
    return color::linear_to_srgb(apply_sensor_linear(radiance, sensor, noise_seed));
}

/// The sensor pipeline with shot and read noise removed.
inline ImageBuffer apply_sensor_clean(const ImageBuffer& radiance, const SensorConfig& sensor) {
    sensor.validate();
    detail::require_radiance(radiance, "apply_sensor_clean");
    ImageBuffer out = radiance;
    for (double& v : out.values()) v = detail::quantize(v + sensor.black_level, sensor);
    out.set_encoding(Encoding::linear);
    return color::linear_to_srgb(out);
}

/// lux_k = lux_min + (k - 1) * (lux_gt - lux_min) / 10 for k = 1..11; k = 11 is the GT.
inline std::vector<double> lux_schedule(double lux_min, double lux_gt) {
    if (!(lux_min > 0.0) || !(lux_min < lux_gt))
        throw std::invalid_argument("capture_set: require 0 < lux_min < lux_gt");
    std::vector<double> lux(kCapturesPerScene);
    const double step = (lux_gt - lux_min) / kLowLightLevels;
    for (int k = 1; k <= kCapturesPerScene; ++k) lux[k - 1] = lux_min + (k - 1) * step;
    lux.back() = lux_gt;
    return lux;
}

inline CaptureSet capture_set(const SceneSpec& scene, const SensorConfig& sensor, double lux_min,
                              double lux_gt, std::uint64_t seed) {
    sensor.validate();
    CaptureSet set;
    set.scene = scene;
    set.sensor = sensor;
    set.lux_levels = lux_schedule(lux_min, lux_gt);
    for (int k = 1; k <= kCapturesPerScene; ++k) {
        const double lux = set.lux_levels[k - 1];
        const ImageBuffer radiance = render_radiance(scene, lux, lux_gt);
        LevelCapture cap;
        cap.image = apply_sensor(radiance, sensor, mix_seed(seed, static_cast<std::uint64_t>(k)));
        cap.clean = apply_sensor_clean(radiance, sensor);
        cap.level_index = k;
        cap.lux = lux;
        cap.i_in = lux / lux_gt;
        set.captures.push_back(std::move(cap));
    }
    return set;
}

}  // namespace mill::sim
