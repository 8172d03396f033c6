#pragma once

// Per-level evaluation, the blending study and report serialization.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mill/colorimetry.hpp"
#include "mill/dataset.hpp"
#include "mill/image.hpp"

namespace mill::bench {

/// Maps a low-light input to an enhanced image of the same size.
using Enhancer = std::function<ImageBuffer(const ImageBuffer&)>;

inline ImageBuffer passthrough(const ImageBuffer& img) { return img; }

inline const std::vector<std::string>& metric_names() {
    static const std::vector<std::string> names{"psnr_l", "psnr_c", "ssim", "delta_e76"};
    return names;
}

inline constexpr const char* kAverageLabel = "avg";
inline constexpr const char* kModelSeries = "model";
inline constexpr const char* kUnprocessedSeries = "unprocessed";

struct MetricRow {
    std::string series;
    std::string level;
    std::string metric;
    double value = 0.0;

    bool operator==(const MetricRow&) const = default;
};

struct MetricReport {
    std::string model_id;
    std::string manifest_id;
    std::string timestamp;
    std::vector<MetricRow> rows;

    bool has(const std::string& series, const std::string& level, const std::string& metric) const {
        return std::any_of(rows.begin(), rows.end(), [&](const MetricRow& r) {
            return r.series == series && r.level == level && r.metric == metric;
        });
    }

    double value(const std::string& series, const std::string& level, const std::string& metric) const {
        for (const auto& r : rows)
            if (r.series == series && r.level == level && r.metric == metric) return r.value;
        throw std::out_of_range("report has no row (" + series + ", " + level + ", " + metric + ")");
    }

    std::vector<std::string> series() const {
        std::vector<std::string> out;
        for (const auto& r : rows)
            if (std::find(out.begin(), out.end(), r.series) == out.end()) out.push_back(r.series);
        return out;
    }

    bool operator==(const MetricReport&) const = default;
};

struct Metrics {
    double psnr_l = 0, psnr_c = 0, ssim = 0, delta_e76 = 0;

    double get(const std::string& name) const {
        if (name == "psnr_l") return psnr_l;
        if (name == "psnr_c") return psnr_c;
        if (name == "ssim") return ssim;
        if (name == "delta_e76") return delta_e76;
        throw std::invalid_argument("unknown metric " + name);
    }
};

inline Metrics compute_metrics(const ImageBuffer& img, const ImageBuffer& gt) {
    return {color::psnr(img, gt, color::PsnrMode::luminance), color::psnr(img, gt, color::PsnrMode::rgb),
            color::ssim(img, gt), color::delta_e76(img, gt)};
}

namespace detail {

struct Accumulator {
    Metrics sum;
    int count = 0;

    void add(const Metrics& m) {
        sum.psnr_l += m.psnr_l;
        sum.psnr_c += m.psnr_c;
        sum.ssim += m.ssim;
        sum.delta_e76 += m.delta_e76;
        ++count;
    }

    Metrics mean() const {
        const double n = count;
        return {sum.psnr_l / n, sum.psnr_c / n, sum.ssim / n, sum.delta_e76 / n};
    }
};

inline void append(MetricReport& r, const std::string& series, const std::string& level, const Metrics& m) {
    for (const auto& name : metric_names()) r.rows.push_back({series, level, name, m.get(name)});
}

inline const ImageBuffer& require_gt(const data::ImageStore& store, int scene_id) {
    if (!store.contains(scene_id, sim::kGtLevel))
        throw std::invalid_argument("evaluate: scene " + std::to_string(scene_id) + " has no ground truth");
    return store.get(scene_id, sim::kGtLevel);
}

}  // namespace detail

/// Metrics of enhanced inputs against their GT, per level 1..10, plus an
/// average row; the "unprocessed" series scores the raw inputs the same way.
/// Per-image metrics are averaged within each level; the average row is the
/// mean of the level rows.
inline MetricReport evaluate_per_level(const Enhancer& enhance, const data::Manifest& manifest,
                                       const data::ImageStore& store, data::Split split,
                                       const std::string& model_id = "model") {
    const auto scenes = manifest.scenes(split);
    if (scenes.empty())
        throw std::invalid_argument(std::string("evaluate_per_level: split '") + data::to_string(split) +
                                    "' is empty");
    MetricReport report;
    report.model_id = model_id;
    report.manifest_id = data::manifest_id(manifest);

    std::vector<Metrics> model_levels, raw_levels;
    for (int level = 1; level <= sim::kLowLightLevels; ++level) {
        detail::Accumulator model_acc, raw_acc;
        for (int scene : scenes) {
            const ImageBuffer& gt = detail::require_gt(store, scene);
            const ImageBuffer& input = store.get(scene, level);
            model_acc.add(compute_metrics(enhance(input), gt));
            raw_acc.add(compute_metrics(input, gt));
        }
        model_levels.push_back(model_acc.mean());
        raw_levels.push_back(raw_acc.mean());
    }
    const auto emit = [&](const char* series, const std::vector<Metrics>& levels) {
        detail::Accumulator avg;
        for (int level = 1; level <= sim::kLowLightLevels; ++level) {
            detail::append(report, series, std::to_string(level), levels[level - 1]);
            avg.add(levels[level - 1]);
        }
        detail::append(report, series, kAverageLabel, avg.mean());
    };
    emit(kModelSeries, model_levels);
    emit(kUnprocessedSeries, raw_levels);
    return report;
}

/// alpha * gt + (1 - alpha) * input.
inline ImageBuffer blend(const ImageBuffer& input, const ImageBuffer& gt, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0))
        throw std::invalid_argument("blend: alpha must be in [0,1], got " + std::to_string(alpha));
    require_same_shape(input, gt, "blend");
    ImageBuffer out = input;
    auto o = out.values();
    auto g = gt.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = alpha * g[i] + (1.0 - alpha) * o[i];
    return out;
}

inline std::string blend_label(double alpha) {
    if (alpha == 0.0) return "original";
    char buf[32];
    std::snprintf(buf, sizeof buf, "blend_%g", alpha);
    return buf;
}

/// Table-1-style study: delta_e76 and psnr_l of the model on the original
/// inputs and on inputs blended with their GT at each alpha. Series "model"
/// scores the enhanced images, series "input" the blended inputs themselves.
inline MetricReport blend_study(const Enhancer& enhance, const data::Manifest& manifest,
                                const data::ImageStore& store, data::Split split,
                                std::vector<double> alphas, const std::string& model_id = "model") {
    for (double a : alphas)
        if (!(a >= 0.0 && a <= 1.0))
            throw std::invalid_argument("blend_study: alphas must lie in [0,1]");
    const auto scenes = manifest.scenes(split);
    if (scenes.empty()) throw std::invalid_argument("blend_study: split is empty");
    if (std::find(alphas.begin(), alphas.end(), 0.0) == alphas.end()) alphas.insert(alphas.begin(), 0.0);

    MetricReport report;
    report.model_id = model_id;
    report.manifest_id = data::manifest_id(manifest);
    for (double alpha : alphas) {
        double model_de = 0, model_pl = 0, in_de = 0, in_pl = 0;
        int n = 0;
        for (int scene : scenes) {
            const ImageBuffer& gt = detail::require_gt(store, scene);
            for (int level = 1; level <= sim::kLowLightLevels; ++level) {
                const ImageBuffer input = blend(store.get(scene, level), gt, alpha);
                const ImageBuffer out = enhance(input);
                model_de += color::delta_e76(out, gt);
                model_pl += color::psnr(out, gt, color::PsnrMode::luminance);
                in_de += color::delta_e76(input, gt);
                in_pl += color::psnr(input, gt, color::PsnrMode::luminance);
                ++n;
            }
        }
        const std::string label = blend_label(alpha);
        report.rows.push_back({kModelSeries, label, "delta_e76", model_de / n});
        report.rows.push_back({kModelSeries, label, "psnr_l", model_pl / n});
        report.rows.push_back({"input", label, "delta_e76", in_de / n});
        report.rows.push_back({"input", label, "psnr_l", in_pl / n});
    }
    return report;
}

// ---------------------------------------------------------------- emission

inline constexpr const char* kCsvHeader = "model_id,manifest_id,timestamp,series,level,metric,value";

enum class ReportFormat { csv, markdown };

inline ReportFormat parse_format(const std::string& s) {
    if (s == "csv") return ReportFormat::csv;
    if (s == "markdown" || s == "md") return ReportFormat::markdown;
    throw std::invalid_argument("unknown report format '" + s + "' (expected csv or markdown)");
}

inline std::string format_value(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string to_csv(const MetricReport& r) {
    const auto check = [](const std::string& s) {
        if (s.find_first_of(",\n\r") != std::string::npos)
            throw std::invalid_argument("report field contains a comma or newline: " + s);
        return s;
    };
    std::ostringstream out;
    out << kCsvHeader << '\n';
    for (const auto& row : r.rows)
        out << check(r.model_id) << ',' << check(r.manifest_id) << ',' << check(r.timestamp) << ','
            << check(row.series) << ',' << check(row.level) << ',' << check(row.metric) << ','
            << format_value(row.value) << '\n';
    return out.str();
}

inline MetricReport parse_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kCsvHeader)
        throw std::invalid_argument("parse_csv: missing or unexpected header");
    MetricReport r;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) f.push_back(cell);
        if (line.back() == ',') f.emplace_back();
        if (f.size() != 7) throw std::invalid_argument("parse_csv: expected 7 fields in: " + line);
        if (first) {
            r.model_id = f[0];
            r.manifest_id = f[1];
            r.timestamp = f[2];
            first = false;
        }
        r.rows.push_back({f[3], f[4], f[5], std::stod(f[6])});
    }
    return r;
}

struct MarkdownOptions {
    bool odd_levels_only = false;
    int precision = 3;
};

inline std::string metric_title(const std::string& m) {
    if (m == "psnr_l") return "PSNR_L";
    if (m == "psnr_c") return "PSNR_C";
    if (m == "ssim") return "SSIM";
    if (m == "delta_e76") return "ΔE76";
    return m;
}

/// Per-level grid (one ΔE76/PSNR_L column pair per level) followed by a
/// summary table of the remaining rows with one column per metric.
inline std::string to_markdown(const MetricReport& r, const MarkdownOptions& opt = {}) {
    const auto fmt = [&](double v) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.*f", opt.precision, v);
        return std::string(buf);
    };
    const auto is_level = [](const std::string& s) {
        return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
    };
    std::ostringstream out;
    out << "# Metric report\n\n";
    out << "- model: " << r.model_id << "\n- manifest: " << r.manifest_id << "\n- timestamp: " << r.timestamp
        << "\n\n";

    std::vector<int> levels;
    for (const auto& row : r.rows)
        if (is_level(row.level)) {
            const int l = std::stoi(row.level);
            if (std::find(levels.begin(), levels.end(), l) == levels.end()) levels.push_back(l);
        }
    std::sort(levels.begin(), levels.end());
    if (opt.odd_levels_only) std::erase_if(levels, [](int l) { return l % 2 == 0; });

    const auto series = r.series();
    if (!levels.empty()) {
        out << "## Per level\n\n| Series |";
        for (int l : levels) out << " L" << l << " ΔE76 | L" << l << " PSNR_L |";
        out << "\n|---|";
        for (std::size_t i = 0; i < levels.size(); ++i) out << "---|---|";
        out << '\n';
        for (const auto& s : series) {
            if (!r.has(s, std::to_string(levels.front()), "psnr_l")) continue;
            out << "| " << s << " |";
            for (int l : levels) {
                const std::string ls = std::to_string(l);
                out << ' ' << (r.has(s, ls, "delta_e76") ? fmt(r.value(s, ls, "delta_e76")) : "-") << " | "
                    << (r.has(s, ls, "psnr_l") ? fmt(r.value(s, ls, "psnr_l")) : "-") << " |";
            }
            out << '\n';
        }
        out << '\n';
    }

    std::vector<std::pair<std::string, std::string>> summary_rows;
    std::vector<std::string> metrics;
    for (const auto& row : r.rows) {
        if (is_level(row.level)) continue;
        const auto key = std::make_pair(row.series, row.level);
        if (std::find(summary_rows.begin(), summary_rows.end(), key) == summary_rows.end())
            summary_rows.push_back(key);
        if (std::find(metrics.begin(), metrics.end(), row.metric) == metrics.end()) metrics.push_back(row.metric);
    }
    if (!summary_rows.empty()) {
        out << "## Summary\n\n| Series | Set |";
        for (const auto& m : metrics) out << ' ' << metric_title(m) << " |";
        out << "\n|---|---|";
        for (std::size_t i = 0; i < metrics.size(); ++i) out << "---|";
        out << '\n';
        for (const auto& [s, l] : summary_rows) {
            out << "| " << s << " | " << l << " |";
            for (const auto& m : metrics) out << ' ' << (r.has(s, l, m) ? fmt(r.value(s, l, m)) : "-") << " |";
            out << '\n';
        }
    }
    return out.str();
}

inline void emit_report(const MetricReport& r, ReportFormat format, const std::filesystem::path& path,
                        const MarkdownOptions& md = {}) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("emit_report: cannot write " + path.string());
    out << (format == ReportFormat::csv ? to_csv(r) : to_markdown(r, md));
    if (!out) throw std::runtime_error("emit_report: write failed for " + path.string());
}

}  // namespace mill::bench
