#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mill {

enum class Encoding { srgb, linear };

inline const char* to_string(Encoding e) { return e == Encoding::srgb ? "srgb" : "linear"; }

/// Interleaved H x W x 3 image of doubles.
///
/// Pixel (y, x) channel c lives at `(y * width + x) * 3 + c`. The encoding tag
/// says whether values are display-encoded sRGB or linear radiance.
class ImageBuffer {
public:
    static constexpr int kChannels = 3;

    ImageBuffer() = default;

    ImageBuffer(int height, int width, Encoding encoding = Encoding::srgb, double fill = 0.0)
        : height_(height), width_(width), encoding_(encoding) {
        if (height < 1 || width < 1)
            throw std::invalid_argument("ImageBuffer: dimensions must be >= 1, got " +
                                        std::to_string(height) + "x" + std::to_string(width));
        data_.assign(static_cast<std::size_t>(height) * width * kChannels, fill);
    }

    int height() const { return height_; }
    int width() const { return width_; }
    std::size_t pixel_count() const { return static_cast<std::size_t>(height_) * width_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    Encoding encoding() const { return encoding_; }
    void set_encoding(Encoding e) { encoding_ = e; }

    double& at(int y, int x, int c) { return data_[index(y, x, c)]; }
    double at(int y, int x, int c) const { return data_[index(y, x, c)]; }

    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }

    bool same_shape(const ImageBuffer& other) const {
        return height_ == other.height_ && width_ == other.width_;
    }

    bool operator==(const ImageBuffer& other) const = default;

private:
    std::size_t index(int y, int x, int c) const {
        return (static_cast<std::size_t>(y) * width_ + x) * kChannels + c;
    }

    int height_ = 0;
    int width_ = 0;
    Encoding encoding_ = Encoding::srgb;
    std::vector<double> data_;
};

/// Single-channel H x W map (luminance, illumination prior, ...).
struct Map2D {
    int height = 0;
    int width = 0;
    std::vector<double> data;

    Map2D() = default;
    Map2D(int h, int w, double fill = 0.0)
        : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

    double& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
    double at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
};

inline void require_finite(const ImageBuffer& img, const char* where) {
    for (double v : img.values())
        if (!std::isfinite(v))
            throw std::invalid_argument(std::string(where) + ": non-finite pixel value");
}

inline void require_same_shape(const ImageBuffer& a, const ImageBuffer& b, const char* where) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(where) + ": dimension mismatch " +
                                    std::to_string(a.height()) + "x" + std::to_string(a.width()) +
                                    " vs " + std::to_string(b.height()) + "x" +
                                    std::to_string(b.width()));
}

inline ImageBuffer clipped(const ImageBuffer& img) {
    ImageBuffer out = img;
    for (double& v : out.values()) v = std::clamp(v, 0.0, 1.0);
    return out;
}

/// Per-pixel channel mean.
inline Map2D channel_mean(const ImageBuffer& img) {
    Map2D m(img.height(), img.width());
    auto v = img.values();
    for (std::size_t i = 0; i < img.pixel_count(); ++i)
        m.data[i] = (v[3 * i] + v[3 * i + 1] + v[3 * i + 2]) / 3.0;
    return m;
}

inline double mean_value(const ImageBuffer& img) {
    double s = 0.0;
    for (double v : img.values()) s += v;
    return s / static_cast<double>(img.size());
}

}  // namespace mill
