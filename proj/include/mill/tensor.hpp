#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mill/image.hpp"

namespace mill::nn {

/// Planar C x H x W tensor.
template <class T>
struct Tensor {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<T> data;

    Tensor() = default;
    Tensor(int c, int h, int w, T fill = T(0))
        : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

    std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
    std::size_t size() const { return data.size(); }

    T& at(int c, int y, int x) { return data[c * plane() + static_cast<std::size_t>(y) * width + x]; }
    T at(int c, int y, int x) const { return data[c * plane() + static_cast<std::size_t>(y) * width + x]; }

    T* channel(int c) { return data.data() + c * plane(); }
    const T* channel(int c) const { return data.data() + c * plane(); }

    std::span<const T> channel_span(int c) const { return {channel(c), plane()}; }

    bool same_shape(const Tensor& o) const {
        return channels == o.channels && height == o.height && width == o.width;
    }

    std::string shape_string() const {
        return std::to_string(channels) + "x" + std::to_string(height) + "x" + std::to_string(width);
    }

    bool operator==(const Tensor&) const = default;
};

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* where) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(where) + ": shape mismatch " + a.shape_string() +
                                    " vs " + b.shape_string());
}

/// Channels [first, first + count) as a new tensor.
template <class T>
Tensor<T> slice_channels(const Tensor<T>& t, int first, int count) {
    Tensor<T> out(count, t.height, t.width);
    std::copy(t.channel(first), t.channel(first) + count * t.plane(), out.data.begin());
    return out;
}

template <class T>
Tensor<T> to_tensor(const ImageBuffer& img) {
    Tensor<T> t(3, img.height(), img.width());
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x)
            for (int c = 0; c < 3; ++c) t.at(c, y, x) = static_cast<T>(img.at(y, x, c));
    return t;
}

template <class T>
ImageBuffer to_image(const Tensor<T>& t, Encoding enc = Encoding::srgb) {
    if (t.channels != 3) throw std::invalid_argument("to_image: tensor must have 3 channels");
    ImageBuffer img(t.height, t.width, enc);
    for (int y = 0; y < t.height; ++y)
        for (int x = 0; x < t.width; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<double>(t.at(c, y, x));
    return img;
}

/// Window [y0, y0+h) x [x0, x0+w) of an image.
inline ImageBuffer crop(const ImageBuffer& img, int y0, int x0, int h, int w) {
    if (y0 < 0 || x0 < 0 || y0 + h > img.height() || x0 + w > img.width())
        throw std::invalid_argument("crop: window outside image");
    ImageBuffer out(h, w, img.encoding());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y0 + y, x0 + x, c);
    return out;
}

}  // namespace mill::nn
