#pragma once

// Color-space conversions and full-reference quality metrics.
//
// Conventions shared by every metric here:
//  * inputs are clipped to [0,1] before comparison;
//  * luminance is Rec. 709 luma applied to sRGB-encoded values;
//  * PSNR assumes a peak of 1.0 and is capped at kPsnrCap for identical inputs.

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "mill/image.hpp"

namespace mill::color {

inline constexpr double kPsnrCap = 100.0;
inline constexpr std::array<double, 3> kRec709{0.2126, 0.7152, 0.0722};

// sRGB (D65) -> CIE XYZ.
inline constexpr double kRgbToXyz[3][3] = {
    {0.4124564, 0.3575761, 0.1804375},
    {0.2126729, 0.7151522, 0.0721750},
    {0.0193339, 0.1191920, 0.9503041},
};

// Reference white taken as the XYZ of linear (1,1,1) so white maps to L*=100, a*=b*=0.
inline constexpr double kWhiteX = kRgbToXyz[0][0] + kRgbToXyz[0][1] + kRgbToXyz[0][2];
inline constexpr double kWhiteY = kRgbToXyz[1][0] + kRgbToXyz[1][1] + kRgbToXyz[1][2];
inline constexpr double kWhiteZ = kRgbToXyz[2][0] + kRgbToXyz[2][1] + kRgbToXyz[2][2];

inline double srgb_to_linear(double v) {
    return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4);
}

inline double linear_to_srgb(double v) {
    return v <= 0.0031308 ? 12.92 * v : 1.055 * std::pow(v, 1.0 / 2.4) - 0.055;
}

inline ImageBuffer srgb_to_linear(const ImageBuffer& img) {
    if (img.encoding() != Encoding::srgb)
        throw std::invalid_argument("srgb_to_linear: input is not srgb-encoded");
    require_finite(img, "srgb_to_linear");
    ImageBuffer out = img;
    for (double& v : out.values()) v = srgb_to_linear(v);
    out.set_encoding(Encoding::linear);
    return out;
}

/// Values are clipped to [0,1] before encoding.
inline ImageBuffer linear_to_srgb(const ImageBuffer& img) {
    if (img.encoding() != Encoding::linear)
        throw std::invalid_argument("linear_to_srgb: input is not linear");
    require_finite(img, "linear_to_srgb");
    ImageBuffer out = img;
    for (double& v : out.values()) v = linear_to_srgb(std::clamp(v, 0.0, 1.0));
    out.set_encoding(Encoding::srgb);
    return out;
}

struct Lab {
    double l = 0, a = 0, b = 0;
};

inline double lab_f(double t) {
    constexpr double delta = 6.0 / 29.0;
    return t > delta * delta * delta ? std::cbrt(t) : t / (3.0 * delta * delta) + 4.0 / 29.0;
}

/// One sRGB-encoded pixel to CIELAB (D65).
inline Lab srgb_pixel_to_lab(double r, double g, double b) {
    const double lr = srgb_to_linear(r), lg = srgb_to_linear(g), lb = srgb_to_linear(b);
    const double x = kRgbToXyz[0][0] * lr + kRgbToXyz[0][1] * lg + kRgbToXyz[0][2] * lb;
    const double y = kRgbToXyz[1][0] * lr + kRgbToXyz[1][1] * lg + kRgbToXyz[1][2] * lb;
    const double z = kRgbToXyz[2][0] * lr + kRgbToXyz[2][1] * lg + kRgbToXyz[2][2] * lb;
    const double fx = lab_f(x / kWhiteX), fy = lab_f(y / kWhiteY), fz = lab_f(z / kWhiteZ);
    return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

/// Interleaved L*, a*, b* planes with the same layout as ImageBuffer.
struct LabImage {
    int height = 0;
    int width = 0;
    std::vector<double> data;

    Lab at(int y, int x) const {
        const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
        return {data[i], data[i + 1], data[i + 2]};
    }
};

inline LabImage rgb_to_lab(const ImageBuffer& img) {
    if (img.encoding() != Encoding::srgb)
        throw std::invalid_argument("rgb_to_lab: input is not srgb-encoded");
    require_finite(img, "rgb_to_lab");
    LabImage out{img.height(), img.width(), std::vector<double>(img.size())};
    auto v = img.values();
    for (std::size_t i = 0; i < img.pixel_count(); ++i) {
        const Lab lab = srgb_pixel_to_lab(v[3 * i], v[3 * i + 1], v[3 * i + 2]);
        out.data[3 * i] = lab.l;
        out.data[3 * i + 1] = lab.a;
        out.data[3 * i + 2] = lab.b;
    }
    return out;
}

/// Mean per-pixel CIE76 color difference between two sRGB images.
inline double delta_e76(const ImageBuffer& a, const ImageBuffer& b) {
    require_same_shape(a, b, "delta_e76");
    if (a.encoding() != Encoding::srgb || b.encoding() != Encoding::srgb)
        throw std::invalid_argument("delta_e76: inputs must be srgb-encoded");
    require_finite(a, "delta_e76");
    require_finite(b, "delta_e76");
    auto va = a.values(), vb = b.values();
    double sum = 0.0;
    for (std::size_t i = 0; i < a.pixel_count(); ++i) {
        const auto c = [](double v) { return std::clamp(v, 0.0, 1.0); };
        const Lab la = srgb_pixel_to_lab(c(va[3 * i]), c(va[3 * i + 1]), c(va[3 * i + 2]));
        const Lab lb = srgb_pixel_to_lab(c(vb[3 * i]), c(vb[3 * i + 1]), c(vb[3 * i + 2]));
        const double dl = la.l - lb.l, da = la.a - lb.a, db = la.b - lb.b;
        sum += std::sqrt(dl * dl + da * da + db * db);
    }
    return sum / static_cast<double>(a.pixel_count());
}

/// Rec. 709 luma of the (unclipped) values.
inline Map2D luminance(const ImageBuffer& img) {
    Map2D m(img.height(), img.width());
    auto v = img.values();
    for (std::size_t i = 0; i < img.pixel_count(); ++i)
        m.data[i] = kRec709[0] * v[3 * i] + kRec709[1] * v[3 * i + 1] + kRec709[2] * v[3 * i + 2];
    return m;
}

enum class PsnrMode { luminance, rgb };

inline double psnr_from_mse(double mse) {
    if (mse <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

inline double psnr(const ImageBuffer& a, const ImageBuffer& b, PsnrMode mode) {
    require_same_shape(a, b, "psnr");
    require_finite(a, "psnr");
    require_finite(b, "psnr");
    const ImageBuffer ca = clipped(a), cb = clipped(b);
    double sse = 0.0;
    std::size_t n = 0;
    if (mode == PsnrMode::rgb) {
        auto va = ca.values(), vb = cb.values();
        for (std::size_t i = 0; i < va.size(); ++i) {
            const double d = va[i] - vb[i];
            sse += d * d;
        }
        n = va.size();
    } else {
        const Map2D la = luminance(ca), lb = luminance(cb);
        for (std::size_t i = 0; i < la.data.size(); ++i) {
            const double d = la.data[i] - lb.data[i];
            sse += d * d;
        }
        n = la.data.size();
    }
    return psnr_from_mse(sse / static_cast<double>(n));
}

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

inline std::array<double, kSsimWindow> ssim_kernel_1d() {
    std::array<double, kSsimWindow> k{};
    double sum = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
        const double d = i - kSsimWindow / 2;
        k[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
        sum += k[i];
    }
    for (double& v : k) v /= sum;
    return k;
}

namespace detail {

// Separable Gaussian filter over the valid region (no padding).
inline Map2D filter_valid(const Map2D& in) {
    const auto k = ssim_kernel_1d();
    const int oh = in.height - kSsimWindow + 1, ow = in.width - kSsimWindow + 1;
    Map2D rows(in.height, ow);
    for (int y = 0; y < in.height; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int i = 0; i < kSsimWindow; ++i) s += k[i] * in.at(y, x + i);
            rows.at(y, x) = s;
        }
    Map2D out(oh, ow);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int i = 0; i < kSsimWindow; ++i) s += k[i] * rows.at(y + i, x);
            out.at(y, x) = s;
        }
    return out;
}

}  // namespace detail

/// Single-scale SSIM on the luminance maps, mean over all valid 11x11 windows.
inline double ssim(const ImageBuffer& a, const ImageBuffer& b) {
    require_same_shape(a, b, "ssim");
    if (a.height() < kSsimWindow || a.width() < kSsimWindow)
        throw std::invalid_argument("ssim: image smaller than the 11x11 window");
    require_finite(a, "ssim");
    require_finite(b, "ssim");
    constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;

    const Map2D la = luminance(clipped(a)), lb = luminance(clipped(b));
    Map2D aa = la, bb = lb, ab = la;
    for (std::size_t i = 0; i < la.data.size(); ++i) {
        aa.data[i] = la.data[i] * la.data[i];
        bb.data[i] = lb.data[i] * lb.data[i];
        ab.data[i] = la.data[i] * lb.data[i];
    }
    const Map2D mu_a = detail::filter_valid(la), mu_b = detail::filter_valid(lb);
    const Map2D e_aa = detail::filter_valid(aa), e_bb = detail::filter_valid(bb),
                e_ab = detail::filter_valid(ab);

    double sum = 0.0;
    for (std::size_t i = 0; i < mu_a.data.size(); ++i) {
        const double ma = mu_a.data[i], mb = mu_b.data[i];
        const double var_a = e_aa.data[i] - ma * ma;
        const double var_b = e_bb.data[i] - mb * mb;
        const double cov = e_ab.data[i] - ma * mb;
        sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
               ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
    }
    return sum / static_cast<double>(mu_a.data.size());
}

}  // namespace mill::color
