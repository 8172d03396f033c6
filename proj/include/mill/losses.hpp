#pragma once

// Training objective: L1 reconstruction, intensity prediction on Z_I and the
// triplet scene-content hinge on Z_S. Each loss optionally writes its
// analytic gradient; callers scale gradients as needed.

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>

#include "mill/image.hpp"
#include "mill/tensor.hpp"

namespace mill::loss {

using nn::Tensor;

inline constexpr double kDefaultMargin = 1.0;

struct LossBreakdown {
    double l_re = 0.0;
    double l_i = 0.0;
    double l_s = 0.0;
    double total = 0.0;
};

template <class T>
T sign(T v) {
    return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0));
}

/// Mean absolute difference over all values.
inline double reconstruction_loss(const ImageBuffer& output, const ImageBuffer& gt) {
    require_same_shape(output, gt, "reconstruction_loss");
    auto a = output.values(), b = gt.values();
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
    return s / static_cast<double>(a.size());
}

template <class T>
T reconstruction_loss(const Tensor<T>& output, const Tensor<T>& gt, Tensor<T>* grad_output = nullptr) {
    nn::require_same_shape(output, gt, "reconstruction_loss");
    const T inv_n = T(1) / static_cast<T>(output.size());
    if (grad_output) *grad_output = Tensor<T>(output.channels, output.height, output.width);
    T s = 0;
    for (std::size_t i = 0; i < output.size(); ++i) {
        const T d = output.data[i] - gt.data[i];
        s += std::abs(d);
        if (grad_output) grad_output->data[i] = sign(d) * inv_n;
    }
    return s * inv_n;
}

/// Mean over locations of |Z_I - i_in|, i_in replicated spatially.
template <class T>
T intensity_loss(std::span<const T> z_intensity, double i_in, std::span<T> grad = {}) {
    if (!(i_in >= 0.0 && i_in <= 1.0))
        throw std::invalid_argument("intensity_loss: i_in must be in [0,1], got " + std::to_string(i_in));
    if (z_intensity.empty()) throw std::invalid_argument("intensity_loss: empty map");
    if (!grad.empty() && grad.size() != z_intensity.size())
        throw std::invalid_argument("intensity_loss: gradient buffer size mismatch");
    const T target = static_cast<T>(i_in);
    const T inv_n = T(1) / static_cast<T>(z_intensity.size());
    T s = 0;
    for (std::size_t i = 0; i < z_intensity.size(); ++i) {
        const T d = z_intensity[i] - target;
        s += std::abs(d);
        if (!grad.empty()) grad[i] = sign(d) * inv_n;
    }
    return s * inv_n;
}

template <class T>
struct SceneGrads {
    Tensor<T> query, positive, negative;
};

template <class T>
T mean_squared_distance(const Tensor<T>& a, const Tensor<T>& b) {
    T s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const T d = a.data[i] - b.data[i];
        s += d * d;
    }
    return s / static_cast<T>(a.size());
}

/// max(d(q,p) + margin - d(q,n), 0) with d the mean squared elementwise difference.
template <class T>
T scene_content_loss(const Tensor<T>& q, const Tensor<T>& p, const Tensor<T>& n, T margin = T(kDefaultMargin),
                     SceneGrads<T>* grads = nullptr) {
    nn::require_same_shape(q, p, "scene_content_loss");
    nn::require_same_shape(q, n, "scene_content_loss");
    if (!(margin > T(0))) throw std::invalid_argument("scene_content_loss: margin must be > 0");
    if (q.size() == 0) throw std::invalid_argument("scene_content_loss: empty tensors");
    const T dp = mean_squared_distance(q, p);
    const T dn = mean_squared_distance(q, n);
    const T value = dp + margin - dn;
    if (grads) {
        grads->query = Tensor<T>(q.channels, q.height, q.width);
        grads->positive = grads->query;
        grads->negative = grads->query;
        if (value > T(0)) {
            const T k = T(2) / static_cast<T>(q.size());
            for (std::size_t i = 0; i < q.size(); ++i) {
                const T to_p = q.data[i] - p.data[i];
                const T to_n = q.data[i] - n.data[i];
                grads->query.data[i] = k * (to_p - to_n);
                grads->positive.data[i] = -k * to_p;
                grads->negative.data[i] = k * to_n;
            }
        }
    }
    return value > T(0) ? value : T(0);
}

/// Which auxiliary terms are active; the reconstruction term always is.
struct LossTerms {
    bool intensity = true;
    bool scene = true;
    double margin = kDefaultMargin;
};

/// Forward products of one triplet member.
template <class T>
struct MemberOutputs {
    const Tensor<T>* output = nullptr;  // required for the query only
    const Tensor<T>* latent = nullptr;  // C x h x w, channel 0 = Z_I
    double i_in = 0.0;
};

template <class T>
struct TripletGrads {
    Tensor<T> output_query;
    Tensor<T> latent_query, latent_positive, latent_negative;
};

/// total = l_re + l_i + l_s. l_re compares the query output with its GT,
/// l_i averages the three members' intensity losses, l_s is the hinge on Z_S.
template <class T>
LossBreakdown total_loss(const MemberOutputs<T>& q, const MemberOutputs<T>& p, const MemberOutputs<T>& n,
                         const Tensor<T>& gt_query, const LossTerms& terms, TripletGrads<T>* grads = nullptr) {
    if (!q.output || !q.latent || !p.latent || !n.latent)
        throw std::invalid_argument("total_loss: missing forward outputs");
    LossBreakdown b;
    b.l_re = static_cast<double>(
        reconstruction_loss(*q.output, gt_query, grads ? &grads->output_query : nullptr));

    if (grads) {
        const auto zero = [](const Tensor<T>& like) { return Tensor<T>(like.channels, like.height, like.width); };
        grads->latent_query = zero(*q.latent);
        grads->latent_positive = zero(*p.latent);
        grads->latent_negative = zero(*n.latent);
    }

    if (terms.intensity) {
        const MemberOutputs<T>* members[3] = {&q, &p, &n};
        Tensor<T>* gl[3] = {grads ? &grads->latent_query : nullptr, grads ? &grads->latent_positive : nullptr,
                            grads ? &grads->latent_negative : nullptr};
        double sum = 0.0;
        for (int m = 0; m < 3; ++m) {
            std::span<T> g = gl[m] ? std::span<T>(gl[m]->channel(0), gl[m]->plane()) : std::span<T>{};
            sum += static_cast<double>(intensity_loss<T>(members[m]->latent->channel_span(0), members[m]->i_in, g));
            for (T& v : g) v /= T(3);
        }
        b.l_i = sum / 3.0;
    }

    if (terms.scene) {
        const auto zs = [](const Tensor<T>* z) { return nn::slice_channels(*z, 1, z->channels - 1); };
        SceneGrads<T> sg;
        b.l_s = static_cast<double>(scene_content_loss(zs(q.latent), zs(p.latent), zs(n.latent),
                                                       static_cast<T>(terms.margin), grads ? &sg : nullptr));
        if (grads) {
            const auto put = [](Tensor<T>& dst, const Tensor<T>& src) {
                std::copy(src.data.begin(), src.data.end(), dst.data.begin() + static_cast<std::ptrdiff_t>(dst.plane()));
            };
            put(grads->latent_query, sg.query);
            put(grads->latent_positive, sg.positive);
            put(grads->latent_negative, sg.negative);
        }
    }
    b.total = b.l_re + b.l_i + b.l_s;
    return b;
}

}  // namespace mill::loss
