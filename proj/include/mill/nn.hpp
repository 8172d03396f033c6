#pragma once

// Layer kernels with hand-written backward passes. Every convolution is
// 3x3 with zero padding 1; stride 1 keeps the size, stride 2 halves it.
// Weights are laid out [out][in][3][3].

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include <Eigen/Core>

#include "mill/tensor.hpp"

namespace mill::nn {

inline constexpr int kKernel = 3;
inline constexpr int kKernelArea = kKernel * kKernel;
inline constexpr double kLeakySlope = 0.2;

inline std::size_t conv_weight_count(int in, int out) {
    return static_cast<std::size_t>(in) * out * kKernelArea;
}

namespace detail {

// Output rows y with 0 <= stride*y + d < in_size.
inline void valid_range(int out_size, int in_size, int stride, int d, int& lo, int& hi) {
    lo = 0;
    while (lo < out_size && stride * lo + d < 0) ++lo;
    hi = out_size;
    while (hi > lo && stride * (hi - 1) + d >= in_size) --hi;
}

}  // namespace detail

namespace detail {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// (in_channels * 9) x (out_h * out_w) patch matrix; row ic*9 + ky*3 + kx.
template <class T>
std::vector<T> im2col(const Tensor<T>& in, int stride) {
    const int oh = in.height / stride, ow = in.width / stride;
    const std::size_t n = static_cast<std::size_t>(oh) * ow;
    std::vector<T> col(static_cast<std::size_t>(in.channels) * kKernelArea * n, T(0));
    for (int ic = 0; ic < in.channels; ++ic) {
        const T* src = in.channel(ic);
        for (int ky = 0; ky < kKernel; ++ky) {
            int y0, y1;
            valid_range(oh, in.height, stride, ky - 1, y0, y1);
            for (int kx = 0; kx < kKernel; ++kx) {
                int x0, x1;
                valid_range(ow, in.width, stride, kx - 1, x0, x1);
                T* dst = col.data() + (static_cast<std::size_t>(ic) * kKernelArea + ky * kKernel + kx) * n;
                const int dx = kx - 1;
                for (int y = y0; y < y1; ++y) {
                    const T* srow = src + static_cast<std::size_t>(stride * y + ky - 1) * in.width;
                    T* drow = dst + static_cast<std::size_t>(y) * ow;
                    if (stride == 1) {
                        for (int x = x0; x < x1; ++x) drow[x] = srow[x + dx];
                    } else {
                        for (int x = x0; x < x1; ++x) drow[x] = srow[stride * x + dx];
                    }
                }
            }
        }
    }
    return col;
}

// Adjoint of im2col: scatter-add patch gradients back onto the input grid.
template <class T>
void col2im(const std::vector<T>& col, int stride, Tensor<T>& grad_in) {
    const int oh = grad_in.height / stride, ow = grad_in.width / stride;
    const std::size_t n = static_cast<std::size_t>(oh) * ow;
    for (int ic = 0; ic < grad_in.channels; ++ic) {
        T* dst = grad_in.channel(ic);
        for (int ky = 0; ky < kKernel; ++ky) {
            int y0, y1;
            valid_range(oh, grad_in.height, stride, ky - 1, y0, y1);
            for (int kx = 0; kx < kKernel; ++kx) {
                int x0, x1;
                valid_range(ow, grad_in.width, stride, kx - 1, x0, x1);
                const T* src = col.data() + (static_cast<std::size_t>(ic) * kKernelArea + ky * kKernel + kx) * n;
                const int dx = kx - 1;
                for (int y = y0; y < y1; ++y) {
                    T* drow = dst + static_cast<std::size_t>(stride * y + ky - 1) * grad_in.width;
                    const T* srow = src + static_cast<std::size_t>(y) * ow;
                    if (stride == 1) {
                        for (int x = x0; x < x1; ++x) drow[x + dx] += srow[x];
                    } else {
                        for (int x = x0; x < x1; ++x) drow[stride * x + dx] += srow[x];
                    }
                }
            }
        }
    }
}

}  // namespace detail

template <class T>
Tensor<T> conv3x3_forward(const Tensor<T>& in, int out_channels, int stride, const T* weight,
                          const T* bias) {
    const int oh = in.height / stride, ow = in.width / stride;
    const Eigen::Index k = static_cast<Eigen::Index>(in.channels) * kKernelArea;
    const Eigen::Index n = static_cast<Eigen::Index>(oh) * ow;
    const std::vector<T> col = detail::im2col(in, stride);
    Tensor<T> out(out_channels, oh, ow);
    Eigen::Map<const detail::RowMatrix<T>> w(weight, out_channels, k);
    Eigen::Map<const detail::RowMatrix<T>> patches(col.data(), k, n);
    Eigen::Map<detail::RowMatrix<T>> result(out.data.data(), out_channels, n);
    result.noalias() = w * patches;
    for (int oc = 0; oc < out_channels; ++oc) result.row(oc).array() += bias[oc];
    return out;
}

/// Accumulates weight/bias gradients; writes the input gradient when grad_in is non-null.
template <class T>
void conv3x3_backward(const Tensor<T>& in, const Tensor<T>& grad_out, int stride, const T* weight,
                      T* grad_weight, T* grad_bias, Tensor<T>* grad_in) {
    const Eigen::Index k = static_cast<Eigen::Index>(in.channels) * kKernelArea;
    const Eigen::Index n = static_cast<Eigen::Index>(grad_out.plane());
    const int oc = grad_out.channels;
    const std::vector<T> col = detail::im2col(in, stride);
    Eigen::Map<const detail::RowMatrix<T>> patches(col.data(), k, n);
    Eigen::Map<const detail::RowMatrix<T>> g(grad_out.data.data(), oc, n);
    Eigen::Map<detail::RowMatrix<T>> gw(grad_weight, oc, k);
    gw.noalias() += g * patches.transpose();
    // Plain loop: Eigen's vectorized sum depends on buffer alignment, which
    // would make resumed runs drift from uninterrupted ones.
    for (int o = 0; o < oc; ++o) {
        const T* row = grad_out.channel(o);
        T s = 0;
        for (Eigen::Index i = 0; i < n; ++i) s += row[i];
        grad_bias[o] += s;
    }
    if (grad_in) {
        *grad_in = Tensor<T>(in.channels, in.height, in.width);
        std::vector<T> gcol(col.size());
        Eigen::Map<detail::RowMatrix<T>> gpatch(gcol.data(), k, n);
        Eigen::Map<const detail::RowMatrix<T>> w(weight, oc, k);
        gpatch.noalias() = w.transpose() * g;
        detail::col2im(gcol, stride, *grad_in);
    }
}

template <class T>
void leaky_relu_inplace(Tensor<T>& t) {
    for (T& v : t.data) v = v > T(0) ? v : T(kLeakySlope) * v;
}

/// Backward through leaky ReLU given its output (the slope keeps the sign).
template <class T>
void leaky_relu_backward_inplace(const Tensor<T>& out, Tensor<T>& grad) {
    for (std::size_t i = 0; i < grad.data.size(); ++i)
        if (!(out.data[i] > T(0))) grad.data[i] *= T(kLeakySlope);
}

template <class T>
T sigmoid(T v) {
    return T(1) / (T(1) + std::exp(-v));
}

/// Nearest-neighbour 2x upsampling.
template <class T>
Tensor<T> upsample2x(const Tensor<T>& in) {
    Tensor<T> out(in.channels, in.height * 2, in.width * 2);
    for (int c = 0; c < in.channels; ++c)
        for (int y = 0; y < out.height; ++y)
            for (int x = 0; x < out.width; ++x) out.at(c, y, x) = in.at(c, y / 2, x / 2);
    return out;
}

template <class T>
Tensor<T> upsample2x_backward(const Tensor<T>& grad_out) {
    Tensor<T> g(grad_out.channels, grad_out.height / 2, grad_out.width / 2);
    for (int c = 0; c < grad_out.channels; ++c)
        for (int y = 0; y < grad_out.height; ++y)
            for (int x = 0; x < grad_out.width; ++x) g.at(c, y / 2, x / 2) += grad_out.at(c, y, x);
    return g;
}

template <class T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
    for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

/// Stack channels of a then b.
template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    Tensor<T> out(a.channels + b.channels, a.height, a.width);
    std::copy(a.data.begin(), a.data.end(), out.data.begin());
    std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(a.size()));
    return out;
}

}  // namespace mill::nn
