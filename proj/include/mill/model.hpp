#pragma once

// Compact one-stage Retinex-style enhancer.
//
//   prior    = channel mean of the input
//   lightup  = exp(est2(lrelu(est1([input, prior]))))       per-pixel, 3 channels
//   lit      = input * lightup
//   encoder  : [lit, prior] -> e0 -> (stride-2 down, conv) x depth -> e_depth
//   latent   : bottleneck conv of e_depth; channel 0 squashed by a sigmoid (Z_I),
//              channels 1..C-1 left raw (Z_S)
//   decoder  : channel attention on the latent, then (upsample, conv, + skip, conv) x depth
//   output   = lit + out_conv(decoder)
//
// Parameters live in one flat vector so the optimizer and checkpoints can
// treat them uniformly; `layout()` names every tensor in it.

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "mill/image.hpp"
#include "mill/nn.hpp"
#include "mill/tensor.hpp"

namespace mill::model {

using nn::Tensor;

struct ModelConfig {
    int base_channels = 16;
    int latent_channels = 32;
    int depth = 2;
    bool attention = true;

    void validate() const {
        if (base_channels < 1) throw std::invalid_argument("ModelConfig: base_channels must be >= 1");
        if (latent_channels < 2)
            throw std::invalid_argument("ModelConfig: latent_channels must be >= 2");
        if (depth < 1 || depth > 6) throw std::invalid_argument("ModelConfig: depth must be in [1, 6]");
    }

    int attention_hidden() const { return std::max(1, latent_channels / 4); }
    int channels_at(int level) const { return base_channels << level; }

    bool operator==(const ModelConfig&) const = default;
};

struct ParamTensor {
    std::string name;
    std::size_t offset = 0;
    std::vector<int> shape;

    std::size_t count() const {
        std::size_t n = 1;
        for (int s : shape) n *= static_cast<std::size_t>(s);
        return n;
    }
};

struct ConvSlot {
    int in = 0, out = 0, stride = 1;
    std::size_t weight = 0, bias = 0;
};

struct DenseSlot {
    int in = 0, out = 0;
    std::size_t weight = 0, bias = 0;  // weight is [out][in]
};

/// Parameter layout derived from a config. Independent of the scalar type.
class Layout {
public:
    explicit Layout(const ModelConfig& cfg) : cfg_(cfg) {
        cfg.validate();
        const int b = cfg.base_channels, c = cfg.latent_channels, d = cfg.depth;
        est1 = conv("estimator.conv1", 4, b, 1);
        est2 = conv("estimator.conv2", b, 3, 1);
        enc_in = conv("encoder.in", 4, b, 1);
        for (int k = 1; k <= d; ++k) {
            down.push_back(conv("encoder.down" + std::to_string(k), cfg.channels_at(k - 1), cfg.channels_at(k), 2));
            enc.push_back(conv("encoder.conv" + std::to_string(k), cfg.channels_at(k), cfg.channels_at(k), 1));
        }
        bottleneck = conv("bottleneck", cfg.channels_at(d), c, 1);
        if (cfg.attention) {
            att1 = dense("attention.fc1", c, cfg.attention_hidden());
            att2 = dense("attention.fc2", cfg.attention_hidden(), c);
        }
        // Decoder stages run from the deepest level up; index 0 is level d.
        int ch = c;
        for (int k = d; k >= 1; --k) {
            up.push_back(conv("decoder.up" + std::to_string(k), ch, cfg.channels_at(k - 1), 1));
            dec.push_back(conv("decoder.conv" + std::to_string(k), cfg.channels_at(k - 1), cfg.channels_at(k - 1), 1));
            ch = cfg.channels_at(k - 1);
        }
        out = conv("decoder.out", b, 3, 1);
    }

    const ModelConfig& config() const { return cfg_; }
    const std::vector<ParamTensor>& tensors() const { return tensors_; }
    std::size_t size() const { return size_; }

    ConvSlot est1, est2, enc_in, bottleneck, out;
    std::vector<ConvSlot> down, enc, up, dec;
    DenseSlot att1, att2;

private:
    std::size_t add(const std::string& name, std::vector<int> shape) {
        ParamTensor t{name, size_, std::move(shape)};
        size_ += t.count();
        tensors_.push_back(std::move(t));
        return tensors_.back().offset;
    }

    ConvSlot conv(const std::string& name, int in, int out_ch, int stride) {
        ConvSlot s{in, out_ch, stride, 0, 0};
        s.weight = add(name + ".weight", {out_ch, in, nn::kKernel, nn::kKernel});
        s.bias = add(name + ".bias", {out_ch});
        return s;
    }

    DenseSlot dense(const std::string& name, int in, int out_ch) {
        DenseSlot s{in, out_ch, 0, 0};
        s.weight = add(name + ".weight", {out_ch, in});
        s.bias = add(name + ".bias", {out_ch});
        return s;
    }

    ModelConfig cfg_;
    std::vector<ParamTensor> tensors_;
    std::size_t size_ = 0;
};

/// Exact number of trainable scalars.
inline std::size_t parameter_count(const ModelConfig& cfg) { return Layout(cfg).size(); }

/// Bottleneck latent; channel 0 is Z_I in [0,1], channels 1.. are Z_S.
template <class T>
struct LatentFeatures {
    Tensor<T> z;

    Tensor<T> intensity() const { return nn::slice_channels(z, 0, 1); }
    Tensor<T> scene() const { return nn::slice_channels(z, 1, z.channels - 1); }
    std::span<const T> intensity_span() const { return z.channel_span(0); }
    std::span<const T> scene_span() const { return {z.channel(1), z.plane() * (z.channels - 1)}; }
};

/// Everything the backward pass needs.
template <class T>
struct ForwardCache {
    Tensor<T> input, prior, est_in, est_hidden, lightup, lit, enc_input;
    std::vector<Tensor<T>> enc_feat;  // e0 .. e_depth
    std::vector<Tensor<T>> down_feat; // stride-2 outputs, levels 1..depth
    Tensor<T> latent;                 // after squashing channel 0
    std::vector<T> pooled, hidden, gate;
    Tensor<T> attended;
    std::vector<Tensor<T>> up_in, up_feat, merged, dec_feat;  // decoder stage tensors
    Tensor<T> output;
};

template <class T>
struct ForwardResult {
    ImageBuffer output;
    LatentFeatures<T> latent;
    Tensor<T> lightup_map;
};

inline Map2D illumination_prior(const ImageBuffer& input) { return channel_mean(input); }

template <class T>
class Model {
public:
    explicit Model(const ModelConfig& cfg) : layout_(cfg), params_(layout_.size(), T(0)) {}

    const ModelConfig& config() const { return layout_.config(); }
    const Layout& layout() const { return layout_; }
    std::vector<T>& params() { return params_; }
    const std::vector<T>& params() const { return params_; }
    std::size_t parameter_count() const { return params_.size(); }

    /// Fan-in scaled uniform weights, zero biases, zero final residual layer.
    void initialize(std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        std::fill(params_.begin(), params_.end(), T(0));
        const auto fill = [&](std::size_t offset, std::size_t count, int fan_in, double gain) {
            const double bound = gain * std::sqrt(3.0 / fan_in);
            std::uniform_real_distribution<double> u(-bound, bound);
            for (std::size_t i = 0; i < count; ++i) params_[offset + i] = static_cast<T>(u(rng));
        };
        // He-style gain for leaky ReLU layers.
        const double relu_gain = std::sqrt(2.0 / (1.0 + nn::kLeakySlope * nn::kLeakySlope));
        const auto conv = [&](const ConvSlot& s, double gain) {
            fill(s.weight, nn::conv_weight_count(s.in, s.out), s.in * nn::kKernelArea, gain);
        };
        conv(layout_.est1, relu_gain);
        conv(layout_.est2, 0.5);
        conv(layout_.enc_in, relu_gain);
        for (std::size_t k = 0; k < layout_.down.size(); ++k) {
            conv(layout_.down[k], relu_gain);
            conv(layout_.enc[k], relu_gain);
        }
        conv(layout_.bottleneck, 1.0);
        if (config().attention) {
            const auto& a1 = layout_.att1;
            const auto& a2 = layout_.att2;
            fill(a1.weight, static_cast<std::size_t>(a1.in) * a1.out, a1.in, relu_gain);
            fill(a2.weight, static_cast<std::size_t>(a2.in) * a2.out, a2.in, 1.0);
        }
        for (std::size_t k = 0; k < layout_.up.size(); ++k) {
            conv(layout_.up[k], relu_gain);
            conv(layout_.dec[k], relu_gain);
        }
        // decoder.out stays zero: the untrained model outputs the lit image.
    }

    void require_divisible(int height, int width) const {
        const int m = 1 << config().depth;
        if (height % m != 0 || width % m != 0) {
            const int ph = (height + m - 1) / m * m, pw = (width + m - 1) / m * m;
            throw std::invalid_argument("forward: input " + std::to_string(height) + "x" +
                                        std::to_string(width) + " must be divisible by " +
                                        std::to_string(m) + "; pad to " + std::to_string(ph) + "x" +
                                        std::to_string(pw));
        }
    }

    ForwardCache<T> forward_cached(const Tensor<T>& input) const {
        if (input.channels != 3) throw std::invalid_argument("forward: input must have 3 channels");
        require_divisible(input.height, input.width);
        const auto& L = layout_;
        const T* p = params_.data();
        ForwardCache<T> c;
        c.input = input;

        c.prior = Tensor<T>(1, input.height, input.width);
        for (std::size_t i = 0; i < input.plane(); ++i)
            c.prior.data[i] = (input.data[i] + input.data[i + input.plane()] + input.data[i + 2 * input.plane()]) / T(3);

        c.est_in = nn::concat_channels(input, c.prior);
        c.est_hidden = conv(c.est_in, L.est1);
        nn::leaky_relu_inplace(c.est_hidden);
        c.lightup = conv(c.est_hidden, L.est2);
        for (T& v : c.lightup.data) v = std::exp(v);
        c.lit = input;
        for (std::size_t i = 0; i < c.lit.size(); ++i) c.lit.data[i] *= c.lightup.data[i];

        c.enc_input = nn::concat_channels(c.lit, c.prior);
        c.enc_feat.push_back(conv(c.enc_input, L.enc_in));
        nn::leaky_relu_inplace(c.enc_feat.back());
        for (std::size_t k = 0; k < L.down.size(); ++k) {
            c.down_feat.push_back(conv(c.enc_feat.back(), L.down[k]));
            nn::leaky_relu_inplace(c.down_feat.back());
            c.enc_feat.push_back(conv(c.down_feat.back(), L.enc[k]));
            nn::leaky_relu_inplace(c.enc_feat.back());
        }

        c.latent = conv(c.enc_feat.back(), L.bottleneck);
        for (std::size_t i = 0; i < c.latent.plane(); ++i) c.latent.data[i] = nn::sigmoid(c.latent.data[i]);

        c.attended = c.latent;
        if (config().attention) {
            const int C = c.latent.channels;
            const auto& a1 = L.att1;
            const auto& a2 = L.att2;
            c.pooled.assign(C, T(0));
            for (int ch = 0; ch < C; ++ch) {
                T s = 0;
                for (T v : c.latent.channel_span(ch)) s += v;
                c.pooled[ch] = s / static_cast<T>(c.latent.plane());
            }
            c.hidden.assign(a1.out, T(0));
            for (int o = 0; o < a1.out; ++o) {
                T s = p[a1.bias + o];
                for (int i = 0; i < a1.in; ++i) s += p[a1.weight + static_cast<std::size_t>(o) * a1.in + i] * c.pooled[i];
                c.hidden[o] = s > T(0) ? s : T(0);
            }
            c.gate.assign(a2.out, T(0));
            for (int o = 0; o < a2.out; ++o) {
                T s = p[a2.bias + o];
                for (int i = 0; i < a2.in; ++i) s += p[a2.weight + static_cast<std::size_t>(o) * a2.in + i] * c.hidden[i];
                c.gate[o] = nn::sigmoid(s);
            }
            for (int ch = 0; ch < C; ++ch) {
                T* d = c.attended.channel(ch);
                for (std::size_t i = 0; i < c.attended.plane(); ++i) d[i] *= c.gate[ch];
            }
        }

        const Tensor<T>* cur = &c.attended;
        const int depth = config().depth;
        for (int s = 0; s < depth; ++s) {
            c.up_in.push_back(nn::upsample2x(*cur));
            c.up_feat.push_back(conv(c.up_in.back(), L.up[s]));
            nn::leaky_relu_inplace(c.up_feat.back());
            c.merged.push_back(c.up_feat.back());
            nn::add_inplace(c.merged.back(), c.enc_feat[depth - 1 - s]);
            c.dec_feat.push_back(conv(c.merged.back(), L.dec[s]));
            nn::leaky_relu_inplace(c.dec_feat.back());
            cur = &c.dec_feat.back();
        }
        c.output = conv(*cur, L.out);
        nn::add_inplace(c.output, c.lit);
        return c;
    }

    ForwardResult<T> forward(const ImageBuffer& input) const {
        require_finite(input, "forward");
        ForwardCache<T> c = forward_cached(nn::to_tensor<T>(input));
        return {nn::to_image(c.output), {std::move(c.latent)}, std::move(c.lightup)};
    }

    /// Accumulates d(loss)/d(params) into `grads` given the loss gradient with
    /// respect to the output and to the (squashed) latent. Either may be empty.
    void backward(const ForwardCache<T>& c, const Tensor<T>& grad_output, const Tensor<T>& grad_latent,
                  std::vector<T>& grads) const {
        if (grads.size() != params_.size()) grads.assign(params_.size(), T(0));
        const auto& L = layout_;
        const T* p = params_.data();
        T* g = grads.data();
        const int depth = config().depth;

        Tensor<T> g_out = grad_output.size() ? grad_output : Tensor<T>(3, c.output.height, c.output.width);
        Tensor<T> g_lit = g_out;

        Tensor<T> g_cur;
        nn::conv3x3_backward(depth > 0 ? c.dec_feat.back() : c.attended, g_out, 1, p + L.out.weight,
                             g + L.out.weight, g + L.out.bias, &g_cur);

        std::vector<Tensor<T>> g_enc(c.enc_feat.size());
        for (std::size_t k = 0; k < c.enc_feat.size(); ++k)
            g_enc[k] = Tensor<T>(c.enc_feat[k].channels, c.enc_feat[k].height, c.enc_feat[k].width);

        for (int s = depth - 1; s >= 0; --s) {
            nn::leaky_relu_backward_inplace(c.dec_feat[s], g_cur);
            Tensor<T> g_merged;
            nn::conv3x3_backward(c.merged[s], g_cur, 1, p + L.dec[s].weight, g + L.dec[s].weight,
                                 g + L.dec[s].bias, &g_merged);
            nn::add_inplace(g_enc[depth - 1 - s], g_merged);
            nn::leaky_relu_backward_inplace(c.up_feat[s], g_merged);
            Tensor<T> g_up_in;
            nn::conv3x3_backward(c.up_in[s], g_merged, 1, p + L.up[s].weight, g + L.up[s].weight,
                                 g + L.up[s].bias, &g_up_in);
            g_cur = nn::upsample2x_backward(g_up_in);
        }

        // g_cur is now d/d(attended).
        Tensor<T> g_latent = g_cur;
        if (config().attention) {
            const int C = c.latent.channels;
            const auto& a1 = L.att1;
            const auto& a2 = L.att2;
            std::vector<T> g_gate(C, T(0));
            for (int ch = 0; ch < C; ++ch) {
                const T* gl = g_cur.channel(ch);
                const T* lat = c.latent.channel(ch);
                T* dst = g_latent.channel(ch);
                T s = 0;
                for (std::size_t i = 0; i < c.latent.plane(); ++i) {
                    s += gl[i] * lat[i];
                    dst[i] = gl[i] * c.gate[ch];
                }
                g_gate[ch] = s;
            }
            std::vector<T> g_pre2(C), g_hidden(a1.out, T(0));
            for (int o = 0; o < a2.out; ++o) {
                g_pre2[o] = g_gate[o] * c.gate[o] * (T(1) - c.gate[o]);
                g[a2.bias + o] += g_pre2[o];
                for (int i = 0; i < a2.in; ++i) {
                    g[a2.weight + static_cast<std::size_t>(o) * a2.in + i] += g_pre2[o] * c.hidden[i];
                    g_hidden[i] += p[a2.weight + static_cast<std::size_t>(o) * a2.in + i] * g_pre2[o];
                }
            }
            std::vector<T> g_pooled(C, T(0));
            for (int o = 0; o < a1.out; ++o) {
                if (!(c.hidden[o] > T(0))) continue;
                g[a1.bias + o] += g_hidden[o];
                for (int i = 0; i < a1.in; ++i) {
                    g[a1.weight + static_cast<std::size_t>(o) * a1.in + i] += g_hidden[o] * c.pooled[i];
                    g_pooled[i] += p[a1.weight + static_cast<std::size_t>(o) * a1.in + i] * g_hidden[o];
                }
            }
            const T inv_area = T(1) / static_cast<T>(c.latent.plane());
            for (int ch = 0; ch < C; ++ch) {
                T* dst = g_latent.channel(ch);
                for (std::size_t i = 0; i < c.latent.plane(); ++i) dst[i] += g_pooled[ch] * inv_area;
            }
        }
        if (grad_latent.size()) nn::add_inplace(g_latent, grad_latent);
        // Through the channel-0 sigmoid.
        for (std::size_t i = 0; i < c.latent.plane(); ++i)
            g_latent.data[i] *= c.latent.data[i] * (T(1) - c.latent.data[i]);

        Tensor<T> g_feat;
        nn::conv3x3_backward(c.enc_feat.back(), g_latent, 1, p + L.bottleneck.weight, g + L.bottleneck.weight,
                             g + L.bottleneck.bias, &g_feat);
        nn::add_inplace(g_enc.back(), g_feat);

        for (int k = depth; k >= 1; --k) {
            Tensor<T>& ge = g_enc[k];
            nn::leaky_relu_backward_inplace(c.enc_feat[k], ge);
            Tensor<T> g_down;
            nn::conv3x3_backward(c.down_feat[k - 1], ge, 1, p + L.enc[k - 1].weight, g + L.enc[k - 1].weight,
                                 g + L.enc[k - 1].bias, &g_down);
            nn::leaky_relu_backward_inplace(c.down_feat[k - 1], g_down);
            Tensor<T> g_prev;
            nn::conv3x3_backward(c.enc_feat[k - 1], g_down, 2, p + L.down[k - 1].weight,
                                 g + L.down[k - 1].weight, g + L.down[k - 1].bias, &g_prev);
            nn::add_inplace(g_enc[k - 1], g_prev);
        }
        nn::leaky_relu_backward_inplace(c.enc_feat[0], g_enc[0]);
        Tensor<T> g_enc_input;
        nn::conv3x3_backward(c.enc_input, g_enc[0], 1, p + L.enc_in.weight, g + L.enc_in.weight,
                             g + L.enc_in.bias, &g_enc_input);
        // The prior channel depends only on the input; only the lit part flows on.
        for (std::size_t i = 0; i < g_lit.size(); ++i) g_lit.data[i] += g_enc_input.data[i];

        Tensor<T> g_raw(3, c.input.height, c.input.width);
        for (std::size_t i = 0; i < g_raw.size(); ++i)
            g_raw.data[i] = g_lit.data[i] * c.input.data[i] * c.lightup.data[i];
        Tensor<T> g_hidden;
        nn::conv3x3_backward(c.est_hidden, g_raw, 1, p + L.est2.weight, g + L.est2.weight, g + L.est2.bias,
                             &g_hidden);
        nn::leaky_relu_backward_inplace(c.est_hidden, g_hidden);
        nn::conv3x3_backward<T>(c.est_in, g_hidden, 1, p + L.est1.weight, g + L.est1.weight, g + L.est1.bias,
                                nullptr);
    }

private:
    Tensor<T> conv(const Tensor<T>& in, const ConvSlot& s) const {
        return nn::conv3x3_forward(in, s.out, s.stride, params_.data() + s.weight, params_.data() + s.bias);
    }

    Layout layout_;
    std::vector<T> params_;
};

}  // namespace mill::model
