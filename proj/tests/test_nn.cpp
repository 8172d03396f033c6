#include <gtest/gtest.h>

#include <random>

#include "mill/model.hpp"
#include "mill/nn.hpp"
#include "oracles.hpp"

using mill::ImageBuffer;
using mill::nn::Tensor;
namespace nn = mill::nn;
namespace model = mill::model;

namespace {

Tensor<double> random_tensor(std::mt19937_64& rng, int c, int h, int w, double scale = 1.0) {
    std::uniform_real_distribution<double> u(-scale, scale);
    Tensor<double> t(c, h, w);
    for (double& v : t.data) v = u(rng);
    return t;
}

// Direct 3x3 zero-padded convolution, output pixel y samples input row stride*y.
Tensor<double> naive_conv(const Tensor<double>& in, int oc, int stride, const std::vector<double>& w,
                          const std::vector<double>& b) {
    Tensor<double> out(oc, in.height / stride, in.width / stride);
    for (int o = 0; o < oc; ++o)
        for (int y = 0; y < out.height; ++y)
            for (int x = 0; x < out.width; ++x) {
                double s = b[o];
                for (int i = 0; i < in.channels; ++i)
                    for (int ky = 0; ky < 3; ++ky)
                        for (int kx = 0; kx < 3; ++kx) {
                            const int sy = stride * y + ky - 1, sx = stride * x + kx - 1;
                            if (sy < 0 || sx < 0 || sy >= in.height || sx >= in.width) continue;
                            s += w[((o * in.channels + i) * 3 + ky) * 3 + kx] * in.at(i, sy, sx);
                        }
                out.at(o, y, x) = s;
            }
    return out;
}

std::size_t conv_params(int in, int out) { return static_cast<std::size_t>(out) * in * 9 + out; }

}  // namespace

TEST(Conv, MatchesDirectConvolution) {
    std::mt19937_64 rng(1);
    for (int stride : {1, 2}) {
        const auto in = random_tensor(rng, 3, 8, 6);
        std::vector<double> w(5 * 3 * 9), b(5);
        for (double& v : w) v = std::uniform_real_distribution<double>(-1, 1)(rng);
        for (double& v : b) v = std::uniform_real_distribution<double>(-1, 1)(rng);
        const auto got = nn::conv3x3_forward(in, 5, stride, w.data(), b.data());
        const auto want = naive_conv(in, 5, stride, w, b);
        ASSERT_TRUE(got.same_shape(want));
        for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got.data[i], want.data[i], 1e-12);
    }
}

TEST(Conv, BackwardMatchesFiniteDifferences) {
    std::mt19937_64 rng(2);
    for (int stride : {1, 2}) {
        auto in = random_tensor(rng, 2, 6, 6);
        std::vector<double> w(3 * 2 * 9), b(3);
        for (double& v : w) v = std::uniform_real_distribution<double>(-1, 1)(rng);
        const auto probe = random_tensor(rng, 3, 6 / stride, 6 / stride);
        const auto loss = [&] {
            const auto out = nn::conv3x3_forward(in, 3, stride, w.data(), b.data());
            double s = 0;
            for (std::size_t i = 0; i < out.size(); ++i) s += out.data[i] * probe.data[i];
            return s;
        };
        std::vector<double> gw(w.size(), 0), gb(3, 0);
        Tensor<double> gin;
        nn::conv3x3_backward(in, probe, stride, w.data(), gw.data(), gb.data(), &gin);
        for (std::size_t i = 0; i < w.size(); i += 5)
            EXPECT_TRUE(oracle::grad_close(gw[i], oracle::central_difference(loss, w[i], 1e-5)));
        for (std::size_t i = 0; i < 3; ++i)
            EXPECT_TRUE(oracle::grad_close(gb[i], oracle::central_difference(loss, b[i], 1e-5)));
        for (std::size_t i = 0; i < in.size(); i += 3)
            EXPECT_TRUE(oracle::grad_close(gin.data[i], oracle::central_difference(loss, in.data[i], 1e-5)));
    }
}

TEST(Upsample, BackwardIsAdjoint) {
    std::mt19937_64 rng(3);
    const auto x = random_tensor(rng, 2, 3, 4);
    const auto g = random_tensor(rng, 2, 6, 8);
    const auto up = nn::upsample2x(x);
    const auto down = nn::upsample2x_backward(g);
    double lhs = 0, rhs = 0;
    for (std::size_t i = 0; i < up.size(); ++i) lhs += up.data[i] * g.data[i];
    for (std::size_t i = 0; i < x.size(); ++i) rhs += x.data[i] * down.data[i];
    EXPECT_NEAR(lhs, rhs, 1e-12);
}

TEST(Model, ParameterCountMatchesHandSum) {
    const int b = 16, c = 32;
    const std::size_t expected = conv_params(4, b) + conv_params(b, 3)   // illumination estimator
                                 + conv_params(4, b)                       // encoder input
                                 + conv_params(b, 2 * b) + conv_params(2 * b, 2 * b)
                                 + conv_params(2 * b, 4 * b) + conv_params(4 * b, 4 * b)
                                 + conv_params(4 * b, c)                   // bottleneck
                                 + (c * 8 + 8) + (8 * c + c)               // channel attention
                                 + conv_params(c, 2 * b) + conv_params(2 * b, 2 * b)
                                 + conv_params(2 * b, b) + conv_params(b, b)
                                 + conv_params(b, 3);                      // residual head
    EXPECT_EQ(expected, 115822u);
    EXPECT_EQ(model::parameter_count({}), expected);
    EXPECT_EQ(model::Model<float>({}).parameter_count(), expected);
}

TEST(Model, ParameterCountTracksConfig) {
    model::ModelConfig no_att;
    no_att.attention = false;
    EXPECT_EQ(model::parameter_count({}) - model::parameter_count(no_att), 264u + 288u);
    EXPECT_THROW(model::parameter_count({16, 1, 2, true}), std::invalid_argument);
    EXPECT_THROW(model::parameter_count({16, 32, 0, true}), std::invalid_argument);
}

TEST(Model, ShapesAndLatentRange) {
    model::Model<double> m({8, 6, 2, true});
    m.initialize(4);
    std::mt19937_64 rng(4);
    const ImageBuffer img = oracle::random_image(rng, 16, 24);
    const auto res = m.forward(img);
    EXPECT_EQ(res.output.height(), 16);
    EXPECT_EQ(res.output.width(), 24);
    EXPECT_EQ(res.latent.z.channels, 6);
    EXPECT_EQ(res.latent.z.height, 4);
    EXPECT_EQ(res.latent.z.width, 6);
    EXPECT_EQ(res.latent.scene().channels, 5);
    for (double v : res.latent.intensity_span()) {
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, 1.0);
    }
}

TEST(Model, IndivisibleInputNamesThePadding) {
    model::Model<double> m({4, 4, 2, false});
    m.initialize(0);
    try {
        m.forward(ImageBuffer(18, 16));
        FAIL() << "expected rejection";
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("pad to 20x16"), std::string::npos) << e.what();
    }
}

TEST(Model, DegenerateWeightsReproduceInput) {
    model::Model<double> m({4, 4, 2, true});
    m.initialize(9);
    const auto& L = m.layout();
    // Zero the lightup head (exp(0) = 1) and the residual head.
    for (const auto* s : {&L.est2, &L.out}) {
        std::fill_n(m.params().begin() + s->weight, nn::conv_weight_count(s->in, s->out), 0.0);
        std::fill_n(m.params().begin() + s->bias, s->out, 0.0);
    }
    std::mt19937_64 rng(5);
    const ImageBuffer img = oracle::random_image(rng, 8, 8);
    EXPECT_EQ(m.forward(img).output, img);
}

TEST(Model, UntrainedOutputIsTheLitImage) {
    model::Model<double> m({4, 4, 1, true});
    m.initialize(3);
    std::mt19937_64 rng(6);
    const ImageBuffer img = oracle::random_image(rng, 8, 8);
    const auto res = m.forward(img);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x)
            for (int c = 0; c < 3; ++c)
                EXPECT_NEAR(res.output.at(y, x, c), img.at(y, x, c) * res.lightup_map.at(c, y, x), 1e-14);
}

TEST(Model, InitializationIsSeeded) {
    model::Model<float> a({}), b({}), c({});
    a.initialize(1);
    b.initialize(1);
    c.initialize(2);
    EXPECT_EQ(a.params(), b.params());
    EXPECT_NE(a.params(), c.params());
}

TEST(Model, GradientsMatchFiniteDifferences) {
    const model::ModelConfig cfg{4, 6, 2, true};
    model::Model<double> m(cfg);
    m.initialize(11);
    std::mt19937_64 rng(12);
    // Non-zero residual head so every branch carries gradient.
    const auto& out = m.layout().out;
    std::uniform_real_distribution<double> u(-0.2, 0.2);
    for (std::size_t i = 0; i < nn::conv_weight_count(out.in, out.out); ++i) m.params()[out.weight + i] = u(rng);
    const auto input = nn::to_tensor<double>(oracle::random_image(rng, 16, 16));
    const auto probe_out = random_tensor(rng, 3, 16, 16);
    const auto probe_lat = random_tensor(rng, 6, 4, 4);
    const auto loss = [&] {
        const auto c = m.forward_cached(input);
        double s = 0;
        for (std::size_t i = 0; i < c.output.size(); ++i) s += c.output.data[i] * probe_out.data[i];
        for (std::size_t i = 0; i < c.latent.size(); ++i) s += c.latent.data[i] * probe_lat.data[i];
        return s;
    };
    std::vector<double> grads(m.parameter_count(), 0.0);
    m.backward(m.forward_cached(input), probe_out, probe_lat, grads);

    // One probe per parameter tensor plus random extras.
    std::vector<std::size_t> picks;
    for (const auto& t : m.layout().tensors()) picks.push_back(t.offset);
    std::uniform_int_distribution<std::size_t> pick(0, m.parameter_count() - 1);
    for (int i = 0; i < 10; ++i) picks.push_back(pick(rng));
    for (std::size_t i : picks) {
        const double num = oracle::central_difference(loss, m.params()[i], 1e-6);
        EXPECT_TRUE(oracle::grad_close(grads[i], num)) << "param " << i << " analytic " << grads[i] << " numeric "
                                                       << num;
    }
}

TEST(Model, EmptyGradientsContributeNothing) {
    model::Model<double> m({4, 4, 1, false});
    m.initialize(1);
    std::mt19937_64 rng(2);
    const auto c = m.forward_cached(nn::to_tensor<double>(oracle::random_image(rng, 8, 8)));
    std::vector<double> grads(m.parameter_count(), 0.0);
    m.backward(c, Tensor<double>{}, Tensor<double>{}, grads);
    for (double g : grads) EXPECT_EQ(g, 0.0);
}
