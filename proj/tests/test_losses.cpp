#include <gtest/gtest.h>

#include <random>

#include "mill/losses.hpp"
#include "oracles.hpp"

using mill::nn::Tensor;
namespace loss = mill::loss;

namespace {

Tensor<double> random_tensor(std::mt19937_64& rng, int c, int h, int w, double lo = -1, double hi = 1) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor<double> t(c, h, w);
    for (double& v : t.data) v = u(rng);
    return t;
}

Tensor<double> filled(int c, int h, int w, double v) { return Tensor<double>(c, h, w, v); }

}  // namespace

TEST(Reconstruction, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 25; ++trial) {
        auto out = random_tensor(rng, 3, 4, 5);
        const auto gt = random_tensor(rng, 3, 4, 5);
        Tensor<double> grad;
        loss::reconstruction_loss(out, gt, &grad);
        for (std::size_t i = 0; i < out.size(); ++i) {
            const double num = oracle::central_difference([&] { return loss::reconstruction_loss(out, gt); },
                                                          out.data[i], 1e-7);
            EXPECT_TRUE(oracle::grad_close(grad.data[i], num)) << trial << ":" << i;
        }
    }
}

TEST(Reconstruction, ImageVersionIsMeanAbsoluteError) {
    const auto a = oracle::constant_image(2, 2, 0.5, 0.5, 0.5);
    const auto b = oracle::constant_image(2, 2, 0.25, 0.5, 1.0);
    EXPECT_DOUBLE_EQ(loss::reconstruction_loss(a, b), (0.25 + 0 + 0.5) / 3);
}

TEST(Intensity, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0, 1);
    for (int trial = 0; trial < 25; ++trial) {
        auto z = random_tensor(rng, 1, 3, 4, 0, 1);
        const double i_in = u(rng);
        std::vector<double> grad(z.size());
        loss::intensity_loss<double>(z.data, i_in, grad);
        for (std::size_t i = 0; i < z.size(); ++i) {
            const double num = oracle::central_difference(
                [&] { return loss::intensity_loss<double>(z.data, i_in); }, z.data[i], 1e-7);
            EXPECT_TRUE(oracle::grad_close(grad[i], num));
        }
    }
}

TEST(Intensity, ValueIsMeanAbsoluteDeviationFromTarget) {
    const std::vector<double> z{0.1, 0.5, 0.9, 0.3};
    EXPECT_DOUBLE_EQ(loss::intensity_loss<double>(z, 0.5), (0.4 + 0 + 0.4 + 0.2) / 4);
    EXPECT_EQ(loss::intensity_loss<double>(std::vector<double>(9, 0.7), 0.7), 0.0);
}

TEST(Intensity, RejectsOutOfRangeTarget) {
    const std::vector<double> z{0.5};
    EXPECT_THROW(loss::intensity_loss<double>(z, 1.5), std::invalid_argument);
    EXPECT_THROW(loss::intensity_loss<double>(z, -0.1), std::invalid_argument);
    EXPECT_THROW(loss::intensity_loss<double>(std::vector<double>{}, 0.5), std::invalid_argument);
}

TEST(SceneContent, GradientMatchesFiniteDifferencesWhenActive) {
    std::mt19937_64 rng(3);
    int checked = 0;
    for (int trial = 0; trial < 25; ++trial) {
        auto q = random_tensor(rng, 2, 3, 3), p = random_tensor(rng, 2, 3, 3), n = random_tensor(rng, 2, 3, 3);
        loss::SceneGrads<double> g;
        const double v = loss::scene_content_loss(q, p, n, 1.0, &g);
        if (!(v > 1e-3)) continue;  // keep away from the hinge kink
        ++checked;
        const auto f = [&] { return loss::scene_content_loss(q, p, n, 1.0); };
        for (std::size_t i = 0; i < q.size(); ++i) {
            EXPECT_TRUE(oracle::grad_close(g.query.data[i], oracle::central_difference(f, q.data[i], 1e-6)));
            EXPECT_TRUE(oracle::grad_close(g.positive.data[i], oracle::central_difference(f, p.data[i], 1e-6)));
            EXPECT_TRUE(oracle::grad_close(g.negative.data[i], oracle::central_difference(f, n.data[i], 1e-6)));
        }
    }
    EXPECT_GT(checked, 10);
}

TEST(SceneContent, InactiveHingeHasExactlyZeroGradient) {
    const auto q = filled(2, 2, 2, 0.0), p = filled(2, 2, 2, 0.1), n = filled(2, 2, 2, 3.0);
    loss::SceneGrads<double> g;
    EXPECT_EQ(loss::scene_content_loss(q, p, n, 1.0, &g), 0.0);
    for (const auto* t : {&g.query, &g.positive, &g.negative})
        for (double v : t->data) EXPECT_EQ(v, 0.0);
}

TEST(SceneContent, AlgebraicAnchors) {
    // d_p = d_n = 1 with margin 1 gives exactly 1.
    EXPECT_EQ(loss::scene_content_loss(filled(1, 2, 2, 0), filled(1, 2, 2, 1), filled(1, 2, 2, -1), 1.0), 1.0);
    // All-equal inputs give the margin.
    const auto a = filled(3, 2, 2, 0.4);
    EXPECT_EQ(loss::scene_content_loss(a, a, a, 1.0), 1.0);
    EXPECT_EQ(loss::scene_content_loss(a, a, a, 0.25), 0.25);
    // Negative far enough away satisfies the margin.
    EXPECT_EQ(loss::scene_content_loss(filled(1, 1, 1, 0), filled(1, 1, 1, 0), filled(1, 1, 1, 2), 1.0), 0.0);
}

TEST(SceneContent, RejectsMismatchAndBadMargin) {
    const auto a = filled(2, 2, 2, 0), b = filled(2, 2, 3, 0);
    EXPECT_THROW(loss::scene_content_loss(a, a, b), std::invalid_argument);
    EXPECT_THROW(loss::scene_content_loss(a, a, a, 0.0), std::invalid_argument);
    EXPECT_THROW(loss::scene_content_loss(a, a, a, -1.0), std::invalid_argument);
}

class TotalLossTest : public ::testing::Test {
protected:
    void SetUp() override {
        std::mt19937_64 rng(4);
        out = random_tensor(rng, 3, 4, 4, 0, 1);
        gt = random_tensor(rng, 3, 4, 4, 0, 1);
        for (auto* z : {&zq, &zp, &zn}) *z = random_tensor(rng, 4, 2, 2, 0, 1);
    }
    loss::LossBreakdown eval(const loss::LossTerms& terms, loss::TripletGrads<double>* g = nullptr) {
        return loss::total_loss<double>({&out, &zq, 0.3}, {nullptr, &zp, 0.7}, {nullptr, &zn, 0.3}, gt, terms, g);
    }
    Tensor<double> out, gt, zq, zp, zn;
};

TEST_F(TotalLossTest, BaselineHasNoAuxiliaryTerms) {
    loss::TripletGrads<double> g;
    const auto b = eval({false, false, 1.0}, &g);
    EXPECT_EQ(b.l_i, 0.0);
    EXPECT_EQ(b.l_s, 0.0);
    EXPECT_EQ(b.total, b.l_re);
    for (double v : g.latent_query.data) EXPECT_EQ(v, 0.0);
}

TEST_F(TotalLossTest, SumsTheActiveTerms) {
    const auto b = eval({true, true, 1.0});
    const double li = (loss::intensity_loss<double>(zq.channel_span(0), 0.3) +
                       loss::intensity_loss<double>(zp.channel_span(0), 0.7) +
                       loss::intensity_loss<double>(zn.channel_span(0), 0.3)) / 3;
    const auto zs = [](const Tensor<double>& z) { return mill::nn::slice_channels(z, 1, 3); };
    EXPECT_DOUBLE_EQ(b.l_i, li);
    EXPECT_DOUBLE_EQ(b.l_s, loss::scene_content_loss(zs(zq), zs(zp), zs(zn), 1.0));
    EXPECT_DOUBLE_EQ(b.l_re, loss::reconstruction_loss(out, gt));
    EXPECT_DOUBLE_EQ(b.total, b.l_re + b.l_i + b.l_s);
}

TEST_F(TotalLossTest, LatentGradientsMatchFiniteDifferences) {
    loss::TripletGrads<double> g;
    eval({true, true, 1.0}, &g);
    const auto f = [&] { return eval({true, true, 1.0}).total; };
    for (auto [z, gz] : {std::pair{&zq, &g.latent_query}, std::pair{&zp, &g.latent_positive},
                         std::pair{&zn, &g.latent_negative}})
        for (std::size_t i = 0; i < z->size(); ++i)
            EXPECT_TRUE(oracle::grad_close(gz->data[i], oracle::central_difference(f, z->data[i], 1e-7)));
}
