#include <cmath>

#include <gtest/gtest.h>

#include "mostnet/gradcheck.hpp"
#include "mostnet/losses.hpp"

using namespace mostnet;

namespace {

// Second implementation path for the perceptual pyramid: nested loops over
// the raw weights, double accumulation.
std::vector<std::vector<double>> pyramid_oracle(const PerceptualExtractor<double>& ex, const Tensor<double>& img) {
    std::size_t c = 3, h = img.dim(1), w = img.dim(2);
    std::vector<double> x(3 * h * w);
    for (std::size_t ch = 0; ch < 3; ++ch)
        for (std::size_t i = 0; i < h * w; ++i) x[ch * h * w + i] = img[(img.dim(0) == 1 ? 0 : ch) * h * w + i];
    std::vector<std::vector<double>> levels;
    for (std::size_t l = 0; l < 4; ++l) {
        const auto& wt = ex.convs[l].weight;
        const auto& b = ex.convs[l].bias;
        const std::size_t co = wt.dim(0);
        std::vector<double> y(co * h * w);
        for (std::size_t o = 0; o < co; ++o)
            for (std::size_t yy = 0; yy < h; ++yy)
                for (std::size_t xx = 0; xx < w; ++xx) {
                    double acc = b[o];
                    for (std::size_t ci = 0; ci < c; ++ci)
                        for (int ky = 0; ky < 3; ++ky)
                            for (int kx = 0; kx < 3; ++kx) {
                                const long iy = static_cast<long>(yy) + ky - 1, ix = static_cast<long>(xx) + kx - 1;
                                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
                                acc += x[(ci * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)] *
                                       wt[((o * c + ci) * 3 + static_cast<std::size_t>(ky)) * 3 + static_cast<std::size_t>(kx)];
                            }
                    y[(o * h + yy) * w + xx] = std::max(acc, 0.0);
                }
        const std::size_t h2 = h / 2, w2 = w / 2;
        std::vector<double> p(co * h2 * w2);
        for (std::size_t o = 0; o < co; ++o)
            for (std::size_t yy = 0; yy < h2; ++yy)
                for (std::size_t xx = 0; xx < w2; ++xx)
                    p[(o * h2 + yy) * w2 + xx] = 0.25 * (y[(o * h + 2 * yy) * w + 2 * xx] + y[(o * h + 2 * yy) * w + 2 * xx + 1] +
                                                         y[(o * h + 2 * yy + 1) * w + 2 * xx] +
                                                         y[(o * h + 2 * yy + 1) * w + 2 * xx + 1]);
        levels.push_back(p);
        x = std::move(p);
        c = co;
        h = h2;
        w = w2;
    }
    return levels;
}

double mse(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s / static_cast<double>(a.size());
}

}  // namespace

TEST(Adversarial, HalfScoresGiveTwoLn2) {
    const auto half = Tensor<double>::full({1, 6, 6}, 0.5);
    EXPECT_NEAR(discriminator_loss(half, half).item(), 2.0 * std::log(2.0), 1e-12);
    EXPECT_NEAR(discriminator_loss(half, half).item(), 1.3863, 1e-4);
}

TEST(Adversarial, PerfectDiscriminatorNearZero) {
    const auto loss = discriminator_loss(Tensor<double>::full({1, 2, 2}, 1.0), Tensor<double>::full({1, 2, 2}, 0.0));
    EXPECT_GE(loss.item(), 0.0);
    EXPECT_LT(loss.item(), 1e-6);
}

TEST(Adversarial, GeneratorLossFallsAsFakeScoreRises) {
    double previous = INFINITY;
    for (double s = 0.0; s <= 1.0; s += 0.05) {
        const double l = generator_adversarial_loss(Tensor<double>::full({1, 2, 2}, s)).item();
        EXPECT_LT(l, previous);
        EXPECT_GE(l, 0.0);
        previous = l;
    }
}

TEST(Adversarial, LossesThroughDiscriminator) {
    NetworkConfig cfg;
    cfg.disc_width = 4;
    const auto d = Discriminator<double>::make(cfg, 1);
    Rng rng(1);
    const auto photo = Tensor<double>::uniform({3, 32, 32}, rng, -1, 1);
    const auto real = Tensor<double>::uniform({1, 32, 32}, rng, -1, 1);
    const auto fake = Tensor<double>::uniform({1, 32, 32}, rng, -1, 1);
    const auto l = adversarial_loss(d, photo, real, fake);
    EXPECT_DOUBLE_EQ(l.discriminator.item(), discriminator_loss(d(photo, real), d(photo, fake)).item());
    EXPECT_DOUBLE_EQ(l.generator.item(), generator_adversarial_loss(d(photo, fake)).item());
}

TEST(Reconstruction, Examples) {
    Rng rng(2);
    const auto x = Tensor<double>::randn({1, 4, 4}, rng);
    EXPECT_EQ(reconstruction_loss(x, x).item(), 0.0);
    EXPECT_EQ(reconstruction_loss(Tensor<double>::zeros({1, 4, 4}), Tensor<double>::full({1, 4, 4}, 1.0)).item(), 1.0);
    std::vector<double> half(16, 0.0);
    for (std::size_t i = 0; i < 8; ++i) half[i] = 0.5;
    EXPECT_DOUBLE_EQ(reconstruction_loss(Tensor<double>({1, 4, 4}, half), Tensor<double>::zeros({1, 4, 4})).item(), 0.25);
    EXPECT_THROW(reconstruction_loss(Tensor<double>::zeros({1, 4, 4}), Tensor<double>::zeros({1, 4, 5})), ShapeError);
}

TEST(Perceptual, LevelExtentsAndDeterminism) {
    const auto ex = PerceptualExtractor<float>::make();
    Rng rng(3);
    const auto img = Tensor<float>::uniform({3, 64, 64}, rng, -1, 1);
    for (std::size_t l = 1; l <= 4; ++l) {
        const auto f = perceptual_features(ex, img, l);
        EXPECT_EQ(f.dim(1), 64u >> l);
        EXPECT_EQ(f.dim(2), 64u >> l);
        const auto again = perceptual_features(PerceptualExtractor<float>::make(), img, l);
        EXPECT_TRUE(std::equal(f.data().begin(), f.data().end(), again.data().begin()));
    }
    EXPECT_THROW(perceptual_features(ex, img, 0), std::invalid_argument);
    EXPECT_THROW(perceptual_features(ex, img, 5), std::invalid_argument);
}

TEST(Perceptual, DistinctImagesDistinctFeatures) {
    const auto ex = PerceptualExtractor<float>::make();
    Rng rng(4);
    for (std::size_t l = 1; l <= 4; ++l) {
        const auto a = perceptual_features(ex, Tensor<float>::uniform({3, 32, 32}, rng, -1, 1), l);
        const auto b = perceptual_features(ex, Tensor<float>::uniform({3, 32, 32}, rng, -1, 1), l);
        double d = 0;
        for (std::size_t i = 0; i < a.numel(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
        EXPECT_GT(d, 0.0);
    }
}

TEST(Perceptual, OneChannelReplicated) {
    const auto ex = PerceptualExtractor<double>::make();
    Rng rng(5);
    const auto gray = Tensor<double>::uniform({1, 16, 16}, rng, -1, 1);
    const auto rgb = concat(std::vector<Tensor<double>>{gray, gray, gray});
    const auto a = ex.features(gray, 2), b = ex.features(rgb, 2);
    EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}

TEST(Perceptual, NotTrainable) {
    ParamList<float> p;
    PerceptualExtractor<float>::make().collect(p);
    EXPECT_EQ(p.size(), 8u);
    for (const auto& [name, t] : p) EXPECT_FALSE(t.requires_grad()) << name;
}

TEST(StyleLoss, MatchesIndependentRecomputation) {
    const auto ex = PerceptualExtractor<double>::make();
    Rng rng(6);
    const auto fake = Tensor<double>::uniform({1, 16, 16}, rng, -1, 1);
    const auto real = Tensor<double>::uniform({1, 16, 16}, rng, -1, 1);
    const auto pf = pyramid_oracle(ex, fake), pr = pyramid_oracle(ex, real);
    EXPECT_NEAR(style_loss(ex, fake, real).item(), mse(pr[0], pf[0]) + mse(pr[1], pf[1]), 1e-9);
    EXPECT_EQ(style_loss(ex, fake, fake).item(), 0.0);
    EXPECT_GE(style_loss(ex, fake, real).item(), 0.0);
    EXPECT_THROW(style_loss(ex, fake, Tensor<double>::zeros({1, 16, 32})), ShapeError);
}

TEST(StyleLoss, EightByEightHandSum) {
    const auto ex = PerceptualExtractor<double>::make();
    Rng rng(7);
    const auto fake = Tensor<double>::uniform({1, 8, 8}, rng, -1, 1);
    const auto real = Tensor<double>::uniform({1, 8, 8}, rng, -1, 1);
    const auto pf = pyramid_oracle(ex, fake), pr = pyramid_oracle(ex, real);
    EXPECT_NEAR(style_loss(ex, fake, real).item(), mse(pr[0], pf[0]) + mse(pr[1], pf[1]), 1e-9);
}

TEST(ContentLoss, MatchesIndependentRecomputation) {
    const auto ex = PerceptualExtractor<double>::make();
    Rng rng(8);
    const auto photo = Tensor<double>::uniform({3, 32, 32}, rng, -1, 1);
    const auto fake = Tensor<double>::uniform({1, 32, 32}, rng, -1, 1);
    const auto pp = pyramid_oracle(ex, photo), pf = pyramid_oracle(ex, fake);
    EXPECT_NEAR(content_loss(ex, photo, fake).item(), mse(pp[3], pf[3]), 1e-6);
    EXPECT_EQ(content_loss(ex, fake, fake).item(), 0.0);
    EXPECT_GE(content_loss(ex, photo, fake).item(), 0.0);
    EXPECT_THROW(content_loss(ex, photo, Tensor<double>::zeros({1, 16, 16})), ShapeError);
}

TEST(TotalLoss, WeightedSum) {
    const LossWeights w;
    EXPECT_EQ(w.adversarial, 1.0);
    EXPECT_EQ(w.reconstruction, 200.0);
    EXPECT_EQ(w.style, 40.0);
    EXPECT_EQ(w.content, 40.0);
    EXPECT_EQ(w.memory_refinement, 10.0);
    auto s = [](double v) { return Tensor<double>::scalar(v); };
    EXPECT_NEAR(total_loss(LossComponents<double>{s(1), s(0.1), s(0.01), s(0.01), s(0.02)}, w).item(), 22.0, 1e-12);
    EXPECT_EQ(total_loss(LossComponents<double>{s(0), s(0), s(0), s(0), s(0)}, w).item(), 0.0);
}

TEST(TotalLoss, LinearInEachComponent) {
    const LossWeights w;
    const std::array<double, 5> base{0.3, 0.2, 0.1, 0.4, 0.05};
    const std::array<double, 5> lambda{w.adversarial, w.reconstruction, w.style, w.content, w.memory_refinement};
    for (std::size_t k = 0; k < 5; ++k) {
        auto bumped = base;
        bumped[k] += 0.5;
        EXPECT_NEAR(total_loss_value(bumped, w) - total_loss_value(base, w), 0.5 * lambda[k], 1e-9);
    }
}

TEST(TotalLoss, GraphAndScalarAccumulationAgree) {
    const LossWeights w;
    const std::array<float, 5> c{0.731f, 0.0913f, 0.4417f, 2.531f, 0.0191f};
    auto s = [](float v) { return Tensor<float>::scalar(v); };
    EXPECT_EQ(total_loss(LossComponents<float>{s(c[0]), s(c[1]), s(c[2]), s(c[3]), s(c[4])}, w).item(), total_loss_value(c, w));
}

TEST(TotalLoss, RejectsNegativeWeight) {
    LossWeights w;
    w.style = -1.0;
    EXPECT_THROW(w.validate(), std::invalid_argument);
}

TEST(LossGradients, AllLossesPassGradCheckOnFake) {
    const auto ex = PerceptualExtractor<double>::make();
    Rng rng(9);
    auto fake = Tensor<double>::uniform({1, 16, 16}, rng, -1, 1);
    const auto real = Tensor<double>::uniform({1, 16, 16}, rng, -1, 1);
    const auto photo = Tensor<double>::uniform({3, 16, 16}, rng, -1, 1);
    auto scores = Tensor<double>::uniform({1, 3, 3}, rng, 0.1, 0.9);
    const std::vector<std::pair<std::string, std::function<Tensor<double>()>>> cases{
        {"reconstruction", [&] { return reconstruction_loss(fake, real); }},
        {"style", [&] { return style_loss(ex, fake, real); }},
        {"content", [&] { return content_loss(ex, photo, fake); }},
    };
    for (const auto& [name, fn] : cases) {
        const auto report = grad_check(fn, {{"fake", fake}});
        EXPECT_TRUE(report.passed()) << name << "\n" << report.summary();
    }
    const auto adv = grad_check([&] { return generator_adversarial_loss(scores); }, {{"scores", scores}});
    EXPECT_TRUE(adv.passed()) << adv.summary();
}
