#include <gtest/gtest.h>

#include "mostnet/gradcheck.hpp"
#include "mostnet/networks.hpp"

using namespace mostnet;

namespace {

NetworkConfig small_config() {
    NetworkConfig c;
    c.feature_channels = 8;
    c.encoder_width1 = 4;
    c.encoder_width2 = 6;
    c.encoder_blocks = 1;
    c.decoder_blocks = 1;
    c.si_blocks = 2;
    c.style_hidden = 6;
    c.disc_width = 4;
    return c;
}

bool same_values(const Tensor<float>& a, const Tensor<float>& b) {
    return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

}  // namespace

TEST(Encoders, DefaultGeometry) {
    const auto g = Generator<float>::make(NetworkConfig{}, 1);
    Rng rng(1);
    const auto photo = Tensor<float>::uniform({3, 64, 64}, rng, -1, 1);
    const auto sketch = Tensor<float>::uniform({1, 64, 64}, rng, -1, 1);
    EXPECT_EQ(g.photo_encode(photo).shape(), (Shape{64, 16, 16}));
    EXPECT_EQ(g.sketch_encode(sketch).shape(), (Shape{64, 16, 16}));
}

TEST(Encoders, SameStructureIndependentParameters) {
    const auto g = Generator<float>::make(NetworkConfig{}, 1);
    ParamList<float> pe, se;
    g.photo_encoder.collect(pe, "e");
    g.sketch_encoder.collect(se, "e");
    ASSERT_EQ(pe.size(), se.size());
    for (std::size_t i = 0; i < pe.size(); ++i) {
        EXPECT_EQ(pe[i].first, se[i].first);
        auto a = pe[i].second.shape(), b = se[i].second.shape();
        // The stem differs only in its input channel count (3 vs 1).
        if (pe[i].first == "e.stem.weight") {
            EXPECT_EQ(a[1], 3u);
            EXPECT_EQ(b[1], 1u);
            a[1] = b[1] = 0;
        }
        EXPECT_EQ(a, b) << pe[i].first;
        EXPECT_FALSE(pe[i].second.same_storage(se[i].second));
    }
}

TEST(Encoders, DistinctPhotosGiveDistinctFeatures) {
    const auto g = Generator<float>::make(small_config(), 2);
    Rng rng(2);
    const auto a = g.photo_encode(Tensor<float>::uniform({3, 16, 16}, rng, -1, 1));
    const auto b = g.photo_encode(Tensor<float>::uniform({3, 16, 16}, rng, -1, 1));
    EXPECT_FALSE(same_values(a, b));
}

TEST(Encoders, RejectIndivisibleExtents) {
    const auto g = Generator<float>::make(small_config(), 3);
    EXPECT_THROW(g.photo_encode(Tensor<float>::zeros({3, 18, 16})), ShapeError);
    EXPECT_THROW(g.photo_encode(Tensor<float>::zeros({1, 16, 16})), ShapeError);
}

TEST(Generator, TrainPathShapesRangeAndMemoryUpdate) {
    NetworkConfig cfg;
    const auto g = Generator<float>::make(cfg, 4);
    auto memory = init_memory<float>(512, 64, 4);
    const auto before = memory;
    Rng rng(4);
    const auto photo = Tensor<float>::uniform({3, 64, 64}, rng, -1, 1);
    const auto sketch = Tensor<float>::uniform({1, 64, 64}, rng, -1, 1);
    NoGradGuard no_grad;
    const auto out = g.forward_train(photo, sketch, memory);
    ASSERT_EQ(out.fake.size(), 1u);
    EXPECT_EQ(out.fake[0].shape(), (Shape{1, 64, 64}));
    for (float v : out.fake[0].data()) {
        EXPECT_GE(v, -1.0f);
        EXPECT_LE(v, 1.0f);
    }
    EXPECT_EQ(out.photo_features[0].shape(), out.sketch_features[0].shape());
    EXPECT_EQ(out.retrieved[0].shape(), (Shape{64, 16, 16}));
    EXPECT_FALSE(memory == before);
}

TEST(Generator, FrozenMemoryIsDeterministic) {
    const auto g = Generator<float>::make(small_config(), 5);
    auto memory = init_memory<float>(16, 8, 5, 1.0f);
    Rng rng(5);
    const auto photo = Tensor<float>::uniform({3, 16, 16}, rng, -1, 1);
    const auto sketch = Tensor<float>::uniform({1, 16, 16}, rng, -1, 1);
    NoGradGuard no_grad;
    const auto a = g.forward_train(photo, sketch, memory).fake[0];
    const auto b = g.forward_train(photo, sketch, memory).fake[0];
    EXPECT_TRUE(same_values(a, b));
}

TEST(Generator, InferenceLeavesMemoryAndIsPure) {
    const auto g = Generator<float>::make(small_config(), 6);
    const auto memory = init_memory<float>(16, 8, 6);
    const auto before = memory;
    Rng rng(6);
    const auto photo = Tensor<float>::uniform({3, 16, 16}, rng, -1, 1);
    NoGradGuard no_grad;
    const auto a = g.forward_infer(photo, memory);
    const auto b = g.forward_infer(photo, memory);
    EXPECT_EQ(memory, before);
    EXPECT_TRUE(same_values(a, b));
    EXPECT_EQ(a.shape(), (Shape{1, 16, 16}));
}

TEST(Generator, InferenceMatchesTrainPathWithoutUpdate) {
    // With alpha = 1 the training path reads the same memory inference reads.
    const auto g = Generator<float>::make(small_config(), 7);
    auto memory = init_memory<float>(16, 8, 7, 1.0f);
    Rng rng(7);
    const auto photo = Tensor<float>::uniform({3, 16, 16}, rng, -1, 1);
    const auto sketch = Tensor<float>::uniform({1, 16, 16}, rng, -1, 1);
    NoGradGuard no_grad;
    EXPECT_TRUE(same_values(g.forward_train(photo, sketch, memory).fake[0], g.forward_infer(photo, memory)));
}

TEST(Generator, RejectsMisalignedPair) {
    const auto g = Generator<float>::make(small_config(), 8);
    auto memory = init_memory<float>(16, 8, 8);
    EXPECT_THROW(g.forward_train(Tensor<float>::zeros({3, 16, 16}), Tensor<float>::zeros({1, 16, 20}), memory), ShapeError);
}

TEST(Generator, EndToEndL1GradCheckTiny) {
    auto cfg = small_config();
    cfg.si_blocks = 1;
    const auto g = Generator<double>::make(cfg, 9);
    auto memory = init_memory<double>(8, 8, 9, 1.0);
    Rng rng(9);
    const auto photo = Tensor<double>::uniform({3, 16, 16}, rng, -1, 1);
    const auto target = Tensor<double>::uniform({1, 16, 16}, rng, -1, 1);
    std::vector<NamedTensor> inputs;
    for (const auto& [name, p] : g.parameters())
        if (name.find("sketch_encoder") == std::string::npos) inputs.emplace_back(name, p);
    GradCheckOptions opts;
    opts.max_elements = 24;
    const auto report = grad_check(
        [&] { return mean(abs(sub(g.forward_train(photo, target, memory).fake[0], target))); }, inputs, opts);
    EXPECT_TRUE(report.passed()) << report.summary();
}

TEST(Discriminator, ScoreMapShapeAndRange) {
    const auto d = Discriminator<float>::make(NetworkConfig{}, 1);
    Rng rng(10);
    const auto photo = Tensor<float>::uniform({3, 64, 64}, rng, -1, 1);
    const auto s = discriminate(d, photo, Tensor<float>::uniform({1, 64, 64}, rng, -1, 1));
    EXPECT_EQ(s.shape(), (Shape{1, 6, 6}));
    for (float v : s.data()) {
        EXPECT_GT(v, 0.0f);
        EXPECT_LT(v, 1.0f);
    }
}

TEST(Discriminator, DependsOnSketch) {
    const auto d = Discriminator<float>::make(NetworkConfig{}, 2);
    Rng rng(11);
    const auto photo = Tensor<float>::uniform({3, 64, 64}, rng, -1, 1);
    const auto a = d(photo, Tensor<float>::uniform({1, 64, 64}, rng, -1, 1));
    const auto b = d(photo, Tensor<float>::uniform({1, 64, 64}, rng, -1, 1));
    EXPECT_FALSE(same_values(a, b));
}

TEST(Discriminator, RejectsMisalignedPair) {
    const auto d = Discriminator<float>::make(NetworkConfig{}, 3);
    EXPECT_THROW(d(Tensor<float>::zeros({3, 64, 64}), Tensor<float>::zeros({1, 32, 64})), ShapeError);
}

TEST(Discriminator, GradCheckWrtSketch) {
    auto cfg = small_config();
    const auto d = Discriminator<double>::make(cfg, 4);
    Rng rng(12);
    const auto photo = Tensor<double>::uniform({3, 32, 32}, rng, -1, 1);
    auto sketch = Tensor<double>::uniform({1, 32, 32}, rng, -1, 1);
    GradCheckOptions opts;
    opts.max_elements = 200;
    const auto report = grad_check([&] { return sum(d(photo, sketch)); }, {{"sketch", sketch}}, opts);
    EXPECT_TRUE(report.passed()) << report.summary();
}
