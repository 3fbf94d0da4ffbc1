#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mostnet/gradcheck.hpp"
#include "mostnet/losses.hpp"
#include "mostnet/memory.hpp"
#include "mostnet/networks.hpp"
#include "mostnet/style_injection.hpp"

namespace mostnet {

struct GradCheckCase {
    std::string name;
    GradCheckReport report;

    bool passed() const { return report.passed(); }
};

namespace gc_detail {

inline Tensor<double> randn(Shape shape, Rng& rng, double sd = 1.0) { return Tensor<double>::randn(std::move(shape), rng, sd); }

// Projects an output onto fixed random weights so every element contributes.
inline Tensor<double> probe(const Tensor<double>& y, std::uint64_t seed) {
    Rng rng(seed, 0x70726f6265ULL);
    return sum(mul(y, Tensor<double>::randn(y.shape(), rng, 1.0)));
}

inline NetworkConfig tiny_network() {
    NetworkConfig c;
    c.feature_channels = 8;
    c.encoder_width1 = 4;
    c.encoder_width2 = 6;
    c.encoder_blocks = 1;
    c.decoder_blocks = 1;
    c.si_blocks = 1;
    c.style_hidden = 6;
    c.disc_width = 4;
    return c;
}

inline std::vector<NamedTensor> named(const ParamList<double>& params) {
    std::vector<NamedTensor> out;
    for (const auto& [name, p] : params) out.emplace_back(name, p);
    return out;
}

}  // namespace gc_detail

// Finite-difference checks of every differentiable building block, in
// double precision. The tiny-generator case samples 48 elements per tensor.
inline std::vector<GradCheckCase> run_gradcheck_suite(std::uint64_t seed = 0, GradCheckOptions options = {}) {
    using gc_detail::probe;
    using gc_detail::randn;
    options.sample_seed = seed;
    std::vector<GradCheckCase> cases;
    Rng rng(seed, 0x7375697465ULL);
    auto run = [&](const std::string& name, const std::function<Tensor<double>()>& fn, std::vector<NamedTensor> inputs,
                   std::size_t sample = 0) {
        auto opts = options;
        if (opts.max_elements == 0) opts.max_elements = sample;
        cases.push_back({name, grad_check(fn, std::move(inputs), opts)});
    };

    {
        auto x = randn({3, 7, 6}, rng), w = randn({4, 3, 3, 3}, rng, 0.3), b = randn({4}, rng);
        run("conv2d 3x3 stride 1 pad 1", [=] { return probe(conv2d(x, w, b, {1, 1}), seed); },
            {{"input", x}, {"weight", w}, {"bias", b}});
    }
    {
        auto x = randn({2, 8, 8}, rng), w = randn({3, 2, 4, 4}, rng, 0.3), b = randn({3}, rng);
        run("conv2d 4x4 stride 2 pad 1", [=] { return probe(conv2d(x, w, b, {2, 1}), seed); },
            {{"input", x}, {"weight", w}, {"bias", b}});
    }
    {
        auto x = randn({4, 5, 5}, rng), w = randn({2, 4, 1, 1}, rng, 0.3);
        run("conv2d 1x1 without bias", [=] { return probe(conv2d(x, w, Tensor<double>{}, {1, 0}), seed); },
            {{"input", x}, {"weight", w}});
    }
    {
        auto x = randn({3, 6, 6}, rng);
        run("instance normalization", [=] { return probe(instance_normalize(x), seed); }, {{"input", x}});
    }
    {
        auto x = randn({2, 4, 6}, rng);
        run("nearest upsampling and average pooling",
            [=] { return probe(avg_pool2x2(upsample_nearest2x(tanh(x))), seed); }, {{"input", x}});
    }
    {
        auto a = randn({5, 4}, rng), b = randn({4, 3}, rng);
        run("softmax rows of a matrix product", [=] { return probe(softmax_rows(matmul(a, b)), seed); },
            {{"lhs", a}, {"rhs", b}});
    }
    {
        Rng init(seed, 11);
        auto si = SIModule<double>::make(4, 3, 5, init);
        auto content = randn({4, 6, 6}, rng), style = randn({3, 6, 6}, rng);
        auto inputs = gc_detail::named([&] {
            ParamList<double> p;
            si.collect(p, "si");
            return p;
        }());
        inputs.emplace_back("content", content);
        inputs.emplace_back("style", style);
        run("style injection module", [=] { return probe(si(content, style), seed); }, inputs);
    }
    {
        Rng init(seed, 12);
        auto block = SIResBlock<double>::make(4, 6, 3, 5, init);
        auto content = randn({4, 5, 5}, rng), style = randn({3, 5, 5}, rng);
        auto inputs = gc_detail::named([&] {
            ParamList<double> p;
            block.collect(p, "block");
            return p;
        }());
        inputs.emplace_back("content", content);
        inputs.emplace_back("style", style);
        run("style injection residual block", [=] { return probe(block(content, style), seed); }, inputs);
    }
    auto memory = init_memory<double>(12, 6, seed + 1, 1.0);
    {
        auto q = randn({9, 6}, rng);
        run("attentive read", [=] { return probe(attentive_read(memory, SlotSet<double>{q, 3, 3}).slots, seed); },
            {{"query slots", q}});
    }
    {
        auto real = Tensor<double>::uniform({1, 4, 4}, rng, 0.05, 0.95);
        auto fake = Tensor<double>::uniform({1, 4, 4}, rng, 0.05, 0.95);
        run("adversarial loss (discriminator)", [=] { return discriminator_loss(real, fake); },
            {{"real scores", real}, {"fake scores", fake}});
        run("adversarial loss (generator)", [=] { return generator_adversarial_loss(fake); }, {{"fake scores", fake}});
    }
    {
        auto fake = randn({1, 8, 8}, rng), real = randn({1, 8, 8}, rng);
        run("reconstruction loss", [=] { return reconstruction_loss(fake, real); }, {{"fake", fake}});
    }
    const auto extractor = PerceptualExtractor<double>::make();
    {
        auto fake = Tensor<double>::uniform({1, 16, 16}, rng, -1, 1);
        auto real = Tensor<double>::uniform({1, 16, 16}, rng, -1, 1);
        run("style loss", [=] { return style_loss(extractor, fake, real); }, {{"fake", fake}});
    }
    {
        auto fake = Tensor<double>::uniform({1, 16, 16}, rng, -1, 1);
        auto photo = Tensor<double>::uniform({3, 16, 16}, rng, -1, 1);
        run("content loss", [=] { return content_loss(extractor, photo, fake); }, {{"fake", fake}});
    }
    {
        auto photo = randn({9, 6}, rng), sketch = randn({9, 6}, rng);
        run("memory refinement loss (soft)",
            [=] {
                return mr_loss(SlotSet<double>{photo, 3, 3}, SlotSet<double>{sketch, 3, 3}, memory, AssignmentMode::soft,
                               0.1);
            },
            {{"photo slots", photo}, {"sketch slots", sketch}});
    }
    {
        // Frozen memory (alpha = 1) so the training path is a smooth function
        // of the parameters.
        const auto cfg = gc_detail::tiny_network();
        const auto generator = Generator<double>::make(cfg, seed + 2);
        const auto disc = Discriminator<double>::make(cfg, seed + 3);
        auto mem = init_memory<double>(16, cfg.feature_channels, seed + 4, 1.0);
        auto photo = Tensor<double>::uniform({3, 32, 32}, rng, -1, 1);
        auto sketch = Tensor<double>::uniform({1, 32, 32}, rng, -1, 1);
        auto inputs = gc_detail::named(generator.parameters());
        inputs.emplace_back("photo", photo);
        const auto weights = LossWeights{};
        run("generator objective (tiny network)",
            [=]() mutable {
                auto out = generator.forward_train(photo, sketch, mem);
                const auto& fake = out.fake.front();
                LossComponents<double> parts{
                    generator_adversarial_loss(disc(photo, fake)), reconstruction_loss(fake, sketch),
                    style_loss(extractor, fake, sketch), content_loss(extractor, photo, fake),
                    mr_loss(out.photo_slots.front(), out.sketch_slots.front(), mem, AssignmentMode::soft, 0.1)};
                return total_loss(parts, weights);
            },
            inputs, 48);
    }
    return cases;
}

}  // namespace mostnet
